import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rcrank.diffcore import tensor as T
from rcrank.synthgen import GenConfig, generate_workload

settings.register_profile(
    "rcrank", max_examples=60, deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("rcrank")


@pytest.fixture(autouse=True)
def _float64_default():
    """Unit tests run in double precision; restore whatever was set afterwards."""
    prev = T.get_default_dtype()
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(prev)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_workload(GenConfig(total=300, labeled=120), seed=3)


class Tiny:
    """A d=8 configuration over the small dataset, cheap enough for unit tests."""

    def __init__(self, ds):
        from rcrank.encoders import EncoderConfig, build_vocabulary, collate, prepare_record

        self.ds = ds
        self.vocab = build_vocabulary(ds.records)
        self.cfg = EncoderConfig(d=8, vocab_size=len(self.vocab), sql_heads=2, plan_heads=2,
                                 log_hidden=(16, 8), kpi_channels=(2, 2), dropout=0.0)
        self.labeled = ds.labeled()
        self.prepared = [prepare_record(r, self.vocab, ds.norm, self.cfg) for r in self.labeled]
        self.batch = collate(self.prepared[:4])

    def model(self, variant="full", seed=0):
        from rcrank.model import RCRankModel

        return RCRankModel(self.cfg, self.ds.catalog, variant, seed=seed).eval()


@pytest.fixture(scope="session")
def tiny(small_dataset):
    return Tiny(small_dataset)


# acceptance verdicts, printed once at the end of the run

VERDICTS = {}


@pytest.fixture
def verdict():
    def record(number, ok, detail):
        VERDICTS[number] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        ok, detail = VERDICTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
