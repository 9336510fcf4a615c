import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gradcases import OP_CASES
from rcrank.diffcore import (
    Adam,
    Parameter,
    Tensor,
    adam_step,
    check_gradients,
    grad_check,
    load_checkpoint,
    nn,
    save_checkpoint,
)
from rcrank.diffcore import checkpoint
from rcrank.diffcore import tensor as T
from rcrank.errors import NumericalError, ParseError, ShapeError

finite = st.floats(-5, 5, allow_nan=False, width=64)


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradient_matches_finite_differences(name):
    for seed in range(3):
        fn, params = OP_CASES[name](np.random.default_rng([seed, 99]))
        assert grad_check(fn, params, fd_step=1e-3) < 1e-4, name


def test_sum_of_squares_gradient_is_exact():
    x = Parameter(np.array([1.0, 2.0, 3.0]))
    loss = T.tsum(x * x)
    loss.backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])
    assert grad_check(lambda: T.tsum(x * x), [x]) < 1e-8


def test_constant_function_has_zero_gradient():
    x = Parameter(np.array([0.5, -1.0]))
    fn = lambda: T.tsum(x * 0.0) + 3.0  # noqa: E731
    assert grad_check(fn, [x]) == 0.0
    fn().backward()
    np.testing.assert_array_equal(x.grad, 0.0)


def test_sampled_check_flags_a_missing_gradient():
    x = Parameter(np.array([1.0, 2.0]))
    broken = lambda: Tensor(np.array((x.data**2).sum()), requires_grad=True)  # noqa: E731
    res = check_gradients(broken, [x], per_param=1, rng=np.random.default_rng(0))
    assert res.checked == 1 and res.max_error > 0.5


def test_smooth_only_skips_probes_across_relu_boundary():
    x = Parameter(np.array([1e-4, 1.0]))
    fn = lambda: T.tsum(T.relu(x))  # noqa: E731
    plain = check_gradients(fn, [x], fd_step=1e-3)
    smooth = check_gradients(fn, [x], fd_step=1e-3, smooth_only=True)
    assert plain.max_error > 0.1
    assert smooth.skipped == 1 and smooth.max_error < 1e-12


def test_matmul_example():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    b = Tensor(np.array([[5.0, 6.0], [7.0, 8.0]]))
    np.testing.assert_array_equal(T.matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]])


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    with pytest.raises(ShapeError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_non_finite_result_is_a_hard_failure():
    with pytest.raises(NumericalError):
        T.div(Tensor(np.array([1.0])), Tensor(np.array([0.0])))
    with pytest.raises(NumericalError):
        T.exp(Tensor(np.array([1000.0])))


def test_finite_checks_can_be_suspended():
    with T.finite_checks(False):
        out = T.exp(Tensor(np.array([1000.0])))
    assert np.isinf(out.data[0])


def test_backward_accumulates_over_shared_subexpressions():
    x = Parameter(np.array([3.0]))
    y = x * x + x * 2.0
    T.tsum(y).backward()
    np.testing.assert_allclose(x.grad, [8.0])


def test_no_grad_builds_no_graph():
    x = Parameter(np.array([1.0]))
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_float32_graph_stays_float32():
    with T.default_dtype(np.float32):
        lin = nn.Linear(4, 3, np.random.default_rng(0))
        x = T.as_tensor(np.ones((2, 4)))
        y = T.tanh(lin(x)) * 2.0
    assert lin.weight.dtype == np.float32 and y.dtype == np.float32


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6), elements=finite),
       st.integers(-1, 0))
def test_softmax_rows_sum_to_one(x, axis):
    out = T.softmax(Tensor(x), axis=axis).data
    np.testing.assert_allclose(out.sum(axis=axis), 1.0, atol=1e-6)
    assert np.all(out >= 0)


def test_softmax_mask_zeroes_padded_keys():
    scores = Tensor(np.zeros((1, 3)))
    out = T.softmax(scores, mask=np.array([[0.0, 0.0, -1e9]])).data
    np.testing.assert_allclose(out, [[0.5, 0.5, 0.0]])


@given(hnp.arrays(np.float64, (4, 5), elements=finite), st.integers(0, 2**31))
def test_dropout_rate_zero_and_eval_are_identity(x, seed):
    a = Tensor(x)
    rng = np.random.default_rng(seed)
    assert T.dropout(a, 0.0, rng) is a
    assert T.dropout(a, 0.5, rng, training=False) is a


def test_dropout_uses_inverted_scaling():
    a = Tensor(np.ones((200, 200)))
    out = T.dropout(a, 0.25, np.random.default_rng(0)).data
    assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
    assert abs(out.mean() - 1.0) < 0.02


def test_adam_single_step_moves_by_learning_rate():
    w = Parameter(np.array([1.0]))
    w.grad = np.array([1.0])
    adam_step([w], lr=1e-3)
    bias_corrected = 1.0 - 1e-3 * 1.0 / (1.0 + 1e-8)
    assert w.data[0] == pytest.approx(bias_corrected, abs=1e-15)
    assert w.step == 1


def test_adam_zero_gradient_leaves_parameter_unchanged():
    w = Parameter(np.array([0.7, -0.2]))
    w.grad = np.zeros(2)
    adam_step([w])
    np.testing.assert_array_equal(w.data, [0.7, -0.2])


def test_adam_skips_parameters_without_gradient():
    w = Parameter(np.array([0.7]))
    Adam([w]).step()
    assert w.step == 0 and w.data[0] == 0.7


def _fit(seed):
    rng = np.random.default_rng(seed)
    layer = nn.MLP([3, 8, 1], rng)
    opt = Adam(layer.parameters(), lr=1e-2)
    x = np.random.default_rng(1).standard_normal((16, 3))
    y = x.sum(axis=1, keepdims=True)
    for _ in range(20):
        opt.zero_grad()
        d = layer(x) - y
        T.mean(d * d).backward()
        opt.step()
    return layer.state_dict()


def test_identical_runs_give_identical_weights():
    a, b = _fit(5), _fit(5)
    assert a.keys() == b.keys()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_layer_norm_normalizes_last_axis():
    x = Tensor(np.random.default_rng(0).normal(3.0, 2.0, size=(4, 16)))
    out = T.layer_norm(x, np.ones(16), np.zeros(16)).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=-1), 1.0, atol=1e-4)


def test_conv2d_matches_direct_correlation():
    rng = np.random.default_rng(3)
    x, w = rng.standard_normal((1, 2, 4, 5)), rng.standard_normal((3, 2, 2, 3))
    out = T.conv2d(Tensor(x), Tensor(w)).data
    ref = np.zeros((1, 3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref[0, o, i, j] = (x[0, :, i : i + 2, j : j + 3] * w[o]).sum()
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_attention_rejects_indivisible_heads():
    with pytest.raises(ShapeError):
        nn.MultiHeadAttention(10, 4, np.random.default_rng(0))


def test_module_state_dict_round_trip_and_strict_keys():
    rng = np.random.default_rng(0)
    a, b = nn.MLP([4, 5, 2], rng), nn.MLP([4, 5, 2], rng)
    b.load_state_dict(a.state_dict())
    for k, v in a.state_dict().items():
        np.testing.assert_array_equal(b.state_dict()[k], v)
    with pytest.raises(KeyError):
        b.load_state_dict({"nope": np.zeros(1)})


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "a/w": rng.standard_normal((3, 4)),
        "b": rng.standard_normal(5).astype(np.float32),
        "ids": np.arange(6, dtype=np.int64).reshape(2, 3),
    }
    path = tmp_path / "w.rck"
    save_checkpoint(path, tensors, {"note": "x"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    for k, v in tensors.items():
        assert loaded[k].dtype == v.dtype
        assert loaded[k].tobytes() == v.tobytes()
    save_checkpoint(tmp_path / "again.rck", loaded, meta)
    assert (tmp_path / "again.rck").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_foreign_bytes():
    with pytest.raises(ParseError):
        checkpoint.loads(b"nope" + bytes(20))
