"""Exception hierarchy shared by every subpackage."""


class RCRankError(Exception):
    """Base class. ``category`` is the machine-readable tag the CLI prints."""

    category = "error"


class InvalidInput(RCRankError, ValueError):
    category = "invalid_input"


class InvalidPlan(InvalidInput):
    category = "invalid_plan"


class MissingLogField(InvalidInput):
    category = "missing_log_field"

    def __init__(self, name):
        super().__init__(f"missing log field: {name}")
        self.name = name


class ParseError(InvalidInput):
    category = "parse_error"

    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(InvalidInput):
    category = "schema_error"


class InsufficientData(RCRankError):
    category = "insufficient_data"


class InvalidSpec(InvalidInput):
    category = "invalid_spec"


class DegenerateSpec(InvalidSpec):
    category = "degenerate_spec"


class InvalidConfig(InvalidInput):
    category = "invalid_config"


class InvalidState(RCRankError):
    category = "invalid_state"


class ShapeError(InvalidInput):
    category = "shape_error"


class NumericalError(RCRankError, ArithmeticError):
    category = "numerical_error"


class TrainingDiverged(NumericalError):
    category = "training_diverged"


class Unsupported(RCRankError):
    category = "unsupported"
