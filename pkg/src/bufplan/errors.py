"""Exception hierarchy shared by all bufplan modules.

Validation problems (bad input documents, bad configuration) derive from
:class:`ValidationError`; solver and model-size problems derive from
:class:`NumericalError`. The CLI maps the two families to exit codes 1 and 2.
"""


class BufplanError(Exception):
    """Base class. ``module`` names the subsystem that raised it."""

    module = "bufplan"


class ValidationError(BufplanError):
    module = "arch"


class ParseError(ValidationError):
    def __init__(self, msg, line=None, column=None):
        if line is not None:
            msg = f"{msg} (line {line}, column {column})"
        super().__init__(msg)
        self.line = line
        self.column = column


class SchemaError(ValidationError):
    pass


class UnknownIdError(ValidationError):
    def __init__(self, ref, context=""):
        super().__init__(f"unknown id {ref!r}" + (f" in {context}" if context else ""))
        self.ref = ref


class DuplicateIdError(ValidationError):
    def __init__(self, ref, kind="id"):
        super().__init__(f"duplicate {kind} {ref!r}")
        self.ref = ref


class ProbabilityError(ValidationError):
    pass


class DisconnectedError(ValidationError):
    pass


class UnreachableError(ValidationError):
    pass


class BudgetError(ValidationError):
    pass


class ConfigError(ValidationError):
    module = "config"


class NumericalError(BufplanError):
    module = "lp"


class ModelTooLargeError(NumericalError):
    module = "ctmdp"


class InfeasibleError(NumericalError):
    pass


class UnboundedError(NumericalError):
    pass


class IterationLimitError(NumericalError):
    pass


class SimulationError(ValidationError):
    module = "sim"
