"""
Exception and warning types shared by the estimation services and the CLI
"""


class EstimationError(Exception):
    """Base class for failures of a fit (mapped to CLI exit code 4)"""


class RankDeficient(EstimationError):
    """Design matrix has numerical rank below its column count"""

    def __init__(self, rank, condition_number, columns=None, what="design"):
        self.rank = rank
        self.condition_number = condition_number
        self.columns = columns
        msg = f"{what} is rank deficient: rank {rank}"
        if columns is not None:
            msg += f" < {columns} columns"
        msg += f" (condition number {condition_number:.3g})"
        super().__init__(msg)


class NonFiniteInput(EstimationError):
    """NaN or infinite value in a design or target"""


class NonConvergence(EstimationError):
    """Iterative skedastic fit stopped before meeting its tolerance"""


class AllResidualsZero(EstimationError):
    """Every first-stage residual is zero, so no skedastic model can be fitted"""


class DegenerateInstrument(EstimationError):
    """Instrument has (numerically) no variation left after partialling out X"""


class SingularSigmaPhi(EstimationError):
    """A diagonal block of the first-step Hessian cannot be inverted"""


class SingularSigmaAlpha(EstimationError):
    """Second-step Gram matrix cannot be inverted"""


class DuplicateColumn(EstimationError):
    """A control-function term reproduces a column of the exogenous block"""


class TooManyFailures(EstimationError):
    """More than half of the bootstrap replicates failed"""

    def __init__(self, failed, total):
        self.failed = failed
        self.total = total
        super().__init__(f"{failed} of {total} bootstrap replicates failed")


class DataError(Exception):
    """Input data could not be read (mapped to CLI exit code 3)"""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


class ConfigError(Exception):
    """Invalid configuration or flags (mapped to CLI exit code 2)"""


class WeakInstrumentWarning(UserWarning):
    """First-stage F statistic below the rule-of-thumb threshold"""


class DegenerateScaleWarning(UserWarning):
    """Scale gradient evaluated where the fitted variance hit its floor"""


class IllConditionedWarning(UserWarning):
    """Design condition number above the warning threshold"""
