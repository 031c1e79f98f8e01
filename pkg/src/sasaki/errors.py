"""Exception hierarchy shared by all modules.

Every numeric failure derives from :class:`NumericError` so that the CLI can map
it onto exit code 3 with a machine-readable payload.
"""


class NumericError(ArithmeticError):
    """Base class for numeric failures (poles, cut locus, non-convergence)."""

    code = "numeric"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class PoleError(NumericError):
    code = "pole"


class UnsupportedModel(ValueError):
    code = "unsupported_model"


class VerticalAtZero(ValueError):
    code = "vertical_at_zero"


class NoConvergence(NumericError):
    code = "no_convergence"


class OracleBudgetExceeded(NumericError):
    code = "oracle_budget"


class DegenerateHorizontal(NumericError):
    code = "degenerate_horizontal"


class ConjugatePoint(NumericError):
    code = "conjugate_point"


class CutLocus(NumericError):
    code = "cut_locus"


class FitFailure(NumericError):
    code = "fit_failure"


class DegeneratePair(ValueError):
    code = "degenerate_pair"
