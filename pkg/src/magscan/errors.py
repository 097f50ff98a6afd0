"""Exception hierarchy.

Every error raised on purpose by magscan derives from :class:`MagscanError`;
the CLI maps :class:`DataError` subclasses to exit code 2 and
:class:`SearchSpaceTooLarge` to exit code 3.
"""
from __future__ import annotations


class MagscanError(Exception):
    """Base class for all magscan errors."""


# -- model fitting ---------------------------------------------------------

class FitError(MagscanError):
    """A GLM fit could not produce a usable maximum."""


class RankDeficient(FitError):
    pass


class Separation(FitError):
    """Binomial (or Poisson) estimates diverge; the data are separable.

    ``log_likelihood`` holds the value reached when divergence was detected,
    which approximates the supremum of the likelihood.
    """

    def __init__(self, message: str, log_likelihood: float = float("nan")):
        super().__init__(message)
        self.log_likelihood = log_likelihood


class NoConvergence(FitError):
    pass


class NotNested(MagscanError, ValueError):
    pass


class NegativeStatistic(MagscanError, ValueError):
    pass


class EmptyCategory(MagscanError, ValueError):
    pass


# -- groupings and designs -------------------------------------------------

class GroupingError(MagscanError, ValueError):
    pass


class OrderOutOfRange(GroupingError):
    pass


class OverlappingMAGs(GroupingError):
    pass


class EmptyMAG(GroupingError):
    pass


class UnknownAllele(MagscanError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown allele"


class DegenerateDesign(MagscanError, ValueError):
    """The design matrix is not of full column rank.

    ``cause`` is one of ``"covariate-collinearity"``, ``"constant-indicator"``,
    ``"duplicate-indicators"`` or ``"linear-dependence"``; ``columns`` names
    the offending column labels.
    """

    def __init__(self, cause: str, columns: tuple[str, ...] = ()):
        self.cause = cause
        self.columns = tuple(columns)
        detail = f" ({', '.join(self.columns)})" if self.columns else ""
        super().__init__(f"degenerate design: {cause}{detail}")


# -- search ----------------------------------------------------------------

class SearchSpaceTooLarge(MagscanError):
    def __init__(self, count: int, cap: int):
        self.count = count
        self.cap = cap
        super().__init__(
            f"exhaustive search needs {count} fits, above the cap of {cap}; "
            "raise --search-cap or use --anneal"
        )


class AllDegenerate(MagscanError):
    def __init__(self, order: int):
        self.order = order
        super().__init__(f"no order-{order} grouping yields a fittable design")


# -- phylogenetic simulation -------------------------------------------------

class InvalidBranchPath(MagscanError, ValueError):
    pass


class TreeFormatError(MagscanError, ValueError):
    pass


# -- data input --------------------------------------------------------------

class DataError(MagscanError):
    """Problems with user-supplied data or configuration (CLI exit code 2)."""


class MalformedRow(DataError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class UnknownTraitLevel(DataError):
    def __init__(self, line: int, level: str):
        self.line = line
        self.level = level
        super().__init__(f"line {line}: trait level {level!r} is not declared")


class DuplicateId(DataError):
    def __init__(self, line: int, ident: str):
        self.line = line
        self.ident = ident
        super().__init__(f"line {line}: duplicate individual id {ident!r}")


class ConfigError(DataError):
    pass
