"""Exception hierarchy.

Input problems derive from ``InputError`` (CLI exit code 2); numerical
failures derive from ``NumericError`` (exit code 3).
"""


class BayesDecayError(Exception):
    pass


class InputError(BayesDecayError, ValueError):
    pass


class ModelBoundsError(InputError):
    """A model specification falls outside the lattice bounds."""


class GridMismatchError(InputError):
    pass


class NumericError(BayesDecayError, ArithmeticError):
    pass


class DomainError(NumericError):
    """An argument lies outside the domain of a density or basis function."""


class SingularBasisError(NumericError):
    """The Gram matrix has an eigenvalue below the relative threshold."""


class DegenerateFitError(NumericError):
    """The model reproduces the data exactly, so the sigma integral diverges."""


class OptimizerError(NumericError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
