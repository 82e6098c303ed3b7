"""Exception taxonomy.

Input/validation problems raise ``ValueError`` subclasses; numerical
failures that can occur on admissible-looking inputs raise
``ArithmeticError`` subclasses so callers (and the CLI exit codes) can
tell user error from model pathology.
"""


class LastPassageError(Exception):
    """Base class for all package errors."""


class TransienceError(LastPassageError, ValueError):
    """Model parameters describe a process that does not drift to infinity."""


class InvalidModelError(LastPassageError, ValueError):
    """A supplied model violates a structural requirement."""


class ExpressionError(LastPassageError, ValueError):
    """A coefficient expression string could not be parsed or evaluated."""


class IntegrabilityError(LastPassageError, ArithmeticError):
    """An integral required to be finite did not converge under refinement."""


class NoRootError(LastPassageError, ArithmeticError):
    """The running cost never becomes positive; its root bracket blew up."""


class DivergenceError(LastPassageError, ArithmeticError):
    """The boundary equation shows no sign change within the search guard."""


class SimulationFault(LastPassageError, RuntimeError):
    """A simulated path produced a non-finite state."""
