"""Exception types shared across the toolkit.

The CLI maps these onto process exit codes: usage errors exit 2 (argparse),
FormatError and GridMismatchError exit 3, NumericalError exits 4.
"""


class GsvolError(Exception):
    """Base class for all toolkit errors."""


class FormatError(GsvolError):
    """A file could not be parsed or violates its declared format."""


class GridMismatchError(GsvolError):
    """Two volumes that must share a sampling grid do not."""


class StaleIndexError(GsvolError):
    """A brick index was built against a different field state."""


class NumericalError(GsvolError):
    """A numerical failure: non-finite loss, gradient tolerance breach, etc."""
