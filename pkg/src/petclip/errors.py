"""Exception types shared across the package.

Domain and validation problems derive from :class:`ValueError`; file-format
problems derive from :class:`OSError`. The command-line layer relies on this
split to pick exit codes (1 for domain errors, 2 for I/O errors).
"""

from __future__ import annotations


class GeometryError(ValueError):
    """Two grids that must share geometry do not, or a grid is unusable
    for the requested operation (e.g. oblique direction for resampling)."""


class EmptyMaskError(ValueError):
    """A mask that must contain at least one foreground voxel is empty."""


class MissingFingerprintError(ValueError):
    """A normalization scheme needs dataset statistics that were not
    provided, or the fingerprint lacks a fitted clipping bound."""


class PhantomSpecError(ValueError):
    """A phantom spec violates its invariants."""


class DatasetValidationError(ValueError):
    """One or more cases in a dataset directory are malformed.

    Attributes
    ----------
    problems : list of str
        One human-readable line per offending case or file.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__(
            "dataset validation failed:\n" + "\n".join(f"  - {p}" for p in self.problems)
        )


class NiftiError(OSError):
    """Base class for malformed or unreadable NIfTI-1 files."""


class BadMagicError(NiftiError):
    """The file does not carry a valid NIfTI-1 signature."""


class UnsupportedDatatypeError(NiftiError):
    """The header datatype code is outside the supported set."""


class TruncatedFileError(NiftiError):
    """The file ends before the declared header or voxel payload."""
