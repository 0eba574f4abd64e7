"""Shared exception types.

Errors carry enough context to locate the offending input: binary format
errors report a byte offset, geometry errors report frame and residue.
"""


class OrientmdError(Exception):
    """Base class for package-specific errors."""


class FormatError(OrientmdError):
    """Malformed binary or text input."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TopologyError(OrientmdError):
    """Atom/residue bookkeeping mismatch between frames, files or structures."""


class DegenerateGeometryError(OrientmdError):
    """Geometry for which the requested quantity has no well-defined answer."""

    def __init__(self, message, frame=None, residue=None):
        tags = []
        if frame is not None:
            tags.append(f"frame {frame}")
        if residue is not None:
            tags.append(f"residue {residue}")
        if tags:
            message = f"{message} ({', '.join(tags)})"
        super().__init__(message)
        self.frame = frame
        self.residue = residue


class DegenerateModelError(OrientmdError):
    """A fitted model does not have the rank or spread the caller requires."""
