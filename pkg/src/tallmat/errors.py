"""Exception hierarchy shared by every engine layer."""


class EngineError(Exception):
    """Base class for all engine errors."""

    category = "engine"


class ShapeError(EngineError, ValueError):
    category = "shape"


class GeometryError(EngineError, ValueError):
    """A buffer does not match the partition geometry of a store."""

    category = "geometry"


class MemoryBudgetError(EngineError, MemoryError):
    category = "memory"


class StorageIOError(EngineError, OSError):
    category = "io"


class FormatError(EngineError, ValueError):
    category = "format"


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    def __init__(self, message, partition=None):
        super().__init__(message)
        self.partition = partition


class ParseError(FormatError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class RegistryError(EngineError, KeyError):
    category = "registry"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class LabelError(EngineError, ValueError):
    category = "label"


class KernelError(EngineError):
    """A kernel failed while materializing a DAG node."""

    category = "kernel"

    def __init__(self, message, node_id=None, rows=None):
        super().__init__(message)
        self.node_id = node_id
        self.rows = rows


class SizeCapError(EngineError, ValueError):
    category = "size_cap"


class ConvergenceError(EngineError, RuntimeError):
    category = "convergence"


class SingularMatrixError(EngineError, ArithmeticError):
    category = "singular"
