class NNError(Exception):
    """Base class for network-engine failures."""


class ShapeError(NNError, ValueError):
    def __init__(self, layer: str, expected, got):
        self.layer = layer
        self.expected = tuple(expected) if expected is not None else None
        self.got = tuple(got) if got is not None else None
        super().__init__(f"layer {layer!r}: expected shape {self.expected}, got {self.got}")


class NonFiniteError(NNError, FloatingPointError):
    def __init__(self, where: str):
        self.where = where
        super().__init__(f"non-finite values produced at {where!r}")


class MissingCacheError(NNError, RuntimeError):
    pass


class CheckpointError(NNError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class UnknownParameterError(CheckpointError, KeyError):
    pass
