"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An input shape violates a layer contract; names the layer and axis."""


class ContractError(ValueError):
    """A caller violated an operation precondition."""


class DataError(ValueError):
    """A corpus file, manifest record, or binary blob is malformed."""


class NanLossError(ArithmeticError):
    """A training loss became non-finite; the step was aborted."""
