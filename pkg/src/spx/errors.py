"""Exception hierarchy shared by every spx module."""


class SpxError(Exception):
    """Base class for all spx errors."""


class InvalidArgument(SpxError, ValueError):
    """An argument is out of range or has inconsistent dimensions."""


class UnsupportedSize(InvalidArgument):
    pass


class ContractViolation(SpxError, ValueError):
    """An input breaks a documented precondition (e.g. non-binary library)."""


class InvalidNoiseModel(InvalidArgument):
    pass


class DegenerateReference(SpxError, ValueError):
    pass


class SingularSystem(SpxError, ArithmeticError):
    pass


class DegenerateSubspace(SpxError, ValueError):
    pass


class ResourceLimit(SpxError, MemoryError):
    pass


class InvalidDataset(SpxError, ValueError):
    pass


class SplitTooSmall(InvalidDataset):
    pass
