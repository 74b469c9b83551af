"""Exception hierarchy shared by every module."""


class RegistrationError(Exception):
    pass


class DimensionError(RegistrationError, ValueError):
    """Shapes, axis counts or channel counts do not agree."""


class ValidationError(RegistrationError, ValueError):
    """A value violates a type invariant (non-finite, out of range...)."""


class EmptyRoiError(RegistrationError, ValueError):
    """An operation needs a mask with positive mass."""


class SizeError(RegistrationError, ValueError):
    pass


class DegeneratePrototypeError(RegistrationError, ValueError):
    pass


class DivergenceError(RegistrationError, RuntimeError):
    def __init__(self, message, field=None, report=None):
        super().__init__(message)
        self.field = field
        self.report = report


class PlacementError(RegistrationError, RuntimeError):
    pass


class IdError(RegistrationError, KeyError):
    pass


class EmptyInputError(RegistrationError, ValueError):
    pass


class FormatError(RegistrationError, ValueError):
    """Malformed grid file or manifest."""
