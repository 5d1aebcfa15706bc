"""Exception hierarchy shared by every ringlab module."""


class RinglabError(Exception):
    """Base class for all ringlab errors."""


class InvalidArgument(RinglabError, ValueError):
    pass


class UnsupportedSize(InvalidArgument):
    """Grid dimension is not a power of two."""


class SingularityError(RinglabError, ArithmeticError):
    pass


class NumericalDivergence(RinglabError, ArithmeticError):
    """A solver produced a non-finite state."""


class InvalidState(RinglabError, RuntimeError):
    pass
