class ItectError(Exception):
    """Base class for errors raised by this package."""


class DataError(ItectError):
    """Bad input data: malformed files, empty zoos, missing labels."""
