"""Exception hierarchy shared by all modules.

`InputError` covers invalid arguments and malformed files; `NumericalError`
covers failures of a computation on otherwise valid input.  The CLI maps
them to exit codes 2 and 3.
"""


class PolsynthError(Exception):
    pass


class InputError(PolsynthError, ValueError):
    pass


class NumericalError(PolsynthError, RuntimeError):
    pass
