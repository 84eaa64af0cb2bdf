"""Exception hierarchy shared across the pipeline.

Three broad categories map onto CLI exit codes: configuration problems
(exit 2), bad or inconsistent input data (exit 3), and numerical
failures inside a solver (exit 4).
"""


class AerotriError(Exception):
    exit_code = 1


class ConfigError(AerotriError):
    exit_code = 2


class DataError(AerotriError):
    exit_code = 3


class NumericalError(AerotriError):
    exit_code = 4
