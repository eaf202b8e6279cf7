"""Exception types shared across the pipeline.

The CLI maps each class to a process exit code.
"""


class HDformerError(Exception):
    exit_code = 1


class ConfigError(HDformerError, ValueError):
    """One or more configuration constraints are violated."""

    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(HDformerError, ValueError):
    exit_code = 3


class NumericError(HDformerError, ArithmeticError):
    exit_code = 4


class DimensionError(HDformerError, ValueError):
    exit_code = 4
