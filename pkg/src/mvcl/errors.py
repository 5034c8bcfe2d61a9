"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to: 1 usage/config problems,
2 data problems, 3 contract or assertion failures.
"""


class MvclError(Exception):
    exit_code = 3


# -- data errors (exit 2) ---------------------------------------------------


class DataError(MvclError):
    exit_code = 2


class EmptyDocument(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class IntegrityError(DataError):
    pass


class FormatError(DataError):
    pass


class FixtureMiss(DataError):
    pass


class DegenerateDataset(DataError):
    pass


# -- usage / configuration errors (exit 1) ------------------------------------


class ConfigError(MvclError):
    exit_code = 1


class SizeGuard(ConfigError):
    pass


# -- contract failures (exit 3) -----------------------------------------------


class ContractError(MvclError):
    exit_code = 3


class ShapeError(ContractError):
    pass


class NonFiniteError(ContractError):
    pass
