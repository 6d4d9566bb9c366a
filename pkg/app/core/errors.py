from typing import Optional


class SGCNError(Exception):
    """Base error: everything the CLI reports as a clean failure."""


class ConfigurationError(SGCNError):
    pass


class DataError(SGCNError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line_no: Optional[int] = None, path: Optional[str] = None):
        self.line_no = line_no
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line_no is not None:
            where += f":{line_no}"
        super().__init__(f"{where}: {message}" if where else message)


class IntegrityError(DataError):
    pass


class EmptyTableError(DataError):
    pass


class DimensionError(SGCNError):
    pass


class ContractError(SGCNError):
    pass


class NumericError(SGCNError):
    pass


class CheckpointError(SGCNError):
    pass
