"""Exception hierarchy. The CLI maps these onto exit codes."""


class MMCLError(Exception):
    """Base class for data / contract failures (CLI exit code 2)."""


class ConfigError(MMCLError):
    pass


class SchemaError(MMCLError):
    pass


class ParseError(MMCLError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class DomainError(ParseError):
    pass


class DegenerateFeatureError(MMCLError):
    def __init__(self, feature: str):
        super().__init__(f"feature {feature!r} has zero variance over observed entries")
        self.feature = feature


class ImputationError(MMCLError):
    pass


class PreconditionError(MMCLError):
    pass


class ContractError(MMCLError):
    pass


class DegenerateBatchError(MMCLError):
    """Raised when a batch cannot produce a contrastive loss (e.g. single class)."""


class IntegrityError(MMCLError):
    pass


class CheckpointMismatchError(MMCLError):
    pass


class NumericError(Exception):
    """Non-finite values during optimisation or attribution (CLI exit code 3)."""


class UndefinedMetricError(MMCLError):
    pass
