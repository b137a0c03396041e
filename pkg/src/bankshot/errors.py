"""Exception hierarchy shared across the package."""


class BankshotError(Exception):
    """Base class for all domain errors raised by this package."""


class FormatError(BankshotError):
    """A file does not match the expected binary container layout."""


class ValidationError(BankshotError):
    """Structurally readable data violates a declared invariant."""


class IoError(BankshotError):
    """An underlying read/write operation failed."""


class SamplingError(BankshotError):
    """A task cannot be sampled from the available classes/samples."""


class ShapeError(BankshotError):
    """Tensor dimensions do not match the declared contract."""


class ContractError(BankshotError):
    """A numeric precondition (e.g. unit norm) was not met by the caller."""


class DegenerateFeatureError(BankshotError):
    """A feature vector has (near-)zero norm, so cosine geometry is undefined."""


class NumericsError(BankshotError):
    """Non-finite values appeared where finite math was required."""


class ConfigError(BankshotError):
    """An experiment configuration is internally inconsistent or incomplete."""
