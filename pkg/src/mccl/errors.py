"""Exception taxonomy shared across the package."""


class McclError(Exception):
    """Base class for all package errors."""


class DimensionError(McclError):
    """Tensor shapes violate an operation's contract."""


class ConfigError(McclError):
    """Invalid configuration value, unknown config key, or mismatched component wiring."""


class ContractError(McclError):
    """A data contract was violated (e.g. fake samples reaching a real-only trainer)."""


class CapabilityError(McclError):
    """A required capability is missing (e.g. a surrogate that exposes no gradients)."""


class DataError(McclError):
    """Corpus or manifest level problem; message carries the itemized causes."""


class MetricError(McclError):
    """A metric is undefined for the given records (empty input, single class)."""
