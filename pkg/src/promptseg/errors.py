"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class ContractError(ValueError):
    """Inputs violate a shape or interface contract."""


class InputError(ValueError):
    """Input data is malformed (non-finite, non-binary targets, ...)."""


class StateError(RuntimeError):
    """Operation not allowed in the object's current state."""


class GenerationError(RuntimeError):
    """Synthetic sample generation gave up after its retry budget."""


class DatasetError(RuntimeError):
    """Dataset directory listing is inconsistent."""


class FrozenViolation(RuntimeError):
    """A parameter group that must stay frozen was modified."""
