class ConfigError(ValueError):
    """Invalid configuration: bad task spec, unknown key, violated invariant."""


class ContractError(ValueError):
    """A caller broke an operation's precondition (shapes, empty inputs)."""


class TrainingError(RuntimeError):
    """Training hit a non-finite loss or gradient."""
