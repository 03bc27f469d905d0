"""Exception types shared across the pipeline."""


class InputError(ValueError):
    """Malformed or out-of-contract input data."""


class ConflictError(InputError):
    """A write collides with an existing record (e.g. duplicate label)."""


class StateError(RuntimeError):
    """Operation requires state that is not present (untrained model, missing artifact)."""
