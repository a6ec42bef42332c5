class ConfigError(ValueError):
    """Invalid run configuration.

    `key_path` is the dotted path of the offending key (e.g. `"optics.kernel_size"`), empty for
    document-level problems.
    """

    def __init__(self, key_path: str, reason: str) -> None:
        self.key_path = key_path
        self.reason = reason
        super().__init__(f"{key_path}: {reason}" if key_path else reason)


class DataError(ValueError):
    """Unreadable, corrupt or mismatched input data (images, tensor dumps, directories)."""
