"""Exception types raised across the package."""


class PulseCompileError(Exception):
    pass


class NotHermitian(PulseCompileError, ValueError):
    pass


class DimensionMismatch(PulseCompileError, ValueError):
    pass


class ShapeMismatch(PulseCompileError, ValueError):
    pass


class NegativeDuration(PulseCompileError, ValueError):
    pass


class UnknownChannel(PulseCompileError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown channel"


class EmptyInput(PulseCompileError, ValueError):
    pass


class TooShort(PulseCompileError, ValueError):
    pass


class ConfigError(PulseCompileError, ValueError):
    pass
