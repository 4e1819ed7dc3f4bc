"""Error hierarchy: everything raised on purpose derives from ExportError."""


class ExportError(Exception):
    pass


class ConfigError(ExportError):
    pass


class InputError(ExportError):
    pass
