"""Exception hierarchy.

Every error carries a short machine-readable ``code`` used by the CLI when
printing ``ERROR <code>: <message>``.
"""


class ManigapError(Exception):
    code = "error"


class InvalidArgument(ManigapError, ValueError):
    code = "invalid-argument"


class InvalidSpec(InvalidArgument):
    code = "invalid-spec"


class Unsupported(ManigapError, NotImplementedError):
    code = "unsupported"


class NumericError(ManigapError, ArithmeticError):
    code = "numeric-error"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ParseError(ManigapError, ValueError):
    code = "parse-error"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvalidMesh(ManigapError, ValueError):
    code = "invalid-mesh"


class ConfigError(ManigapError, ValueError):
    code = "invalid-config"

    def __init__(self, message, line=None, key=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.key = key


class IOFailure(ManigapError, OSError):
    code = "io-error"
