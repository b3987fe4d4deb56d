"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class MagTFError(Exception):
    """Base class for toolkit errors."""

    exit_code = 1
    kind = "error"

    def record(self) -> dict:
        return {"error": self.kind, "message": str(self)}


class ConfigError(MagTFError):
    """Malformed configuration (unknown key, bad value)."""

    exit_code = 2
    kind = "parse"

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key

    def record(self) -> dict:
        rec = super().record()
        if self.key is not None:
            rec["key"] = self.key
        return rec


class DomainError(MagTFError, ValueError):
    """Input outside the domain of an operation."""

    exit_code = 3
    kind = "domain"


class UnsupportedInputError(DomainError):
    """Input the theory does not cover (e.g. N > Z)."""

    kind = "unsupported"


class GridMismatchError(DomainError):
    kind = "grid_mismatch"


class SingularTimeError(DomainError):
    kind = "singular_time"


class ConvergenceError(MagTFError, RuntimeError):
    """Iterative solver failed; carries the final residual."""

    exit_code = 4
    kind = "convergence"

    def __init__(self, message: str, residual: float = float("nan"), diagnostics: dict | None = None):
        super().__init__(message)
        self.residual = residual
        self.diagnostics = diagnostics or {}

    def record(self) -> dict:
        rec = super().record()
        rec["residual"] = self.residual
        if self.diagnostics:
            rec["diagnostics"] = self.diagnostics
        return rec
