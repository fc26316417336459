"""Exception hierarchy. Each class maps to one CLI exit code."""


class GeoAlignError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 2
    kind = "error"

    def to_dict(self) -> dict:
        return {"error": self.kind, "message": str(self)}


class GeometryError(GeoAlignError, ValueError):
    kind = "geometry"


class DataError(GeoAlignError, ValueError):
    kind = "data"


class AlignmentError(GeoAlignError, ValueError):
    """Alignment problem has no defined optimum (no breakpoints, zero variance)."""

    kind = "alignment"
    exit_code = 3


class RegionError(GeoAlignError, ValueError):
    kind = "region"


class SolverError(GeoAlignError, RuntimeError):
    """Iterative solver failed; ``residual`` holds the last relative residual."""

    kind = "solver"
    exit_code = 3

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["residual"] = self.residual
        return d


class RecoveryError(SolverError):
    kind = "camera_recovery"


class StageError(GeoAlignError):
    """Wraps an error raised inside one stage of a multi-stage pipeline."""

    kind = "stage"

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)

    def to_dict(self) -> dict:
        d = self.cause.to_dict() if isinstance(self.cause, GeoAlignError) else {"message": str(self.cause)}
        d["stage"] = self.stage
        return d
