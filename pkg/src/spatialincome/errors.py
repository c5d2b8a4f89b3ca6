"""Exception hierarchy. Every error can carry the failing stage and the
area/edge identifiers involved, which the CLI renders as a machine-readable line."""
from __future__ import annotations


class SpatialIncomeError(Exception):
    def __init__(self, message: str, *, stage: str | None = None, areas=None, edges=None, line: int | None = None):
        super().__init__(message)
        self.stage = stage
        self.areas = list(areas) if areas is not None else None
        self.edges = [tuple(e) for e in edges] if edges is not None else None
        self.line = line

    def to_dict(self) -> dict:
        out = {"error": type(self).__name__, "message": str(self)}
        for key in ("stage", "areas", "edges", "line"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out


class ValidationError(SpatialIncomeError, ValueError):
    pass


class ParseError(ValidationError):
    pass


class ParameterOverflowError(SpatialIncomeError, FloatingPointError):
    pass


class MomentConditionError(SpatialIncomeError, ValueError):
    pass


class DerivativeError(SpatialIncomeError, FloatingPointError):
    pass


class FactorizationError(SpatialIncomeError, ArithmeticError):
    pass
