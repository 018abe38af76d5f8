from typing import Any, Dict, List, Optional


class EsigError(Exception):
    """Base class for every error raised by the library."""

    def details(self) -> Dict[str, Any]:
        return {}


class ModelParameterError(EsigError, ValueError):
    pass


class DomainError(EsigError, ValueError):
    pass


class DimensionMismatchError(EsigError, ValueError):
    pass


class CapabilityError(EsigError):
    pass


class QuadratureError(EsigError):
    """Raised when refinement stops before the requested tolerance is met.

    The best estimate and its error bound travel with the exception so callers
    can still report them.
    """

    def __init__(self, message: str, estimate: float, error_bound: float, diagram: Optional[Any] = None):
        super().__init__(message)
        self.estimate = estimate
        self.error_bound = error_bound
        self.diagram = diagram

    def details(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"estimate": self.estimate, "error_bound": self.error_bound}
        if self.diagram is not None:
            out["diagram"] = self.diagram.to_json()
        return out


class FactorizationError(EsigError):
    def __init__(self, message: str, pivot: int, value: float):
        super().__init__(message)
        self.pivot = pivot
        self.value = value

    def details(self) -> Dict[str, Any]:
        return {"pivot": self.pivot, "value": self.value}


class UnknownSuiteError(EsigError, KeyError):
    def __init__(self, name: str, available: List[str]):
        super().__init__(f"Unknown suite '{name}'. Available: {', '.join(available)}")
        self.name = name
        self.available = available

    def __str__(self) -> str:
        return str(self.args[0])

    def details(self) -> Dict[str, Any]:
        return {"available": self.available}


class ConfigError(EsigError, ValueError):
    """Malformed option value or unreadable configuration file."""

    def __init__(self, message: str, source: Optional[str] = None):
        super().__init__(message)
        self.source = source

    def details(self) -> Dict[str, Any]:
        return {"source": self.source} if self.source is not None else {}
