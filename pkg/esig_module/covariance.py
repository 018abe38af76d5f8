"""Covariance models of centred Gaussian processes started at zero.

Each model implements its closed forms on the ordered region a <= b only;
the public methods reflect by symmetry. All evaluations accept scalars or
numpy arrays.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
from scipy.linalg import lapack

from .errors import DomainError, FactorizationError, ModelParameterError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

MODEL_KINDS = ("fbm", "bm", "bridge", "ou")


class CovarianceModel(ABC):
    kind: str = ""

    def __init__(self, horizon: float = 1.0):
        if not np.isfinite(horizon) or horizon <= 0:
            raise ModelParameterError(f"Horizon must be positive, got {horizon}")
        self.horizon = float(horizon)

    # ordered closed forms, a <= b

    @abstractmethod
    def _cov(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _d1(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Derivative in the smaller argument."""

    @abstractmethod
    def _d2(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Derivative in the larger argument."""

    @abstractmethod
    def _d12(self, a: np.ndarray, b: np.ndarray, gap: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _dvar(self, t: np.ndarray) -> np.ndarray:
        ...

    @property
    @abstractmethod
    def hoelder(self) -> float:
        ...

    @abstractmethod
    def params(self) -> Dict[str, float]:
        ...

    @property
    def max_time(self) -> float:
        return self.horizon

    @property
    def arcs_vanish(self) -> bool:
        return False

    @property
    def stationary_increments(self) -> bool:
        return False

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.kind, **self.params()}

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"

    def check_times(self, *times: ArrayLike) -> None:
        for t in times:
            arr = np.asarray(t, dtype=float)
            if np.any(arr < 0) or np.any(arr > self.max_time * (1 + 1e-12)):
                raise DomainError(f"Times must lie in [0, {self.max_time}] for {self.kind}")

    # public evaluations

    def R(self, s: ArrayLike, t: ArrayLike) -> ArrayLike:
        s_arr, t_arr = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
        out = self._cov(np.minimum(s_arr, t_arr), np.maximum(s_arr, t_arr))
        return float(out) if np.ndim(out) == 0 else out

    def var(self, t: ArrayLike) -> ArrayLike:
        return self.R(t, t)

    def dvar(self, t: ArrayLike) -> ArrayLike:
        out = self._dvar(np.asarray(t, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def d2R(self, s: ArrayLike, t: ArrayLike) -> ArrayLike:
        """Derivative of R(s, t) in t, off the diagonal."""
        s_arr, t_arr = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        if np.any(s_arr == t_arr):
            raise DomainError("d2R is only defined off the diagonal")
        out = np.where(s_arr < t_arr, self._d2(np.minimum(s_arr, t_arr), np.maximum(s_arr, t_arr)),
                       self._d1(np.minimum(s_arr, t_arr), np.maximum(s_arr, t_arr)))
        return float(out) if np.ndim(out) == 0 else out

    def d12R(self, s: ArrayLike, t: ArrayLike) -> ArrayLike:
        s_arr, t_arr = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        if np.any(s_arr == t_arr):
            raise DomainError("d12R is only defined off the diagonal")
        a, b = np.minimum(s_arr, t_arr), np.maximum(s_arr, t_arr)
        out = self._d12(a, b, b - a)
        return float(out) if np.ndim(out) == 0 else out

    def inc_cov(self, s: ArrayLike, t: ArrayLike, u: ArrayLike, v: ArrayLike) -> ArrayLike:
        """Covariance of the increments X_st and X_uv."""
        return self.R(t, v) + self.R(s, u) - self.R(t, u) - self.R(s, v)

    # integrand factors used by the quadrature engine; s < t and gap = t - s are trusted

    def arc_density(self, s: np.ndarray, t: np.ndarray, gap: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self._d12(s, t, gap), np.broadcast(s, t, gap).shape)

    def consecutive_density(self, anchor: np.ndarray, t: np.ndarray, gap: np.ndarray) -> np.ndarray:
        """1/2 R'(t) - d2R(anchor, t)."""
        return 0.5 * self._dvar(t) - self._d2(anchor, t)

    def upper_density(self, s: np.ndarray, t: np.ndarray, gap: np.ndarray) -> np.ndarray:
        """Derivative of R(s, t) in the larger argument t."""
        return np.broadcast_to(self._d2(s, t), np.broadcast(s, t, gap).shape)

    def lower_density(self, s: np.ndarray, t: np.ndarray, gap: np.ndarray) -> np.ndarray:
        """Derivative of R(s, t) in the smaller argument s."""
        return np.broadcast_to(self._d1(s, t), np.broadcast(s, t, gap).shape)

    def arc_density_from_gap(self, gap: np.ndarray) -> np.ndarray:
        raise DomainError(f"{self.kind} has no stationary-increment fast path")

    def consecutive_density_from_gap(self, gap: np.ndarray) -> np.ndarray:
        raise DomainError(f"{self.kind} has no stationary-increment fast path")


class FractionalBrownianMotion(CovarianceModel):
    kind = "fbm"

    def __init__(self, hurst: float, horizon: float = 1.0):
        super().__init__(horizon)
        if not 0.25 < hurst < 1.0:
            raise ModelParameterError(f"Hurst parameter must lie in (1/4, 1), got {hurst}")
        self.hurst = float(hurst)

    @property
    def hoelder(self) -> float:
        return self.hurst

    @property
    def arcs_vanish(self) -> bool:
        return self.hurst == 0.5

    @property
    def stationary_increments(self) -> bool:
        return True

    def params(self) -> Dict[str, float]:
        return {"hurst": self.hurst, "horizon": self.horizon}

    def _cov(self, a, b):
        h2 = 2 * self.hurst
        return 0.5 * (a ** h2 + b ** h2 - (b - a) ** h2)

    def _d1(self, a, b):
        h = self.hurst
        return h * a ** (2 * h - 1) + h * (b - a) ** (2 * h - 1)

    def _d2(self, a, b):
        h = self.hurst
        return h * b ** (2 * h - 1) - h * (b - a) ** (2 * h - 1)

    def _d12(self, a, b, gap):
        h = self.hurst
        if self.arcs_vanish:
            return np.zeros(np.shape(gap))
        return h * (2 * h - 1) * gap ** (2 * h - 2)

    def _dvar(self, t):
        h = self.hurst
        return 2 * h * t ** (2 * h - 1)

    def consecutive_density(self, anchor, t, gap):
        return self.consecutive_density_from_gap(gap)

    def upper_density(self, s, t, gap):
        h = self.hurst
        return h * t ** (2 * h - 1) - h * gap ** (2 * h - 1)

    def lower_density(self, s, t, gap):
        h = self.hurst
        return h * s ** (2 * h - 1) + h * gap ** (2 * h - 1)

    def arc_density_from_gap(self, gap):
        return self._d12(gap, gap, gap)

    def consecutive_density_from_gap(self, gap):
        h = self.hurst
        return h * gap ** (2 * h - 1)


class BrownianMotion(FractionalBrownianMotion):
    kind = "bm"

    def __init__(self, horizon: float = 1.0):
        super().__init__(0.5, horizon)

    def params(self) -> Dict[str, float]:
        return {"horizon": self.horizon}


class BrownianBridge(CovarianceModel):
    """Bridge returning to 0 at the horizon; evaluation stops eps before it."""

    kind = "bridge"

    def __init__(self, horizon: float = 1.0, eps: Optional[float] = None):
        super().__init__(horizon)
        self.eps = 1e-3 * self.horizon if eps is None else float(eps)
        if not 0 < self.eps < self.horizon:
            raise ModelParameterError(f"Bridge eps must lie in (0, T), got {self.eps}")

    @property
    def hoelder(self) -> float:
        return 0.5

    @property
    def max_time(self) -> float:
        return self.horizon - self.eps

    def params(self) -> Dict[str, float]:
        return {"horizon": self.horizon, "bridge_eps": self.eps}

    def _cov(self, a, b):
        return a * (1 - b / self.horizon)

    def _d1(self, a, b):
        return 1 - b / self.horizon + 0 * a

    def _d2(self, a, b):
        return -a / self.horizon + 0 * b

    def _d12(self, a, b, gap):
        return np.full(np.shape(gap), -1.0 / self.horizon)

    def _dvar(self, t):
        return 1 - 2 * t / self.horizon

    def consecutive_density(self, anchor, t, gap):
        return 0.5 - gap / self.horizon


class OrnsteinUhlenbeck(CovarianceModel):
    """dX = -theta X dt + sigma dW started at 0."""

    kind = "ou"

    def __init__(self, sigma: float = 1.0, theta: float = 1.0, horizon: float = 1.0):
        super().__init__(horizon)
        if sigma <= 0 or theta <= 0:
            raise ModelParameterError(f"OU needs sigma > 0 and theta > 0, got sigma={sigma}, theta={theta}")
        self.sigma = float(sigma)
        self.theta = float(theta)
        self._c = self.sigma ** 2 / (2 * self.theta)

    @property
    def hoelder(self) -> float:
        return 0.5

    def params(self) -> Dict[str, float]:
        return {"sigma": self.sigma, "theta": self.theta, "horizon": self.horizon}

    def _cov(self, a, b):
        th = self.theta
        return self._c * (np.exp(-th * (b - a)) - np.exp(-th * (a + b)))

    def _d1(self, a, b):
        th = self.theta
        return self._c * th * (np.exp(-th * (b - a)) + np.exp(-th * (a + b)))

    def _d2(self, a, b):
        th = self.theta
        return self._c * th * (np.exp(-th * (a + b)) - np.exp(-th * (b - a)))

    def _d12(self, a, b, gap):
        th = self.theta
        return -self._c * th ** 2 * (np.exp(-th * gap) + np.exp(-th * (a + b)))

    def _dvar(self, t):
        th = self.theta
        return 2 * self._c * th * np.exp(-2 * th * t)

    def consecutive_density(self, anchor, t, gap):
        th = self.theta
        return self._c * th * (np.exp(-2 * th * t) + np.exp(-th * gap) - np.exp(-th * (anchor + t)))


def make_model(kind: str, params: Optional[Mapping[str, Any]] = None) -> CovarianceModel:
    """Builds a model from a kind and a flat parameter mapping (CLI / JSON names)."""
    p = dict(params or {})
    horizon = float(p.get("horizon", 1.0))
    if kind == "fbm":
        if p.get("hurst") is None:
            raise ModelParameterError("fbm needs a Hurst parameter")
        return FractionalBrownianMotion(float(p["hurst"]), horizon)
    if kind == "bm":
        return BrownianMotion(horizon)
    if kind == "bridge":
        eps = p.get("bridge_eps")
        return BrownianBridge(horizon, None if eps is None else float(eps))
    if kind == "ou":
        return OrnsteinUhlenbeck(float(p.get("sigma", 1.0)), float(p.get("theta", 1.0)), horizon)
    raise ModelParameterError(f"Unknown model kind '{kind}'. Available: {', '.join(MODEL_KINDS)}")


def model_from_json(data: Mapping[str, Any]) -> CovarianceModel:
    params = {k: v for k, v in data.items() if k != "kind"}
    return make_model(str(data["kind"]), params)


def cluster_exponent(model: CovarianceModel) -> float:
    """Strength 4H - 2 of the worst arc cluster; integrable iff > -1."""
    return 4 * model.hoelder - 2


# Gram matrices


def gram_matrix(model: CovarianceModel, times: np.ndarray) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    return np.asarray(model.R(t[:, None], t[None, :]))


def increment_gram(model: CovarianceModel, edges: np.ndarray) -> np.ndarray:
    """G[i, j] = covariance of the increments over cells i and j."""
    rm = gram_matrix(model, edges)
    return rm[1:, 1:] + rm[:-1, :-1] - rm[1:, :-1] - rm[:-1, 1:]


def factorize_psd(matrix: np.ndarray, tol: float = 1e-10) -> Tuple[np.ndarray, np.ndarray, int]:
    """Pivoted Cholesky A[p][:, p] = L L^T of a positive semidefinite matrix.

    Returns (L, p, rank). Raises FactorizationError naming the first pivot of
    the remaining Schur complement that is negative beyond tolerance.
    """
    a = np.array(matrix, dtype=float)
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0)), np.zeros(0, dtype=int), 0
    if not np.allclose(a, a.T, rtol=0, atol=tol * max(1.0, float(np.max(np.abs(a))))):
        raise FactorizationError("Matrix is not symmetric", pivot=-1, value=float("nan"))
    scale = max(1.0, float(np.max(np.diag(a))))
    c, piv, rank, info = lapack.dpstrf(a, tol=tol * scale, lower=1)
    if info < 0:
        raise FactorizationError(f"dpstrf rejected argument {-info}", pivot=-1, value=float("nan"))
    perm = np.asarray(piv, dtype=int) - 1
    lower = np.tril(c)
    lower[:, rank:] = 0.0
    if rank < n:
        ap = a[np.ix_(perm, perm)]
        tail = lower[rank:, :rank]
        schur = np.diag(ap[rank:, rank:] - tail @ tail.T)
        worst = int(np.argmin(schur))
        if schur[worst] < -tol * scale:
            pivot = int(perm[rank + worst])
            raise FactorizationError(
                f"Matrix is not positive semidefinite: pivot {pivot} has value {schur[worst]:.3e}",
                pivot=pivot, value=float(schur[worst]))
    logger.debug(f"Pivoted factorization: n={n}, rank={rank}")
    return lower, perm, int(rank)


def is_psd(matrix: np.ndarray, tol: float = 1e-10) -> bool:
    try:
        factorize_psd(matrix, tol)
    except FactorizationError:
        return False
    return True


# regularity bounds


@dataclass
class BoundsReport:
    model: Dict[str, Any]
    n_samples: int
    arc: float
    consecutive: float
    dvar: float
    increment: float
    unbounded: Dict[str, bool] = field(default_factory=dict)
    gram_psd: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _ratios(model: CovarianceModel, s: np.ndarray, t: np.ndarray) -> Dict[str, np.ndarray]:
    h = model.hoelder
    gap = t - s
    return {
        "arc": np.abs(model.arc_density(s, t, gap)) * gap ** (2 - 2 * h),
        "consecutive": np.abs(model.consecutive_density(s, t, gap)) * gap ** (1 - 2 * h),
        "dvar": np.abs(model._dvar(t)) * t ** (1 - 2 * h),
        "increment": np.asarray(model.inc_cov(s, t, s, t)) * gap ** (-2 * h),
    }


def check_bounds(model: CovarianceModel, n_samples: int, seed: int = 0, scales: int = 6) -> BoundsReport:
    """Samples the regularity ratios and flags growth along dyadic scales."""
    if n_samples < 1:
        raise DomainError(f"n_samples must be at least 1, got {n_samples}")
    rng = np.random.default_rng(seed)
    top = model.max_time
    pts = np.sort(rng.uniform(0.0, top, size=(n_samples, 2)), axis=1)
    pts = pts[pts[:, 1] > pts[:, 0]]
    ratios = _ratios(model, pts[:, 0], pts[:, 1])

    s0 = 0.25 * top
    gaps = 0.5 * (top - s0) / 2.0 ** np.arange(scales + 1)
    along = _ratios(model, np.full_like(gaps, s0), s0 + gaps)
    # R'(t) t^(1-2H) is a one-point bound: follow t itself down the scales
    along["dvar"] = np.abs(model._dvar(gaps)) * gaps ** (1 - 2 * model.hoelder)
    unbounded = {}
    for name, seq in along.items():
        seq = np.abs(seq)
        unbounded[name] = bool(np.all(seq[:-1] > 0) and np.all(seq[1:] >= 2 * seq[:-1]))

    grid = np.linspace(0.0, top, 65)[1:]
    report = BoundsReport(
        model=model.describe(),
        n_samples=int(pts.shape[0]),
        arc=float(np.max(ratios["arc"])) if pts.size else 0.0,
        consecutive=float(np.max(ratios["consecutive"])) if pts.size else 0.0,
        dvar=float(np.max(ratios["dvar"])) if pts.size else 0.0,
        increment=float(np.max(ratios["increment"])) if pts.size else 0.0,
        unbounded=unbounded,
        gram_psd=is_psd(gram_matrix(model, grid)),
    )
    logger.info(f"Bounds for {model!r}: arc={report.arc:.4g}, consecutive={report.consecutive:.4g}, "
                f"dvar={report.dvar:.4g}, increment={report.increment:.4g}")
    return report
