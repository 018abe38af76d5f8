"""Monte Carlo estimates of expected signatures from exactly simulated grid paths."""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .covariance import CovarianceModel, factorize_psd, gram_matrix, make_model
from .discrete_oracle import UniformGrid
from .errors import CapabilityError, DomainError, EsigError
from .tensor_words import TensorPolynomial, Word, signature_of_path
from .worker import map_tasks, sample_batch_task

logger = logging.getLogger(__name__)

MAX_LEVEL = 6
DEFAULT_BATCH = 2048


@dataclass
class PathSample:
    grid: UniformGrid
    values: np.ndarray
    seed: Tuple[int, ...] = ()


@lru_cache(maxsize=16)
def _cached_factor(kind: str, params: Tuple[Tuple[str, float], ...], grid: UniformGrid) -> np.ndarray:
    model = make_model(kind, dict(params))
    lower, perm, rank = factorize_psd(gram_matrix(model, grid.edges))
    factor = np.zeros((grid.cells + 1, rank))
    factor[perm] = lower[:, :rank]
    factor.setflags(write=False)
    logger.debug(f"Factorized {kind} covariance on {grid.cells + 1} grid times, rank {rank}")
    return factor


def path_factor(model: CovarianceModel, grid: UniformGrid) -> np.ndarray:
    """F with F F^T = R on the grid times (rows in time order)."""
    model.check_times(grid.s, grid.t)
    return _cached_factor(model.kind, tuple(sorted(model.params().items())), grid)


def draw_paths(factor: np.ndarray, n_paths: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """(n_paths, cells + 1, dim) paths with i.i.d. components, shifted to start at 0."""
    z = rng.standard_normal((n_paths, factor.shape[1], dim))
    paths = np.einsum("ir,nrd->nid", factor, z)
    return paths - paths[:, :1, :]


def batch_signatures(increments: np.ndarray, depth: int) -> List[np.ndarray]:
    """Truncated signatures of a batch of piecewise-linear paths; level k has shape (B, d^k)."""
    n_paths, _, dim = increments.shape
    levels = [np.ones((n_paths, 1))] + [np.zeros((n_paths, dim ** k)) for k in range(1, depth + 1)]
    for step in np.moveaxis(increments, 1, 0):
        seg = [np.ones((n_paths, 1))]
        for j in range(1, depth + 1):
            seg.append((seg[-1][:, :, None] * step[:, None, :]).reshape(n_paths, -1) / j)
        levels = [
            sum((levels[k - j][:, :, None] * seg[j][:, None, :]).reshape(n_paths, -1) for j in range(k + 1))
            for k in range(depth + 1)
        ]
    return levels


@dataclass
class McEstimate:
    mean: TensorPolynomial
    std_error: TensorPolynomial
    n_paths: int
    seed: int
    grid: UniformGrid

    def value(self, word: Word) -> float:
        return self.mean.coefficient(word)

    def se(self, word: Word) -> float:
        return self.std_error.coefficient(word)

    def to_json(self, min_level: int = 1) -> Dict[str, Any]:
        return {
            "grid": self.grid.to_json(),
            "level": self.mean.depth,
            "dim": self.mean.dim,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "word_values": self.mean.word_values(min_level),
            "std_errors": self.std_error.word_values(min_level),
        }


@dataclass
class SignatureAccumulator:
    """Streaming mean and sum of squared deviations per signature coefficient."""

    dim: int
    depth: int
    count: int = 0
    mean: List[np.ndarray] = field(default_factory=list)
    m2: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.mean:
            self.mean = [np.zeros(self.dim ** k) for k in range(self.depth + 1)]
            self.m2 = [np.zeros(self.dim ** k) for k in range(self.depth + 1)]

    def add(self, levels: Sequence[np.ndarray]) -> None:
        batch = SignatureAccumulator(
            self.dim, self.depth, int(levels[0].shape[0]),
            [lv.mean(axis=0) for lv in levels],
            [((lv - lv.mean(axis=0)) ** 2).sum(axis=0) for lv in levels])
        merged = self.merge(batch)
        self.count, self.mean, self.m2 = merged.count, merged.mean, merged.m2

    def merge(self, other: "SignatureAccumulator") -> "SignatureAccumulator":
        if (self.dim, self.depth) != (other.dim, other.depth):
            raise EsigError("Cannot merge accumulators of different shapes")
        if other.count == 0:
            return SignatureAccumulator(self.dim, self.depth, self.count, list(self.mean), list(self.m2))
        if self.count == 0:
            return SignatureAccumulator(other.dim, other.depth, other.count, list(other.mean), list(other.m2))
        n = self.count + other.count
        mean, m2 = [], []
        for ma, mb, sa, sb in zip(self.mean, other.mean, self.m2, other.m2):
            delta = mb - ma
            mean.append(ma + delta * other.count / n)
            m2.append(sa + sb + delta ** 2 * self.count * other.count / n)
        return SignatureAccumulator(self.dim, self.depth, n, mean, m2)

    def estimate(self, grid: UniformGrid, seed: int) -> McEstimate:
        if self.count < 2:
            raise DomainError(f"Need at least 2 paths for a standard error, got {self.count}")
        se = [np.sqrt(m2 / (self.count - 1) / self.count) for m2 in self.m2]
        return McEstimate(TensorPolynomial(self.dim, self.mean), TensorPolynomial(self.dim, se),
                          self.count, seed, grid)


def merge_pairwise(accumulators: Sequence[SignatureAccumulator]) -> SignatureAccumulator:
    """Tree reduction in a fixed order."""
    if not accumulators:
        raise EsigError("Nothing to merge")
    layer = list(accumulators)
    while len(layer) > 1:
        nxt = [layer[i].merge(layer[i + 1]) for i in range(0, len(layer) - 1, 2)]
        if len(layer) % 2:
            nxt.append(layer[-1])
        layer = nxt
    return layer[0]


def batch_plan(n_paths: int, seed: int, batch_size: int = DEFAULT_BATCH) -> List[Tuple[int, np.random.SeedSequence]]:
    """Fixed batch sizes with one spawned seed each; independent of the worker count."""
    if n_paths < 1:
        raise DomainError(f"n_paths must be positive, got {n_paths}")
    sizes = [batch_size] * (n_paths // batch_size)
    if n_paths % batch_size:
        sizes.append(n_paths % batch_size)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    return list(zip(sizes, seeds))


def accumulate_batch(model: CovarianceModel, grid: UniformGrid, depth: int, dim: int,
                     n_paths: int, seed_seq: np.random.SeedSequence) -> SignatureAccumulator:
    paths = draw_paths(path_factor(model, grid), n_paths, dim, np.random.default_rng(seed_seq))
    acc = SignatureAccumulator(dim, depth)
    acc.add(batch_signatures(np.diff(paths, axis=1), depth))
    return acc


def sample_paths(model: CovarianceModel, grid: UniformGrid, n_paths: int, seed: int,
                 dim: int = 2, batch_size: int = DEFAULT_BATCH) -> Iterator[PathSample]:
    """Stream of exact samples; path i of batch b carries the lineage (seed, b, i)."""
    factor = path_factor(model, grid)
    for b, (size, seed_seq) in enumerate(batch_plan(n_paths, seed, batch_size)):
        paths = draw_paths(factor, size, dim, np.random.default_rng(seed_seq))
        for i in range(size):
            yield PathSample(grid, paths[i], (seed, b, i))


def pathwise_signature(p: PathSample, N: int) -> TensorPolynomial:
    if N > MAX_LEVEL:
        raise CapabilityError(f"Pathwise signatures are supported up to level {MAX_LEVEL}, got {N}")
    return signature_of_path(p.values, N)


def estimate_expected_signature(model: CovarianceModel, grid: UniformGrid, N: int, n_paths: int,
                                seed: int, dim: int = 2, workers: int = 1,
                                batch_size: int = DEFAULT_BATCH,
                                progress: Optional[Callable[[int, int], None]] = None) -> McEstimate:
    """Mean and standard error of every coefficient up to level N, accumulated batch by batch."""
    if N > MAX_LEVEL:
        raise CapabilityError(f"Estimates are supported up to level {MAX_LEVEL}, got {N}")
    if n_paths < 2:
        raise DomainError(f"n_paths must be at least 2, got {n_paths}")
    path_factor(model, grid)
    plan = batch_plan(n_paths, seed, batch_size)
    logger.info(f"Sampling {n_paths} paths of {model!r} on {grid.cells} cells in {len(plan)} batches")
    tasks = [(model, grid, N, dim, size, seed_seq) for size, seed_seq in plan]
    results = map_tasks(sample_batch_task, tasks, workers, progress)
    accumulators = []
    for ok, msg, acc in results:
        if not ok:
            raise EsigError(f"Sampling failed: {msg}")
        accumulators.append(acc)
    return merge_pairwise(accumulators).estimate(grid, seed)
