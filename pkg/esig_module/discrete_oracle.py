"""Exact piecewise-linear quantities on a uniform grid.

The signature of the linear interpolation on cells k_1 <= ... <= k_n is
sum prod_runs 1/r! prod_i dX_{k_i}; taking expectations turns every pair into
an entry of the increment Gram matrix G. The simplex volume rho^r/r! of an
equal-cell run cancels against the rho^-1 of each derivative factor, so
diagram sums carry only the 1/r! run weights.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .covariance import CovarianceModel, factorize_psd, increment_gram
from .diagrams import Diagram, enumerate_pairings, index_compatible
from .errors import CapabilityError, DimensionMismatchError, DomainError
from .tensor_words import TensorPolynomial, Word, signature_of_path

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 10 ** 8
CHUNK_ROWS = 1 << 21


@dataclass(frozen=True)
class UniformGrid:
    s: float
    t: float
    cells: int

    def __post_init__(self) -> None:
        if self.cells < 1:
            raise DomainError(f"A grid needs at least one cell, got {self.cells}")
        if self.t < self.s:
            raise DomainError(f"Grid interval must satisfy s <= t, got [{self.s}, {self.t}]")

    @property
    def rho(self) -> float:
        return (self.t - self.s) / self.cells

    @property
    def edges(self) -> np.ndarray:
        return self.s + self.rho * np.arange(self.cells + 1)

    def cell_of(self, u: float) -> Optional[int]:
        """Index of the cell holding u strictly inside; None outside [s, t)."""
        if not self.s <= u < self.t:
            return None
        pos = (u - self.s) / self.rho
        k = int(math.floor(pos))
        if math.isclose(pos, round(pos), rel_tol=0.0, abs_tol=1e-12):
            raise DomainError(f"Free time {u} lies on a cell boundary")
        return min(k, self.cells - 1)

    def to_json(self) -> Dict[str, Any]:
        return {"s": self.s, "t": self.t, "cells": self.cells}


@dataclass(frozen=True)
class IncrementGram:
    matrix: np.ndarray

    @classmethod
    def from_model(cls, model: CovarianceModel, grid: UniformGrid) -> "IncrementGram":
        model.check_times(grid.s, grid.t)
        g = increment_gram(model, grid.edges)
        g = 0.5 * (g + g.T)
        g.setflags(write=False)
        return cls(g)

    @property
    def size(self) -> int:
        return int(self.matrix.shape[0])

    def factor(self, tol: float = 1e-10) -> Tuple[np.ndarray, np.ndarray, int]:
        return factorize_psd(self.matrix, tol)


@lru_cache(maxsize=None)
def _pairings_of(n: int) -> Tuple[Tuple[Tuple[int, int], ...], ...]:
    return tuple(P.pairs for P in enumerate_pairings(n, 0))


def wick_moment(G: np.ndarray) -> float:
    """E[Z_1 ... Z_n] for centred Gaussians with covariance G: sum over full pairings."""
    g = np.asarray(G, dtype=float)
    n = g.shape[0]
    if n % 2:
        return 0.0

    @lru_cache(maxsize=None)
    def _hafnian(mask: int) -> float:
        if mask == 0:
            return 1.0
        first = (mask & -mask).bit_length() - 1
        rest = mask & ~(1 << first)
        total = 0.0
        other = rest
        while other:
            j = (other & -other).bit_length() - 1
            other &= other - 1
            if g[first, j] != 0.0:
                total += g[first, j] * _hafnian(rest & ~(1 << j))
        return total

    return _hafnian((1 << n) - 1)


def _nondecreasing(lo: int, hi: int, r: int) -> np.ndarray:
    """All weakly increasing r-tuples with entries in [lo, hi]."""
    if r == 0:
        return np.zeros((1, 0), dtype=np.int64)
    if hi < lo:
        return np.zeros((0, r), dtype=np.int64)
    if r == 1:
        return np.arange(lo, hi + 1, dtype=np.int64)[:, None]
    if r == 2:
        i, j = np.triu_indices(hi - lo + 1)
        return np.stack([i, j], axis=1).astype(np.int64) + lo
    parts = []
    for a in range(lo, hi + 1):
        tail = _nondecreasing(a, hi, r - 1)
        parts.append(np.hstack([np.full((tail.shape[0], 1), a, dtype=np.int64), tail]))
    return np.vstack(parts)


def _product_rows(blocks: Sequence[np.ndarray]) -> np.ndarray:
    sizes = [b.shape[0] for b in blocks]
    idx = np.indices(sizes).reshape(len(sizes), -1)
    return np.hstack([b[i] for b, i in zip(blocks, idx)])


def _blocks(n: int, cells: int, forced: Dict[int, int]) -> Optional[List[Tuple[List[int], int, int]]]:
    anchors = [(0, 0)] + sorted(forced.items()) + [(n + 1, cells - 1)]
    if any(a[1] > b[1] for a, b in zip(anchors, anchors[1:])):
        return None
    blocks = []
    for (pa, ca), (pb, cb) in zip(anchors, anchors[1:]):
        positions = list(range(pa + 1, pb))
        if positions:
            blocks.append((positions, ca, cb))
    return blocks


def assignment_count(n: int, cells: int, forced: Optional[Dict[int, int]] = None) -> int:
    blocks = _blocks(n, cells, forced or {})
    if blocks is None:
        return 0
    return math.prod(math.comb(hi - lo + len(pos), len(pos)) for pos, lo, hi in blocks)


def _assignments(n: int, cells: int, forced: Dict[int, int]) -> Iterator[np.ndarray]:
    """Weakly increasing cell assignments of positions 1..n, forced positions fixed, in chunks."""
    blocks = _blocks(n, cells, forced)
    if blocks is None:
        return
    base = np.zeros(n, dtype=np.int64)
    for p, c in forced.items():
        base[p - 1] = c
    if not blocks:
        yield base[None, :]
        return
    (head_pos, head_lo, head_hi), rest = blocks[0], blocks[1:]
    rest_rows = [_nondecreasing(lo, hi, len(pos)) for pos, lo, hi in rest]
    rest_cols = [p - 1 for pos, _, _ in rest for p in pos]
    # chunk on the first free cell of the leading block
    for a in range(head_lo, head_hi + 1):
        tail = _nondecreasing(a, head_hi, len(head_pos) - 1)
        head = np.hstack([np.full((tail.shape[0], 1), a, dtype=np.int64), tail])
        rows = _product_rows([head] + rest_rows)
        for start in range(0, rows.shape[0], CHUNK_ROWS):
            chunk = rows[start:start + CHUNK_ROWS]
            out = np.broadcast_to(base, (chunk.shape[0], n)).copy()
            out[:, [p - 1 for p in head_pos] + rest_cols] = chunk
            yield out


def run_weights(assign: np.ndarray) -> np.ndarray:
    """prod over runs of equal cells of 1/r!."""
    rows, n = assign.shape
    weight = np.ones(rows)
    run = np.ones(rows)
    for i in range(1, n):
        run = np.where(assign[:, i] == assign[:, i - 1], run + 1.0, 1.0)
        weight /= run
    return weight


def _diagram_sums(n: int, G: np.ndarray, forced: Dict[int, int],
                  pairings: Sequence[Tuple[Tuple[int, int], ...]], budget: int) -> np.ndarray:
    count = assignment_count(n, G.shape[0], forced)
    if count > budget:
        raise CapabilityError(f"{count} cell assignments exceed the oracle budget of {budget}")
    totals = np.zeros(len(pairings))
    for assign in _assignments(n, G.shape[0], forced):
        weight = run_weights(assign)
        for k, pairs in enumerate(pairings):
            term = weight
            for i, j in pairs:
                term = term * G[assign[:, i - 1], assign[:, j - 1]]
            totals[k] += float(np.sum(term))
    return totals


def _forced_cells(diagram: Diagram, grid: UniformGrid, free_times: Sequence[float]) -> Optional[Dict[int, int]]:
    if len(free_times) != diagram.m:
        raise DimensionMismatchError(f"Diagram {diagram.label} needs {diagram.m} free times, got {len(free_times)}")
    forced = {}
    for p, u in zip(diagram.singles, free_times):
        cell = grid.cell_of(float(u))
        if cell is None:
            return None
        forced[p] = cell
    return forced


def pl_diagram_value(P: Diagram, model: CovarianceModel, grid: UniformGrid,
                     free_times: Sequence[float] = (), budget: int = DEFAULT_BUDGET) -> float:
    """Discretised diagram integral at the free times (a scalar when P has no singles)."""
    forced = _forced_cells(P, grid, free_times)
    if forced is None:
        return 0.0
    G = IncrementGram.from_model(model, grid).matrix
    return float(_diagram_sums(P.n, G, forced, [P.pairs], budget)[0])


def pl_level_terms(model: CovarianceModel, grid: UniformGrid, n: int,
                   budget: int = DEFAULT_BUDGET) -> List[Tuple[Diagram, float]]:
    """(diagram, discrete value) for every full pairing at level n, sharing one assignment pass."""
    diagrams = enumerate_pairings(n, 0)
    if not diagrams:
        return []
    G = IncrementGram.from_model(model, grid).matrix
    totals = _diagram_sums(n, G, {}, [P.pairs for P in diagrams], budget)
    return list(zip(diagrams, (float(v) for v in totals)))


def pl_expected_signature(model: CovarianceModel, grid: UniformGrid, word: Word,
                          budget: int = DEFAULT_BUDGET) -> float:
    """Exact E S(X^l)^word over the grid interval."""
    n = len(word)
    if n % 2:
        return 0.0
    if n == 0:
        return 1.0
    pairings = [P.pairs for P in enumerate_pairings(n, 0) if index_compatible(P, word)]
    if not pairings:
        return 0.0
    G = IncrementGram.from_model(model, grid).matrix
    value = float(np.sum(_diagram_sums(n, G, {}, pairings, budget)))
    logger.debug(f"Oracle E S^{word.key} on {grid.cells} cells = {value:.12g}")
    return value


def pl_expected_signature_wick(model: CovarianceModel, grid: UniformGrid, word: Word,
                               budget: int = DEFAULT_BUDGET) -> float:
    """Same value as pl_expected_signature, one Wick moment per cell assignment."""
    n = len(word)
    if n == 0:
        return 1.0
    if n % 2:
        return 0.0
    G = IncrementGram.from_model(model, grid).matrix
    count = assignment_count(n, G.shape[0])
    if count > budget:
        raise CapabilityError(f"{count} cell assignments exceed the oracle budget of {budget}")
    letters = np.asarray(word.letters)
    same = letters[:, None] == letters[None, :]
    total = 0.0
    for assign in _assignments(n, G.shape[0], {}):
        weights = run_weights(assign)
        for row, w in zip(assign, weights):
            total += w * wick_moment(np.where(same, G[np.ix_(row, row)], 0.0))
    return total


def _symmetric_degree5_rule(dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """Fully symmetric rule exact for standard normal moments of degree <= 5.

    Nodes: origin, +-sqrt(3) e_i, and +-sqrt(3) e_i +-sqrt(3) e_j for i < j.
    """
    r = math.sqrt(3.0)
    nodes = [np.zeros(dim)]
    weights = [1.0 + (dim * dim - 7 * dim) / 18.0]
    for i in range(dim):
        for sign in (1.0, -1.0):
            x = np.zeros(dim)
            x[i] = sign * r
            nodes.append(x)
            weights.append((4.0 - dim) / 18.0)
    for i, j in itertools.combinations(range(dim), 2):
        for si, sj in itertools.product((1.0, -1.0), repeat=2):
            x = np.zeros(dim)
            x[i], x[j] = si * r, sj * r
            nodes.append(x)
            weights.append(1.0 / 36.0)
    return np.array(nodes), np.array(weights)


def pl_expected_signature_tensor(model: CovarianceModel, grid: UniformGrid, N: int, dim: int) -> TensorPolynomial:
    """E of the ordered product of segment exponentials, by exact Gaussian cubature over whole paths."""
    if N > 5:
        raise CapabilityError(f"The path cubature is exact up to level 5, got {N}")
    if grid.cells * dim > 24:
        raise CapabilityError(f"Path cubature is limited to 24 Gaussian coordinates, got {grid.cells * dim}")
    lower, perm, rank = IncrementGram.from_model(model, grid).factor()
    factor = np.zeros((grid.cells, rank))
    factor[perm] = lower[:, :rank]
    nodes, weights = _symmetric_degree5_rule(rank * dim)
    total = TensorPolynomial.zero(dim, N)
    for z, w in zip(nodes, weights):
        increments = factor @ z.reshape(rank, dim)
        path = np.vstack([np.zeros((1, dim)), np.cumsum(increments, axis=0)])
        total = total + signature_of_path(path, N).scale(w)
    return total


def pl_chaos_kernel(P: Diagram, model: CovarianceModel, grid: UniformGrid, word: Word,
                    free_times: Sequence[float], free_indices: Optional[Sequence[int]] = None,
                    budget: int = DEFAULT_BUDGET) -> float:
    if len(word) != P.n:
        raise DimensionMismatchError(f"Word {word.key} has length {len(word)}, diagram needs {P.n}")
    if free_indices is not None:
        expected = tuple(word.letters[p - 1] for p in P.singles)
        if tuple(int(i) for i in free_indices) != expected:
            return 0.0
    if not index_compatible(P, word):
        return 0.0
    return pl_diagram_value(P, model, grid, free_times, budget)


def pl_malliavin_expectation(model: CovarianceModel, grid: UniformGrid, word: Word, m: int,
                             free_times: Sequence[float], free_indices: Sequence[int],
                             budget: int = DEFAULT_BUDGET) -> float:
    """E[D^m S(X^l)^word] at the (time, index) arguments, summed over all their orderings."""
    if len(free_times) != m or len(free_indices) != m:
        raise DimensionMismatchError(f"Expected {m} free times and indices")
    n = len(word)
    if m > n or (n - m) % 2:
        return 0.0
    diagrams = enumerate_pairings(n, m)
    total = 0.0
    for order in set(itertools.permutations(range(m))):
        times = [free_times[i] for i in order]
        indices = [free_indices[i] for i in order]
        for P in diagrams:
            total += pl_chaos_kernel(P, model, grid, word, times, indices, budget)
    return total


@dataclass
class ElementaryKernel:
    """Combination of grid-cell indicators, one coefficient row per component."""

    grid: UniformGrid
    coefficients: np.ndarray

    def __post_init__(self) -> None:
        self.coefficients = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        if self.coefficients.shape[1] != self.grid.cells:
            raise DimensionMismatchError(
                f"Kernel has {self.coefficients.shape[1]} cell coefficients, grid has {self.grid.cells}")

    @property
    def dim(self) -> int:
        return int(self.coefficients.shape[0])

    @classmethod
    def indicator(cls, grid: UniformGrid, index: int, a: float, b: float, dim: int) -> "ElementaryKernel":
        """1^index on [a, b) with a and b on grid edges."""
        if not 1 <= index <= dim:
            raise DimensionMismatchError(f"Index {index} outside 1..{dim}")
        lo, hi = (np.array([a, b]) - grid.s) / grid.rho if grid.rho > 0 else (0.0, 0.0)
        if not (np.isclose(lo, round(lo)) and np.isclose(hi, round(hi))):
            raise DomainError(f"[{a}, {b}) is not a union of grid cells")
        coeffs = np.zeros((dim, grid.cells))
        coeffs[index - 1, int(round(lo)):int(round(hi))] = 1.0
        return cls(grid, coeffs)

    def __add__(self, other: "ElementaryKernel") -> "ElementaryKernel":
        self._check(other)
        return ElementaryKernel(self.grid, self.coefficients + other.coefficients)

    def scale(self, factor: float) -> "ElementaryKernel":
        return ElementaryKernel(self.grid, factor * self.coefficients)

    def _check(self, other: "ElementaryKernel") -> None:
        if self.grid != other.grid or self.dim != other.dim:
            raise DimensionMismatchError("Elementary kernels live on different grids or dimensions")


def grid_inner_product(f: ElementaryKernel, g: ElementaryKernel, model: CovarianceModel) -> float:
    """Sum over components of f^a G g^a; distinct components are orthogonal."""
    f._check(g)
    G = IncrementGram.from_model(model, f.grid).matrix
    return float(np.einsum("ai,ij,aj->", f.coefficients, G, g.coefficients))
