"""Truncated tensor algebra over words.

Coefficients are stored densely, one flat array per level; the word
(g1, ..., gk) sits at the lexicographic index sum (gi - 1) * d**(k - i).
"""
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterator, List, Mapping, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatchError
from .utils import format_word_key, parse_word_key


@dataclass(frozen=True)
class Word:
    letters: Tuple[int, ...]
    dim: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "letters", tuple(int(a) for a in self.letters))
        if self.dim < 1:
            raise DimensionMismatchError(f"Dimension must be positive, got {self.dim}")
        for a in self.letters:
            if not 1 <= a <= self.dim:
                raise DimensionMismatchError(f"Letter {a} outside 1..{self.dim}")

    def __len__(self) -> int:
        return len(self.letters)

    def __add__(self, other: "Word") -> "Word":
        if other.dim != self.dim:
            raise DimensionMismatchError(f"Cannot concatenate words over d={self.dim} and d={other.dim}")
        return Word(self.letters + other.letters, self.dim)

    @property
    def index(self) -> int:
        idx = 0
        for a in self.letters:
            idx = idx * self.dim + (a - 1)
        return idx

    @property
    def key(self) -> str:
        return format_word_key(self.letters)

    @classmethod
    def from_key(cls, key: str, dim: int) -> "Word":
        return cls(parse_word_key(key), dim)


def all_words(dim: int, n: int) -> Iterator[Word]:
    """Words of length n in lexicographic (storage) order."""
    for letters in itertools.product(range(1, dim + 1), repeat=n):
        yield Word(letters, dim)


class TensorPolynomial:
    """Element of the truncated tensor algebra T^N(R^d)."""

    def __init__(self, dim: int, levels: Sequence[np.ndarray]):
        if dim < 1:
            raise DimensionMismatchError(f"Dimension must be positive, got {dim}")
        if len(levels) == 0:
            raise DimensionMismatchError("At least level 0 must be present")
        frozen: List[np.ndarray] = []
        for k, arr in enumerate(levels):
            flat = np.array(arr, dtype=float).reshape(-1)
            if flat.size != dim ** k:
                raise DimensionMismatchError(f"Level {k} needs {dim ** k} coefficients, got {flat.size}")
            flat.setflags(write=False)
            frozen.append(flat)
        self.dim = dim
        self.depth = len(frozen) - 1
        self._levels: Tuple[np.ndarray, ...] = tuple(frozen)

    @property
    def levels(self) -> Tuple[np.ndarray, ...]:
        return self._levels

    @classmethod
    def zero(cls, dim: int, depth: int) -> "TensorPolynomial":
        return cls(dim, [np.zeros(dim ** k) for k in range(depth + 1)])

    @classmethod
    def identity(cls, dim: int, depth: int) -> "TensorPolynomial":
        levels = [np.zeros(dim ** k) for k in range(depth + 1)]
        levels[0][0] = 1.0
        return cls(dim, levels)

    @classmethod
    def from_words(cls, dim: int, depth: int, coefficients: Mapping[Word, float]) -> "TensorPolynomial":
        levels = [np.zeros(dim ** k) for k in range(depth + 1)]
        for word, value in coefficients.items():
            if word.dim != dim:
                raise DimensionMismatchError(f"Word {word.key} is over d={word.dim}, expected {dim}")
            if len(word) > depth:
                raise DimensionMismatchError(f"Word {word.key} is longer than the truncation level {depth}")
            levels[len(word)][word.index] += value
        return cls(dim, levels)

    def level(self, k: int) -> np.ndarray:
        """Level k as a (d,)*k array."""
        return self._levels[k].reshape((self.dim,) * k)

    def coefficient(self, word: Word) -> float:
        if word.dim != self.dim:
            raise DimensionMismatchError(f"Word over d={word.dim} used with d={self.dim}")
        if len(word) > self.depth:
            raise DimensionMismatchError(f"No coefficient stored beyond level {self.depth}")
        return float(self._levels[len(word)][word.index])

    def __getitem__(self, word: Word) -> float:
        return self.coefficient(word)

    def _check_compatible(self, other: "TensorPolynomial") -> None:
        if self.dim != other.dim:
            raise DimensionMismatchError(f"Dimension mismatch: {self.dim} vs {other.dim}")
        if self.depth != other.depth:
            raise DimensionMismatchError(f"Truncation mismatch: {self.depth} vs {other.depth}")

    def __add__(self, other: "TensorPolynomial") -> "TensorPolynomial":
        self._check_compatible(other)
        return TensorPolynomial(self.dim, [a + b for a, b in zip(self._levels, other._levels)])

    def __sub__(self, other: "TensorPolynomial") -> "TensorPolynomial":
        self._check_compatible(other)
        return TensorPolynomial(self.dim, [a - b for a, b in zip(self._levels, other._levels)])

    def scale(self, factor: float) -> "TensorPolynomial":
        return TensorPolynomial(self.dim, [factor * a for a in self._levels])

    def truncate(self, depth: int) -> "TensorPolynomial":
        return TensorPolynomial(self.dim, self._levels[: depth + 1])

    def allclose(self, other: "TensorPolynomial", rtol: float = 1e-12, atol: float = 0.0) -> bool:
        self._check_compatible(other)
        return all(np.allclose(a, b, rtol=rtol, atol=atol) for a, b in zip(self._levels, other._levels))

    def word_values(self, min_level: int = 0) -> Dict[str, float]:
        out: Dict[str, float] = {}
        for k in range(min_level, self.depth + 1):
            for word in all_words(self.dim, k):
                out[word.key] = float(self._levels[k][word.index])
        return out

    def __repr__(self) -> str:
        return f"TensorPolynomial(dim={self.dim}, depth={self.depth})"


def chen_product(a: TensorPolynomial, b: TensorPolynomial) -> TensorPolynomial:
    """Concatenation product truncated at the common level."""
    a._check_compatible(b)
    levels = []
    for k in range(a.depth + 1):
        acc = np.zeros(a.dim ** k)
        for j in range(k + 1):
            acc += np.multiply.outer(a.levels[j], b.levels[k - j]).ravel()
        levels.append(acc)
    return TensorPolynomial(a.dim, levels)


def tensor_exp(increment: Sequence[float], depth: int) -> TensorPolynomial:
    """Signature of a single linear segment with the given increment."""
    if depth < 0:
        raise DimensionMismatchError(f"Truncation level must be non-negative, got {depth}")
    inc = np.asarray(increment, dtype=float).reshape(-1)
    levels = [np.ones(1)]
    for k in range(1, depth + 1):
        levels.append(np.multiply.outer(levels[-1], inc).ravel() / k)
    return TensorPolynomial(inc.size, levels)


def signature_of_path(points: np.ndarray, depth: int) -> TensorPolynomial:
    """Ordered product of segment exponentials of a piecewise-linear path."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    sig = TensorPolynomial.identity(pts.shape[1], depth)
    for inc in np.diff(pts, axis=0):
        sig = chen_product(sig, tensor_exp(inc, depth))
    return sig


@lru_cache(maxsize=4096)
def _shuffle_letters(u: Tuple[int, ...], v: Tuple[int, ...]) -> Tuple[Tuple[Tuple[int, ...], int], ...]:
    if not u:
        return ((v, 1),)
    if not v:
        return ((u, 1),)
    out: Counter = Counter()
    for w, mult in _shuffle_letters(u[1:], v):
        out[(u[0],) + w] += mult
    for w, mult in _shuffle_letters(u, v[1:]):
        out[(v[0],) + w] += mult
    return tuple(out.items())


def shuffle(w1: Word, w2: Word) -> Counter:
    """All order-preserving interleavings of w1 and w2, with multiplicity."""
    if w1.dim != w2.dim:
        raise DimensionMismatchError(f"Cannot shuffle words over d={w1.dim} and d={w2.dim}")
    result: Counter = Counter()
    for letters, mult in _shuffle_letters(w1.letters, w2.letters):
        result[Word(letters, w1.dim)] += mult
    return result


def shuffle_count(n1: int, n2: int) -> int:
    return math.comb(n1 + n2, n1)
