import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, Iterator, List, Literal, Tuple

from .errors import CapabilityError, DimensionMismatchError, DomainError
from .tensor_words import Word

logger = logging.getLogger(__name__)

MAX_POSITIONS = 12

Pair = Tuple[int, int]


@dataclass(frozen=True)
class Diagram:
    """Partial pairing of the positions 1..n; unpaired positions are singles."""

    n: int
    pairs: Tuple[Pair, ...]

    def __post_init__(self) -> None:
        normalised = tuple(sorted((min(i, j), max(i, j)) for i, j in self.pairs))
        seen = set()
        for i, j in normalised:
            if i == j or i < 1 or j > self.n:
                raise DomainError(f"Invalid pair {{{i},{j}}} for n={self.n}")
            if i in seen or j in seen:
                raise DomainError(f"Pairs overlap at {{{i},{j}}}")
            seen.update((i, j))
        object.__setattr__(self, "pairs", normalised)

    @property
    def singles(self) -> Tuple[int, ...]:
        paired = {p for pair in self.pairs for p in pair}
        return tuple(k for k in range(1, self.n + 1) if k not in paired)

    @property
    def m(self) -> int:
        return self.n - 2 * len(self.pairs)

    @staticmethod
    def classify(pair: Pair) -> Literal["consecutive", "arc"]:
        return "consecutive" if pair[1] == pair[0] + 1 else "arc"

    @property
    def consecutive_pairs(self) -> Tuple[Pair, ...]:
        return tuple(p for p in self.pairs if self.classify(p) == "consecutive")

    @property
    def arcs(self) -> Tuple[Pair, ...]:
        return tuple(p for p in self.pairs if self.classify(p) == "arc")

    @property
    def eliminated_positions(self) -> Tuple[int, ...]:
        return tuple(i for i, _ in self.consecutive_pairs)

    @property
    def retained_positions(self) -> Tuple[int, ...]:
        dropped = set(self.singles) | set(self.eliminated_positions)
        return tuple(k for k in range(1, self.n + 1) if k not in dropped)

    @property
    def integration_count(self) -> int:
        """#P = 2 * arcs + consecutive pairs."""
        return 2 * len(self.arcs) + len(self.consecutive_pairs)

    @property
    def label(self) -> str:
        if not self.pairs:
            return "{}"
        return "".join(f"{{{i},{j}}}" for i, j in self.pairs)

    def to_json(self) -> Dict[str, Any]:
        return {"n": self.n, "pairs": [[i, j] for i, j in self.pairs]}

    @classmethod
    def from_json(cls, data: Any) -> "Diagram":
        if isinstance(data, str):
            data = json.loads(data)
        return cls(int(data["n"]), tuple((int(i), int(j)) for i, j in data["pairs"]))


def pairing_count(n: int, m: int) -> int:
    """|P^n_m| = C(n, n-m) * (n-m-1)!!"""
    if m > n or (n - m) % 2:
        return 0
    k = n - m
    double_factorial = 1
    for odd in range(k - 1, 0, -2):
        double_factorial *= odd
    return math.comb(n, k) * double_factorial


def _place(remaining: Tuple[int, ...], singles_left: int) -> Iterator[Tuple[Pair, ...]]:
    if not remaining:
        if singles_left == 0:
            yield ()
        return
    if singles_left > len(remaining) or (len(remaining) - singles_left) % 2:
        return
    first, rest = remaining[0], remaining[1:]
    if singles_left > 0:
        yield from _place(rest, singles_left - 1)
    for idx, partner in enumerate(rest):
        others = rest[:idx] + rest[idx + 1:]
        for tail in _place(others, singles_left):
            yield ((first, partner),) + tail


@lru_cache(maxsize=None)
def _enumerate(n: int, m: int) -> Tuple[Diagram, ...]:
    return tuple(Diagram(n, pairs) for pairs in _place(tuple(range(1, n + 1)), m))


def enumerate_pairings(n: int, m: int) -> List[Diagram]:
    """All diagrams on n positions with exactly m singles, in canonical order."""
    if n < 0 or m < 0:
        raise DomainError(f"n and m must be non-negative, got n={n}, m={m}")
    if n > MAX_POSITIONS:
        raise CapabilityError(f"Diagrams are supported up to n={MAX_POSITIONS}, got n={n}")
    if m > n or (n - m) % 2:
        return []
    diagrams = list(_enumerate(n, m))
    logger.debug(f"Enumerated {len(diagrams)} diagrams for n={n}, m={m}")
    return diagrams


def maximal_consecutive_sequences(diagram: Diagram) -> List[Tuple[Pair, ...]]:
    runs: List[List[Pair]] = []
    for pair in diagram.consecutive_pairs:
        if runs and runs[-1][-1][1] + 1 == pair[0]:
            runs[-1].append(pair)
        else:
            runs.append([pair])
    return [tuple(run) for run in runs]


def index_compatible(diagram: Diagram, word: Word) -> bool:
    """True iff every pair of the diagram joins equal letters of the word."""
    if len(word) != diagram.n:
        raise DimensionMismatchError(f"Word of length {len(word)} used with a diagram on {diagram.n} positions")
    return all(word.letters[i - 1] == word.letters[j - 1] for i, j in diagram.pairs)

