"""Expected signatures and chaos kernels of Gaussian processes as diagram integrals.

A diagram on n positions fixes which integration variables survive: singles
become free arguments, the first element of every consecutive pair is
integrated out, the rest are integrated over the ordered simplex between s
and t. Arcs contribute d12R(u_i, u_j); a consecutive pair {h, h+1}
contributes 1/2 R'(u_{h+1}) - d2R(u_{h-1}, u_{h+1}) with u_0 = s.
"""
import itertools
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .covariance import CovarianceModel, cluster_exponent
from .diagrams import Diagram, enumerate_pairings, index_compatible
from .errors import CapabilityError, DimensionMismatchError, DomainError, EsigError, QuadratureError
from .quadrature import QuadratureConfig, default_grading_exponent, integrate
from .tensor_words import TensorPolynomial, Word
from .worker import evaluate_diagram_task, map_tasks

logger = logging.getLogger(__name__)

MAX_LEVEL = 6
MAX_DIM = 4

ProgressCallback = Callable[[int, int], None]


@dataclass
class _Slot:
    position: int
    time: Optional[float] = None

    @property
    def fixed(self) -> bool:
        return self.time is not None


# (kind, *slot positions): ("arc", i, j), ("consecutive", anchor, v), ("edge", j, hi, lo)
Factor = Tuple[Any, ...]


def _arc_end_options(slots: List[_Slot], factors: List[Factor]) -> Iterator[Tuple[List[_Slot], List[Factor]]]:
    """Every way of integrating out one arc endpoint that occurs in no other factor.

    The endpoint runs between its neighbours lo < u < hi, so the arc becomes
    d2R(u_hi, u_j) - d2R(u_lo, u_j) in the partner u_j.
    """
    index = {slot.position: k for k, slot in enumerate(slots)}
    uses = Counter(p for f in factors for p in f[1:])
    for n, f in enumerate(factors):
        if f[0] != "arc":
            continue
        for end, partner in ((f[1], f[2]), (f[2], f[1])):
            k = index[end]
            lo, hi = slots[k - 1].position, slots[k + 1].position
            if uses[end] != 1 or partner in (lo, hi):
                continue
            rest = factors[:n] + factors[n + 1:] + [("edge", partner, hi, lo)]
            yield [slot for slot in slots if slot.position != end], rest


def _reduce_arc_ends(slots: List[_Slot], factors: List[Factor]) -> Tuple[List[_Slot], List[Factor]]:
    """Elimination order leaving the fewest variables, then the fewest raw arcs."""
    def score(option: Tuple[List[_Slot], List[Factor]]) -> Tuple[int, int]:
        sl, fs = option
        return sum(1 for slot in sl if not slot.fixed), sum(1 for f in fs if f[0] == "arc")

    best = (slots, factors)
    stack = [best]
    while stack:
        option = stack.pop()
        if score(option) < score(best):
            best = option
        stack.extend(_arc_end_options(*option))
    return best


class _SimplexLayout:
    """Ordered chain s, retained and free variables, t, with the integrand factors on it.

    Integration variables between two fixed points form a segment and are
    parametrised by nested gaps: gap = rem * x, rem <- rem * (1 - x).
    """

    def __init__(self, diagram: Diagram, model: CovarianceModel, s: float, t: float,
                 free_times: Sequence[float], cfg: QuadratureConfig):
        self.model = model
        self.constant = 1.0
        self.use_gaps = cfg.stationary_fast_path and model.stationary_increments
        eliminated = set(diagram.eliminated_positions)
        free = dict(zip(diagram.singles, free_times))
        slots = [_Slot(0, s)]
        for p in range(1, diagram.n + 1):
            if p in eliminated:
                continue
            slots.append(_Slot(p, free.get(p)))
        slots.append(_Slot(diagram.n + 1, t))

        order = [slot.position for slot in slots]
        factors: List[Factor] = [("arc", i, j) for i, j in diagram.arcs]
        # the anchor u_{h-1} is always the slot just before u_{h+1}
        factors += [("consecutive", order[order.index(j) - 1], j) for _, j in diagram.consecutive_pairs]

        variables = sum(1 for slot in slots if not slot.fixed)
        if cfg.closed_forms:
            slots, factors = self._close_isolated(slots, factors)
            slots, factors = _reduce_arc_ends(slots, factors)
        self.slots = slots
        self.dim = sum(1 for slot in slots if not slot.fixed)
        self.closed = variables - self.dim
        index = {slot.position: k for k, slot in enumerate(slots)}
        self.factors: List[Factor] = [(f[0], *(index[p] for p in f[1:])) for f in factors]
        self.segment_length = []
        for k, slot in enumerate(slots):
            nxt = next((x.time for x in slots[k + 1:] if x.fixed), None)
            self.segment_length.append(0.0 if not slot.fixed or nxt is None else nxt - slot.time)

    def _close_isolated(self, slots: List[_Slot], factors: List[Factor]) -> Tuple[List[_Slot], List[Factor]]:
        """Integrates variables alone between two fixed points in closed form.

        A lone variable v in (a, b) anchored at a integrates to
        1/2 E[X_ab^2]; an arc between two lone variables in (a, b) and (c, d)
        integrates to E[X_ab X_cd].
        """
        index = {slot.position: k for k, slot in enumerate(slots)}

        def lone(p: int) -> bool:
            k = index[p]
            return not slots[k].fixed and slots[k - 1].fixed and slots[k + 1].fixed

        def bounds(p: int) -> Tuple[float, float]:
            k = index[p]
            return slots[k - 1].time, slots[k + 1].time  # type: ignore[return-value]

        removed = set()
        kept = []
        for f in factors:
            kind, a, b = f
            if kind == "consecutive" and lone(b):
                lo, hi = bounds(b)
                self.constant *= 0.5 * float(self.model.inc_cov(lo, hi, lo, hi))
                removed.add(b)
            elif kind == "arc" and lone(a) and lone(b):
                (lo_a, hi_a), (lo_b, hi_b) = bounds(a), bounds(b)
                self.constant *= float(self.model.inc_cov(lo_a, hi_a, lo_b, hi_b))
                removed.update((a, b))
            else:
                kept.append(f)
        return [slot for slot in slots if slot.position not in removed], kept

    def _half(self, pos: List[Any], gaps: List[Any], x: int, y: int) -> Any:
        """Derivative of R(u_x, u_y) in u_y."""
        if x < y:
            return self.model.upper_density(pos[x], pos[y], sum(gaps[x + 1:y + 1]))
        return self.model.lower_density(pos[y], pos[x], sum(gaps[y + 1:x + 1]))

    def __call__(self, x: np.ndarray, xc: np.ndarray) -> np.ndarray:
        model = self.model
        weight: Any = np.ones(x.shape[0])
        pos: List[Any] = []
        gaps: List[Any] = []
        rem: Any = 0.0
        axis = 0
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            for k, slot in enumerate(self.slots):
                if slot.fixed:
                    if k == 0:
                        gaps.append(0.0)
                    elif not self.slots[k - 1].fixed:
                        gaps.append(rem)
                    else:
                        gaps.append(slot.time - pos[-1])
                    pos.append(slot.time)
                    rem = self.segment_length[k]
                else:
                    g = rem * x[:, axis]
                    weight = weight * rem
                    rem = rem * xc[:, axis]
                    gaps.append(g)
                    pos.append(pos[-1] + g)
                    axis += 1
            values = weight * self.constant
            for kind, *ends in self.factors:
                if kind == "edge":
                    j, hi, lo = ends
                    values = values * (self._half(pos, gaps, hi, j) - self._half(pos, gaps, lo, j))
                    continue
                a, b = ends
                if kind == "arc":
                    gap = sum(gaps[a + 1:b + 1])
                    if self.use_gaps:
                        values = values * model.arc_density_from_gap(gap)
                    else:
                        values = values * model.arc_density(pos[a], pos[b], gap)
                elif self.use_gaps:
                    values = values * model.consecutive_density_from_gap(gaps[b])
                else:
                    values = values * model.consecutive_density(pos[a], pos[b], gaps[b])
        return values


def _check_interval(model: CovarianceModel, s: float, t: float) -> None:
    if s > t:
        raise DomainError(f"Interval endpoints must satisfy s <= t, got s={s}, t={t}")
    model.check_times(s, t)


def _strictly_inside(s: float, t: float, free_times: Sequence[float]) -> bool:
    chain = [s, *free_times, t]
    return all(a < b for a, b in zip(chain, chain[1:]))


def integrate_diagram(diagram: Diagram, model: CovarianceModel, s: float, t: float,
                      free_times: Sequence[float] = (),
                      cfg: Optional[QuadratureConfig] = None) -> Tuple[float, float, str]:
    """Value, error bound and method of the diagram integral at the given free times."""
    cfg = cfg or QuadratureConfig()
    if len(free_times) != diagram.m:
        raise DimensionMismatchError(f"Diagram {diagram.label} needs {diagram.m} free times, got {len(free_times)}")
    if model.arcs_vanish and diagram.arcs:
        return 0.0, 0.0, "vanishing"
    if not diagram.pairs and diagram.m == 0:
        return 1.0, 0.0, "closed-form"
    if not _strictly_inside(s, t, free_times):
        return 0.0, 0.0, "outside"

    layout = _SimplexLayout(diagram, model, s, t, free_times, cfg)
    if layout.dim == 0:
        value = float(layout(np.zeros((1, 0)), np.zeros((1, 0)))[0])
        return value, 0.0, "closed-form"
    q = cfg.grading_exponent or default_grading_exponent(model.hoelder)
    label = f"{diagram.label}@[{s:g},{t:g}]"
    logger.debug(f"{label}: {layout.closed} variables closed, {layout.dim} left")
    try:
        value, err, method = integrate(layout, layout.dim, cfg, q, label)
    except QuadratureError as e:
        raise QuadratureError(str(e), e.estimate, e.error_bound, diagram) from e
    return value, err, method


@dataclass(frozen=True, eq=False)
class ChaosKernel:
    """Deterministic kernel of the m-th chaos term attached to one diagram and word."""

    diagram: Diagram
    model: CovarianceModel
    s: float
    t: float
    word: Word

    def __post_init__(self) -> None:
        if len(self.word) != self.diagram.n:
            raise DimensionMismatchError(
                f"Word {self.word.key} has length {len(self.word)}, diagram needs {self.diagram.n}")

    @property
    def m(self) -> int:
        return self.diagram.m

    @property
    def free_positions(self) -> Tuple[int, ...]:
        return self.diagram.singles

    @property
    def eliminated_positions(self) -> Tuple[int, ...]:
        return self.diagram.eliminated_positions

    @property
    def retained_positions(self) -> Tuple[int, ...]:
        return self.diagram.retained_positions

    @property
    def free_letters(self) -> Tuple[int, ...]:
        return tuple(self.word.letters[p - 1] for p in self.free_positions)

    @property
    def vanishes(self) -> bool:
        return not index_compatible(self.diagram, self.word)

    def to_json(self) -> Dict[str, Any]:
        return {
            "diagram": self.diagram.to_json(),
            "label": self.diagram.label,
            "word": self.word.key,
            "free_positions": list(self.free_positions),
            "free_letters": list(self.free_letters),
            "eliminated_positions": list(self.eliminated_positions),
            "retained_positions": list(self.retained_positions),
            "vanishes": self.vanishes,
        }


def eval_kernel_with_error(k: ChaosKernel, free_times: Sequence[float],
                           free_indices: Optional[Sequence[int]] = None,
                           cfg: Optional[QuadratureConfig] = None) -> Tuple[float, float]:
    if len(free_times) != k.m:
        raise DimensionMismatchError(f"Kernel takes {k.m} free times, got {len(free_times)}")
    if free_indices is not None:
        if len(free_indices) != k.m:
            raise DimensionMismatchError(f"Kernel takes {k.m} free indices, got {len(free_indices)}")
        if tuple(int(i) for i in free_indices) != k.free_letters:
            return 0.0, 0.0
    if k.vanishes:
        return 0.0, 0.0
    _check_interval(k.model, k.s, k.t)
    value, err, _ = integrate_diagram(k.diagram, k.model, k.s, k.t, tuple(float(u) for u in free_times), cfg)
    return value, err


def eval_kernel(k: ChaosKernel, free_times: Sequence[float],
                free_indices: Optional[Sequence[int]] = None,
                cfg: Optional[QuadratureConfig] = None) -> float:
    """Kernel value at the free arguments; 0 off the simplex or on an index mismatch."""
    return eval_kernel_with_error(k, free_times, free_indices, cfg)[0]


def diagram_scalar_with_error(P: Diagram, model: CovarianceModel, s: float, t: float,
                              cfg: Optional[QuadratureConfig] = None) -> Tuple[float, float]:
    if P.m:
        raise DomainError(f"Diagram {P.label} has {P.m} singles; use a chaos kernel instead")
    _check_interval(model, s, t)
    value, err, _ = integrate_diagram(P, model, s, t, (), cfg)
    return value, err


def diagram_scalar(P: Diagram, model: CovarianceModel, s: float, t: float,
                   cfg: Optional[QuadratureConfig] = None) -> float:
    return diagram_scalar_with_error(P, model, s, t, cfg)[0]


@dataclass
class DiagramTerm:
    diagram: Diagram
    value: float
    err: float
    method: str = ""

    def to_json(self) -> Dict[str, Any]:
        return {"diagram": self.diagram.to_json(), "label": self.diagram.label,
                "value": self.value, "err": self.err, "method": self.method}


def _collect(diagrams: Sequence[Diagram], results: Sequence[Tuple[bool, str, float, float]]) -> List[DiagramTerm]:
    terms = []
    for diagram, (ok, msg, value, err) in zip(diagrams, results):
        if not ok:
            if math.isfinite(value):
                raise QuadratureError(msg, value, err, diagram)
            raise EsigError(f"Diagram {diagram.label} failed: {msg}")
        terms.append(DiagramTerm(diagram, value, err, msg))
    return terms


def compute_level_terms(model: CovarianceModel, n: int, s: float, t: float,
                        cfg: Optional[QuadratureConfig] = None, workers: int = 1,
                        progress: Optional[ProgressCallback] = None) -> List[DiagramTerm]:
    """Scalar integrals of every full pairing at level n, in canonical diagram order."""
    cfg = cfg or QuadratureConfig()
    _check_interval(model, s, t)
    diagrams = enumerate_pairings(n, 0)
    tasks = [(P, model, s, t, (), cfg) for P in diagrams]
    results = map_tasks(evaluate_diagram_task, tasks, workers, progress)
    return _collect(diagrams, results)


def _letters(dim: int, n: int) -> np.ndarray:
    return np.array(list(itertools.product(range(1, dim + 1), repeat=n)), dtype=int).reshape(dim ** n, n)


def compatibility_mask(diagram: Diagram, dim: int) -> np.ndarray:
    """Boolean mask over all words of length n (storage order) compatible with the diagram."""
    letters = _letters(dim, diagram.n)
    mask = np.ones(letters.shape[0], dtype=bool)
    for i, j in diagram.pairs:
        mask &= letters[:, i - 1] == letters[:, j - 1]
    return mask


@dataclass
class ExpectationResult:
    model: CovarianceModel
    s: float
    t: float
    signature: TensorPolynomial
    errors: TensorPolynomial
    terms: Dict[int, List[DiagramTerm]] = field(default_factory=dict)

    def error(self, word: Word) -> float:
        return self.errors.coefficient(word)

    def to_json(self, min_level: int = 0) -> Dict[str, Any]:
        return {
            "model": self.model.describe(),
            "interval": [self.s, self.t],
            "level": self.signature.depth,
            "chaos": 0,
            "dim": self.signature.dim,
            "cluster_exponent": cluster_exponent(self.model),
            "terms": [term.to_json() for n in sorted(self.terms) for term in self.terms[n]],
            "word_values": self.signature.word_values(min_level),
            "word_errors": self.errors.word_values(min_level),
        }


def _check_level(N: int, dim: int) -> None:
    if N < 0:
        raise DimensionMismatchError(f"Truncation level must be non-negative, got {N}")
    if N > MAX_LEVEL:
        raise CapabilityError(f"Expected signatures are supported up to level {MAX_LEVEL}, got {N}")
    if not 1 <= dim <= MAX_DIM:
        raise CapabilityError(f"Dimension must lie in 1..{MAX_DIM}, got {dim}")


def compute_expected_signature(model: CovarianceModel, N: int, s: float, t: float,
                               cfg: Optional[QuadratureConfig] = None, dim: int = 2,
                               workers: int = 1,
                               progress: Optional[ProgressCallback] = None) -> ExpectationResult:
    """Expected signature up to level N with per-word error bounds and per-diagram terms.

    Diagram integrals do not depend on the word, so each is computed once and
    added to every index-compatible word.
    """
    _check_level(N, dim)
    _check_interval(model, s, t)
    cfg = cfg or QuadratureConfig()
    if s == t:
        logger.info(f"Empty interval at {s}: expected signature is the identity")
        ident = TensorPolynomial.identity(dim, N)
        return ExpectationResult(model, s, t, ident, TensorPolynomial.zero(dim, N))

    logger.info(f"Expected signature of {model!r} on [{s}, {t}] up to level {N}, d={dim}")
    values = [np.ones(1)] + [np.zeros(dim ** k) for k in range(1, N + 1)]
    errors = [np.zeros(dim ** k) for k in range(N + 1)]
    terms: Dict[int, List[DiagramTerm]] = {}
    for n in range(2, N + 1, 2):
        level_terms = compute_level_terms(model, n, s, t, cfg, workers, progress)
        for term in level_terms:
            mask = compatibility_mask(term.diagram, dim)
            values[n] += term.value * mask
            errors[n] += term.err * mask
        terms[n] = level_terms
        logger.debug(f"Level {n}: {len(level_terms)} diagrams, total error {sum(t.err for t in level_terms):.3e}")
    return ExpectationResult(model, s, t, TensorPolynomial(dim, values), TensorPolynomial(dim, errors), terms)


def expected_signature(model: CovarianceModel, N: int, s: float, t: float,
                       cfg: Optional[QuadratureConfig] = None, dim: int = 2,
                       workers: int = 1) -> TensorPolynomial:
    return compute_expected_signature(model, N, s, t, cfg, dim, workers).signature


def expected_signature_martingale(model: CovarianceModel, N: int, s: float, t: float,
                                  dim: int = 2) -> TensorPolynomial:
    """Closed form R(D(s,t))^k / (2^k k!) on paired-letter words, for models without arc terms."""
    _check_level(N, dim)
    _check_interval(model, s, t)
    if not model.arcs_vanish:
        raise DomainError(f"{model.kind} has non-vanishing arc terms; the martingale closed form does not apply")
    q = float(model.inc_cov(s, t, s, t))
    levels = [np.ones(1)] + [np.zeros(dim ** k) for k in range(1, N + 1)]
    for n in range(2, N + 1, 2):
        k = n // 2
        letters = _letters(dim, n)
        mask = np.all(letters[:, 0::2] == letters[:, 1::2], axis=1)
        levels[n] = mask * (q ** k / (2 ** k * math.factorial(k)))
    return TensorPolynomial(dim, levels)


def chaos_projection_kernels(model: CovarianceModel, word: Word, m: int,
                             s: float, t: float) -> List[Tuple[Diagram, ChaosKernel]]:
    """One kernel per diagram with m singles; empty on a parity mismatch or m > |word|."""
    if m < 0:
        raise DomainError(f"Chaos order must be non-negative, got {m}")
    _check_interval(model, s, t)
    n = len(word)
    if m > n or (n - m) % 2:
        return []
    return [(P, ChaosKernel(P, model, s, t, word)) for P in enumerate_pairings(n, m)]


def default_lattice(s: float, t: float, m: int, points: int = 5) -> List[Tuple[float, ...]]:
    """Strictly increasing m-tuples drawn from s + (t - s)(j + 1/2)/K."""
    if points < 1:
        raise DomainError(f"Lattice needs at least one point per axis, got {points}")
    axis = [s + (t - s) * (j + 0.5) / points for j in range(points)]
    return list(itertools.combinations(axis, m))


def kernel_on_lattice(k: ChaosKernel, lattice: Sequence[Sequence[float]],
                      cfg: Optional[QuadratureConfig] = None, workers: int = 1,
                      progress: Optional[ProgressCallback] = None) -> List[Tuple[Tuple[float, ...], float, float]]:
    """(free_times, value, err) for every lattice point, in lattice order."""
    cfg = cfg or QuadratureConfig()
    _check_interval(k.model, k.s, k.t)
    points = [tuple(float(u) for u in p) for p in lattice]
    for p in points:
        if len(p) != k.m:
            raise DimensionMismatchError(f"Kernel takes {k.m} free times, got {len(p)}")
    if k.vanishes:
        return [(p, 0.0, 0.0) for p in points]
    tasks = [(k.diagram, k.model, k.s, k.t, p, cfg) for p in points]
    terms = _collect([k.diagram] * len(points), map_tasks(evaluate_diagram_task, tasks, workers, progress))
    return [(p, term.value, term.err) for p, term in zip(points, terms)]
