"""Named check suites comparing computed values with closed forms, oracles and samples."""
import logging
import math
import time
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Sequence

import numpy as np
from scipy import integrate

from .analytic_engine import (
    ChaosKernel, compute_level_terms, diagram_scalar, eval_kernel, expected_signature,
    expected_signature_martingale, integrate_diagram)
from .covariance import (
    BrownianBridge, BrownianMotion, CovarianceModel, FractionalBrownianMotion, OrnsteinUhlenbeck,
    check_bounds, gram_matrix, is_psd)
from .diagrams import Diagram, enumerate_pairings, index_compatible, pairing_count
from .discrete_oracle import UniformGrid, pl_diagram_value, pl_level_terms, wick_moment
from .errors import UnknownSuiteError
from .montecarlo import estimate_expected_signature, sample_paths, pathwise_signature
from .quadrature import QuadratureConfig
from .tensor_words import (
    TensorPolynomial, Word, all_words, chen_product, shuffle, shuffle_count, signature_of_path)

logger = logging.getLogger(__name__)

Options = Dict[str, Any]


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    expected: float
    tolerance: float
    detail: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _check(name: str, measured: float, expected: float, tolerance: float,
           relative: bool = False, detail: str = "") -> CheckResult:
    scale = abs(expected) if relative else 1.0
    ok = bool(np.isfinite(measured) and abs(measured - expected) <= tolerance * scale)
    return CheckResult(name, ok, float(measured), float(expected), tolerance, detail)


def shipped_models() -> List[CovarianceModel]:
    return [
        BrownianMotion(),
        FractionalBrownianMotion(0.3),
        FractionalBrownianMotion(0.4),
        FractionalBrownianMotion(0.75),
        BrownianBridge(),
        OrnsteinUhlenbeck(sigma=1.0, theta=1.0),
    ]


def _workers(options: Options) -> int:
    return int(options.get("workers", 1))


def _words(dim: int, n: int) -> List[Word]:
    return list(all_words(dim, n))


def suite_bm_closed_form(options: Options) -> List[CheckResult]:
    N = int(options.get("level", 6))
    start = time.perf_counter()
    model = BrownianMotion()
    sig = expected_signature(model, N, 0.0, 1.0, dim=2, workers=_workers(options))
    ref = expected_signature_martingale(model, N, 0.0, 1.0, dim=2)
    elapsed = time.perf_counter() - start
    results = []
    for k in range(N + 1):
        diff = float(np.max(np.abs(sig.levels[k] - ref.levels[k])))
        if k % 2:
            results.append(_check(f"level {k} vanishes", float(np.max(np.abs(sig.levels[k]))), 0.0, 0.0))
        else:
            results.append(_check(f"level {k} closed form", diff, 0.0, 1e-8))
    results.append(CheckResult("runtime", elapsed < 10.0, elapsed, 10.0, 0.0, "seconds"))
    return results


def suite_level2_universal(options: Options) -> List[CheckResult]:
    models = [FractionalBrownianMotion(h) for h in (0.3, 0.4, 0.5, 0.75)]
    models += [BrownianBridge(), OrnsteinUhlenbeck()]
    results = []
    for model in models:
        t = min(1.0, model.max_time)
        sig = expected_signature(model, 2, 0.0, t, dim=2)
        expected = 0.5 * (model.var(0.0) + model.var(t)) - model.R(0.0, t)
        results.append(_check(f"{model!r} (1,1)", sig[Word((1, 1), 2)], expected, 1e-10))
        results.append(_check(f"{model!r} (1,2)", sig[Word((1, 2), 2)], 0.0, 0.0))
    return results


def level4_reference(hurst: float) -> Dict[str, float]:
    """Closed forms of the three level-4 fBm diagrams on [0, 1]."""
    h = hurst
    b_const, _ = integrate.quad(lambda u: u ** (2 * h - 1) * (1 - u) ** (2 * h - 1), 0.0, 1.0,
                                epsabs=1e-13, epsrel=1e-12, limit=200)
    return {
        "{1,2}{3,4}": h / 4 * b_const,
        "{1,4}{2,3}": (2 * h - 1) / (8 * (4 * h - 1)),
        "{1,3}{2,4}": h / (4 * (4 * h - 1)) - h / 4 * b_const,
    }


def suite_appendix_level4(options: Options) -> List[CheckResult]:
    hursts = [float(options["hurst"])] if options.get("hurst") is not None else [0.3, 0.4, 0.6, 0.75]
    results = []
    for h in hursts:
        start = time.perf_counter()
        terms = compute_level_terms(FractionalBrownianMotion(h), 4, 0.0, 1.0, workers=_workers(options))
        elapsed = time.perf_counter() - start
        ref = level4_reference(h)
        for term in terms:
            results.append(_check(f"H={h} {term.diagram.label}", term.value, ref[term.diagram.label], 1e-5,
                                  relative=True, detail=f"err={term.err:.2e} via {term.method}"))
        total = sum(term.value for term in terms)
        results.append(_check(f"H={h} sum", total, 0.125, 1e-5, relative=True))
        results.append(CheckResult(f"H={h} runtime", elapsed < 60.0, elapsed, 60.0, 0.0, "seconds"))
    return results


def suite_h_half(options: Options) -> List[CheckResult]:
    N = int(options.get("level", 4))
    fbm = expected_signature(FractionalBrownianMotion(0.5), N, 0.0, 1.0, dim=2)
    bm = expected_signature(BrownianMotion(), N, 0.0, 1.0, dim=2)
    return [_check(f"level {k}", float(np.max(np.abs(fbm.levels[k] - bm.levels[k]))), 0.0, 1e-8)
            for k in range(N + 1)]


def suite_self_similarity(options: Options) -> List[CheckResult]:
    h = float(options.get("hurst", 0.4))
    lam = float(options.get("scale", 0.5))
    model = FractionalBrownianMotion(h)
    results = []
    for n in (2, 4):
        for P in enumerate_pairings(n, 0):
            ratio = diagram_scalar(P, model, 0.0, lam) / diagram_scalar(P, model, 0.0, 1.0)
            results.append(_check(f"{P.label}", ratio, lam ** (n * h), 1e-4, relative=True))
    return results


def suite_one_pair(options: Options) -> List[CheckResult]:
    samples = int(options.get("samples", 50))
    rng = np.random.default_rng(int(options.get("seed", 7)))
    cfg = QuadratureConfig(rel_tol=1e-11, closed_forms=False)
    pair = Diagram(2, ((1, 2),))
    results = []
    for model in shipped_models():
        worst = 0.0
        for _ in range(samples):
            s, t = np.sort(rng.uniform(0.0, model.max_time, size=2))
            value, _, _ = integrate_diagram(pair, model, float(s), float(t), (), cfg)
            expected = 0.5 * (model.var(s) + model.var(t)) - model.R(s, t)
            worst = max(worst, abs(value - expected) / max(1.0, abs(expected)))
        results.append(_check(f"{model!r}", worst, 0.0, 1e-8, detail=f"{samples} intervals"))
    return results


GENERIC_POINTS = (0.137, 0.291, 0.463, 0.618, 0.853)


def _decreasing(errors: Sequence[float], slack: float = 1.25) -> bool:
    return all(b <= slack * a for a, b in zip(errors, errors[1:])) and errors[-1] < errors[0]


def suite_oracle_convergence(options: Options) -> List[CheckResult]:
    h = float(options.get("hurst", 0.4))
    grids = [int(g) for g in options.get("grids", (8, 16, 32, 64, 128))]
    threshold = float(options.get("threshold", 0.02))
    model = FractionalBrownianMotion(h)
    results = []

    analytic = {term.diagram.label: term.value
                for term in compute_level_terms(model, 4, 0.0, 1.0, workers=_workers(options))}
    history: Dict[str, List[float]] = {label: [] for label in analytic}
    for cells in grids:
        for P, value in pl_level_terms(model, UniformGrid(0.0, 1.0, cells), 4):
            history[P.label].append(abs(value - analytic[P.label]) / abs(analytic[P.label]))
    for label, errs in history.items():
        results.append(CheckResult(f"level 4 {label}", errs[-1] < threshold and _decreasing(errs),
                                   errs[-1], 0.0, threshold, "relative errors " + ", ".join(f"{e:.2e}" for e in errs)))

    word = Word((1, 1, 1), 1)
    for P in enumerate_pairings(3, 1):
        kernel = ChaosKernel(P, model, 0.0, 1.0, word)
        for u in GENERIC_POINTS:
            exact = eval_kernel(kernel, (u,))
            errs = [abs(pl_diagram_value(P, model, UniformGrid(0.0, 1.0, cells), (u,)) - exact) / abs(exact)
                    for cells in grids]
            results.append(CheckResult(f"kernel {P.label} at {u}", errs[-1] < threshold and _decreasing(errs),
                                       errs[-1], 0.0, threshold,
                                       "relative errors " + ", ".join(f"{e:.2e}" for e in errs)))
    return results


def suite_shuffle_expectation(options: Options) -> List[CheckResult]:
    hursts = [float(options["hurst"])] if options.get("hurst") is not None else [0.3, 0.75]
    results = []
    for h in hursts:
        sig = expected_signature(FractionalBrownianMotion(h), 4, 0.0, 1.0, dim=2, workers=_workers(options))
        w1, w2 = Word((1, 1), 2), Word((2, 2), 2)
        lhs = sum(mult * sig[w] for w, mult in shuffle(w1, w2).items())
        results.append(_check(f"H={h} (1,1) x (2,2)", lhs, sig[w1] * sig[w2], 1e-5))
    return results


def suite_chen_expectation(options: Options) -> List[CheckResult]:
    model = BrownianMotion()
    N = int(options.get("level", 4))
    s, u, t = 0.0, 0.4, 1.0
    whole = expected_signature(model, N, s, t, dim=2)
    split = chen_product(expected_signature(model, N, s, u, dim=2), expected_signature(model, N, u, t, dim=2))
    return [_check(f"level {k}", float(np.max(np.abs(whole.levels[k] - split.levels[k]))), 0.0, 1e-8)
            for k in range(N + 1)]


def suite_martingale(options: Options) -> List[CheckResult]:
    N = int(options.get("level", 6))
    s, t = 0.2, 0.9
    results = []
    for model in (BrownianMotion(), FractionalBrownianMotion(0.5), BrownianMotion(horizon=2.0)):
        sig = expected_signature(model, N, s, t, dim=2)
        ref = expected_signature_martingale(model, N, s, t, dim=2)
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(sig.levels, ref.levels))
        results.append(_check(f"{model!r}", diff, 0.0, 1e-8))
    return results


def suite_montecarlo(options: Options) -> List[CheckResult]:
    n_paths = int(options.get("n_paths", 100_000))
    cells = int(options.get("cells", 256))
    seed = int(options.get("seed", 2024))
    budget = int(options.get("budget", 2 * 10 ** 8))
    results = []
    words = [Word((1, 1), 2), Word((1, 2), 2), Word((1, 1, 1, 1), 2), Word((1, 1, 2, 2), 2)]
    for model in shipped_models():
        t = min(1.0, model.max_time)
        grid = UniformGrid(0.0, t, cells)
        mc = estimate_expected_signature(model, grid, 4, n_paths, seed, dim=2, workers=_workers(options))
        analytic = expected_signature(model, 4, 0.0, t, dim=2, workers=_workers(options))
        oracle = {n: pl_level_terms(model, grid, n, budget) for n in (2, 4)}
        for w in words:
            value, se = mc.value(w), mc.se(w)
            target = analytic[w]
            results.append(CheckResult(f"{model!r} {w.key} vs analytic", abs(value - target) <= 3 * se + 0.02 * abs(target),
                                       value, target, 3 * se + 0.02 * abs(target), f"se={se:.2e}"))
            discrete = sum(v for P, v in oracle[len(w)] if index_compatible(P, w))
            results.append(CheckResult(f"{model!r} {w.key} vs oracle", abs(value - discrete) <= 3 * se,
                                       value, discrete, 3 * se, f"se={se:.2e}"))
        odd = max(abs(mc.value(w)) - 4 * mc.se(w) for k in (1, 3) for w in _words(2, k))
        results.append(CheckResult(f"{model!r} odd levels", odd <= 0.0, odd, 0.0, 0.0, "max |mean| - 4 se"))
    return results


def suite_properties(options: Options) -> List[CheckResult]:
    rng = np.random.default_rng(int(options.get("seed", 11)))
    results = []

    model = FractionalBrownianMotion(0.4)
    sample = next(sample_paths(model, UniformGrid(0.0, 1.0, 32), 1, seed=3, dim=2))
    sig = pathwise_signature(sample, 5)
    for w1, w2 in [((1,), (2,)), ((1, 2), (2,)), ((1, 1), (2, 1)), ((2, 1), (1, 2, 2))]:
        a, b = Word(w1, 2), Word(w2, 2)
        lhs = sig[a] * sig[b]
        rhs = sum(mult * sig[w] for w, mult in shuffle(a, b).items())
        results.append(_check(f"pathwise shuffle {a.key} x {b.key}", rhs, lhs, 1e-10 * max(1.0, abs(lhs))))
        results.append(_check(f"shuffle multiplicities {a.key} x {b.key}", sum(shuffle(a, b).values()),
                              shuffle_count(len(a), len(b)), 0))

    pts = [np.cumsum(rng.normal(size=(4, 2)), axis=0) for _ in range(3)]
    x, y, z = (signature_of_path(p, 4) for p in pts)
    left, right = chen_product(chen_product(x, y), z), chen_product(x, chen_product(y, z))
    results.append(_check("Chen associativity", max(float(np.max(np.abs(a - b))) for a, b in zip(left.levels, right.levels)),
                          0.0, 1e-10))
    back = np.vstack([pts[0], pts[0][::-1]])
    loop = signature_of_path(back, 4) - TensorPolynomial.identity(2, 4)
    results.append(_check("path then reversal is the identity", max(float(np.max(np.abs(a))) for a in loop.levels), 0.0, 1e-10))

    odd = sum(len(enumerate_pairings(n, m)) for n in range(9) for m in range(n + 1) if (n - m) % 2)
    results.append(_check("parity vanishing", odd, 0, 0))
    for n in range(0, 9, 2):
        results.append(_check(f"pairings of {n}", len(enumerate_pairings(n, 0)), math.prod(range(n - 1, 0, -2)), 0))
        results.append(_check(f"pairing count of {n}", pairing_count(n, 0), math.prod(range(n - 1, 0, -2)), 0))

    a = rng.normal(size=(6, 6))
    cov = a @ a.T / 6
    draws = rng.multivariate_normal(np.zeros(6), cov, size=1_000_000)
    prods = np.prod(draws, axis=1)
    se = float(np.std(prods) / math.sqrt(len(prods)))
    results.append(_check("Wick vs sampled sixth moment", float(np.mean(prods)), wick_moment(cov), 3 * se))

    grid = np.linspace(0.0, 1.0, 65)[1:]
    for m in shipped_models():
        results.append(CheckResult(f"Gram PSD {m!r}", is_psd(gram_matrix(m, grid * m.max_time)), 1.0, 1.0, 0.0))

    for m in shipped_models():
        zero = expected_signature(m, 4, 0.3, 0.3, dim=2)
        results.append(CheckResult(f"zero interval {m!r}", zero.allclose(TensorPolynomial.identity(2, 4), rtol=0.0),
                                   1.0, 1.0, 0.0))

    for m in shipped_models():
        t = min(1.0, m.max_time)
        sig2 = expected_signature(m, 2, 0.1, t, dim=2)
        levy = 0.5 * (sig2[Word((1, 2), 2)] - sig2[Word((2, 1), 2)])
        results.append(_check(f"expected Levy area {m!r}", levy, 0.0, 0.0))

    fbm = FractionalBrownianMotion(0.75)
    h = fbm.hurst
    for u, v in [(0.1, 0.4), (0.3, 0.35), (0.5, 0.95)]:
        tail, _ = integrate.quad(lambda r: (v - r) ** (2 * h - 2), u, v, limit=200)
        lhs = 0.5 * fbm.dvar(v) - fbm.d2R(u, v)
        results.append(_check(f"H>1/2 consecutive form at ({u},{v})", lhs, h * (2 * h - 1) * tail, 1e-8))

    step = 1e-7
    for m in shipped_models():
        for t in (0.3, 0.7):
            t = t * m.max_time
            two_sided = m.d2R(t - step, t) + m.d2R(t, t - step)
            results.append(_check(f"two-sided diagonal derivative {m!r} at {t:.3g}", two_sided, m.dvar(t),
                                  1e-4 * max(1.0, abs(m.dvar(t)))))
    one_sided = 2 * fbm.d2R(0.5 - step, 0.5)
    results.append(_check("one-sided diagonal derivative fbm H=0.75", one_sided, fbm.dvar(0.5), 1e-3))
    return results


def suite_bounds(options: Options) -> List[CheckResult]:
    n_samples = int(options.get("samples", 2000))
    results = []
    for model in shipped_models():
        report = check_bounds(model, n_samples, seed=int(options.get("seed", 0)))
        flagged = [name for name, grows in report.unbounded.items() if grows]
        results.append(CheckResult(f"{model!r} ratios bounded", not flagged,
                                   max(report.arc, report.consecutive, report.dvar, report.increment),
                                   0.0, 0.0, "unbounded: " + ", ".join(flagged) if flagged else ""))
        results.append(CheckResult(f"{model!r} Gram PSD", report.gram_psd, 1.0, 1.0, 0.0))
    return results


SUITES: Dict[str, Callable[[Options], List[CheckResult]]] = {
    "bm-closed-form": suite_bm_closed_form,
    "level2-universal": suite_level2_universal,
    "appendix-level4": suite_appendix_level4,
    "h-half-degeneracy": suite_h_half,
    "self-similarity": suite_self_similarity,
    "one-pair": suite_one_pair,
    "oracle-convergence": suite_oracle_convergence,
    "shuffle-expectation": suite_shuffle_expectation,
    "chen-expectation": suite_chen_expectation,
    "martingale": suite_martingale,
    "montecarlo": suite_montecarlo,
    "properties": suite_properties,
    "bounds": suite_bounds,
}


def available_suites() -> List[str]:
    return sorted(SUITES)


def run_suite(name: str, **options: Any) -> List[CheckResult]:
    if name not in SUITES:
        raise UnknownSuiteError(name, available_suites())
    logger.info(f"Running suite {name} with options {options}")
    start = time.perf_counter()
    results = SUITES[name](options)
    failed = [r.name for r in results if not r.passed]
    logger.info(f"Suite {name}: {len(results) - len(failed)}/{len(results)} passed "
                f"in {time.perf_counter() - start:.1f}s")
    for r in failed:
        logger.warning(f"Suite {name}: check failed: {r}")
    return results
