import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


def evaluate_diagram_task(args: Tuple[Any, Any, float, float, Tuple[float, ...], Any]) -> Tuple[bool, str, float, float]:
    """Integrates one diagram; returns (is_ok, method or message, value, err)."""
    from .analytic_engine import integrate_diagram
    from .errors import QuadratureError

    diagram, model, s, t, free_times, cfg = args
    logger.debug(f"Integrating {diagram.label} on [{s}, {t}] at {free_times}")
    try:
        value, err, method = integrate_diagram(diagram, model, s, t, free_times, cfg)
        return True, method, value, err
    except QuadratureError as e:
        logger.error(f"Quadrature failed for {diagram.label}: {e}", exc_info=True)
        return False, str(e), e.estimate, e.error_bound
    except Exception as e:
        logger.error(f"Error integrating {diagram.label}: {e}", exc_info=True)
        return False, f"{type(e).__name__}: {e}", float("nan"), float("nan")


def sample_batch_task(args: Tuple[Any, Any, int, int, int, np.random.SeedSequence]) -> Tuple[bool, str, Any]:
    """Samples one batch of paths and returns (is_ok, message, accumulator)."""
    from .montecarlo import accumulate_batch

    model, grid, depth, dim, n_paths, seed_seq = args
    logger.debug(f"Sampling {n_paths} paths, spawn key {seed_seq.spawn_key}")
    try:
        acc = accumulate_batch(model, grid, depth, dim, n_paths, seed_seq)
        return True, "ok", acc
    except Exception as e:
        logger.error(f"Error sampling batch {seed_seq.spawn_key}: {e}", exc_info=True)
        return False, f"{type(e).__name__}: {e}", None


def map_tasks(func: Callable[[Any], Any], tasks: Sequence[Any], workers: int = 1,
              progress: Optional[Callable[[int, int], None]] = None) -> List[Any]:
    """Runs tasks in a process pool and returns results in submission order."""
    total = len(tasks)
    if workers <= 1 or total <= 1:
        results = []
        for done, task in enumerate(tasks, start=1):
            results.append(func(task))
            if progress:
                progress(done, total)
        return results

    ordered: Dict[int, Any] = {}
    executor = ProcessPoolExecutor(max_workers=min(workers, total))
    try:
        futures = {executor.submit(func, task): idx for idx, task in enumerate(tasks)}
        for future in as_completed(futures):
            ordered[futures[future]] = future.result()
            if progress:
                progress(len(ordered), total)
    except KeyboardInterrupt:
        executor.shutdown(wait=False, cancel_futures=True)
        raise
    executor.shutdown(wait=True)
    return [ordered[idx] for idx in range(total)]
