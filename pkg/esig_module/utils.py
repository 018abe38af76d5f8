import os
from typing import Any, Callable, List, Optional, Sequence, Tuple

from .errors import ConfigError

THREADS_ENV = "ESIG_THREADS"


def get_unique_path(path: str) -> str:
    """Generates a unique filename: result.json -> result_1.json"""
    if not os.path.exists(path):
        return path
    base, ext = os.path.splitext(path)
    counter = 1
    new_path = f"{base}_{counter}{ext}"
    while os.path.exists(new_path):
        counter += 1
        new_path = f"{base}_{counter}{ext}"
    return new_path


def resolve_workers(requested: int = 0) -> int:
    """Worker count: explicit request or min(cpu, 6), capped by ESIG_THREADS."""
    cpu_cores = os.cpu_count() or 4
    workers = requested if requested > 0 else min(cpu_cores, 6)
    cap = os.environ.get(THREADS_ENV, "").strip()
    if cap:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, workers)


def format_word_key(letters: Sequence[int]) -> str:
    """(1, 1, 2, 2) -> "1,1,2,2"; the empty word renders as ""."""
    return ",".join(str(a) for a in letters)


def _parse_list(text: str, cast: Callable[[str], Any], what: str) -> List[Any]:
    try:
        return [cast(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"Expected a comma-separated list of {what}, got '{text}'", text) from None


def parse_word_key(key: str) -> Tuple[int, ...]:
    key = key.strip()
    if not key:
        return ()
    return tuple(_parse_list(key, int, "letters"))


def parse_int_list(text: str) -> List[int]:
    return _parse_list(text, int, "integers")


def parse_float_list(text: Optional[str]) -> List[float]:
    if not text:
        return []
    return _parse_list(text, float, "numbers")
