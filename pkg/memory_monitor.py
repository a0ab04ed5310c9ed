"""Process memory checks used after loading large cubes."""

import logging

from run_config import env_int

logger = logging.getLogger(__name__)

MEMORY_WARN_ENV = "HSTC_MEMORY_WARN_MB"
DEFAULT_WARN_MB = 1024
MB = 1_048_576


def _get_process_memory_mb() -> float:
    """Resident memory of this process in MB (peak RSS without psutil)."""
    try:
        import psutil

        return psutil.Process().memory_info().rss / MB
    except Exception:
        try:
            import resource

            # ru_maxrss is kilobytes on Linux
            return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024
        except Exception:
            return 0.0


def array_megabytes(*arrays) -> float:
    """Combined ``nbytes`` of the given arrays in MB; ``None`` entries count as 0."""
    return sum(getattr(a, "nbytes", 0) for a in arrays) / MB


def log_memory_if_high(context: str, *arrays, threshold_mb: float = None) -> float:
    """Warn when process memory exceeds ``threshold_mb`` (env ``HSTC_MEMORY_WARN_MB``).

    ``arrays`` are the buffers just loaded; their size is included in the log
    line. Returns the measured process memory in MB.
    """
    if threshold_mb is None:
        threshold_mb = env_int(MEMORY_WARN_ENV, DEFAULT_WARN_MB)
    mem = _get_process_memory_mb()
    held = array_megabytes(*arrays)
    if mem > threshold_mb:
        logger.warning("High memory usage after %s: %.1f MB (%.1f MB in arrays)", context, mem, held)
    else:
        logger.debug("Memory after %s: %.1f MB (%.1f MB in arrays)", context, mem, held)
    return mem
