"""Global worker-count cap consumed by per-block parallel sections."""

_max_workers = 1


def set_max_workers(n: int) -> None:
    global _max_workers
    _max_workers = max(1, int(n))


def get_max_workers() -> int:
    return _max_workers
