from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar('T')
R = TypeVar('R')

_CHUNKS_PER_WORKER = 4


class Executor:
    """
    Abstract Executor.

    Applies a per-node function to a sequence of inputs. Results always
    come back in input order, so callers that sort their inputs by node id
    get node-id-sorted outputs regardless of the executor.
    """

    def map(self, func: Callable[[T], R], items: Iterable[T]) -> List[R]:
        """
        Apply ``func`` to every item.

        Parameters
        ----------
        func : Callable
            Side-effect-free, picklable function.
        items : Iterable
            Inputs.
        """
        pass


class SerialExecutor(Executor):
    """
    Single-Threaded Executor.
    """
    def map(self, func: Callable[[T], R], items: Iterable[T]) -> List[R]:
        return [func(item) for item in items]


class ProcessExecutor(Executor):
    """
    Process pool Executor.

    Parameters
    ----------
    max_workers : int
        Number of worker processes.
    """
    def __init__(self, max_workers: int) -> None:
        assert max_workers > 1
        self._max_workers = max_workers

    def map(self, func: Callable[[T], R], items: Iterable[T]) -> List[R]:
        items = list(items)
        if not items:
            return []
        chunksize = max(
            1, len(items) // (self._max_workers * _CHUNKS_PER_WORKER)
        )
        with ProcessPoolExecutor(max_workers=self._max_workers) as pool:
            return list(pool.map(func, items, chunksize=chunksize))


def get_executor() -> Executor:
    from flapguard import get_max_workers
    workers = get_max_workers()
    if workers <= 1:
        return SerialExecutor()
    return ProcessExecutor(workers)
