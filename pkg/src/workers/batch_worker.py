"""
Batch Worker Module

Runs a per-image job over many inputs on a thread pool, reporting progress
and errors, and hands results back in input order.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

from tqdm import tqdm

from src.core.logger import PlaceLogger

T = TypeVar('T')
R = TypeVar('R')


class BatchWorker:
    """Thread pool for independent per-image stages."""

    def __init__(self, threads: int = 1, description: str = 'processing',
                 show_progress: bool = True):
        """
        Initialize the worker.

        Args:
            threads: Maximum number of concurrent jobs
            description: Label of the progress bar
            show_progress: Display a tqdm progress bar on stderr
        """
        self.threads = max(1, threads)
        self.description = description
        self.show_progress = show_progress
        self.logger = PlaceLogger('workers')

    def run(self, job: Callable[[T], R], items: Sequence[T],
            on_error: Optional[Callable[[T, Exception], R]] = None) -> List[R]:
        """
        Apply `job` to every item.

        Args:
            job: Function of one item
            items: Inputs
            on_error: Called with (item, exception) when a job fails; its return
                value replaces the result. Without it the first error is re-raised
                after all jobs finish.

        Returns:
            List of results aligned with `items`
        """
        self.logger.info(f"Starting {self.description}: {len(items)} items, {self.threads} threads")
        results: List[R] = [None] * len(items)
        first_error: Optional[Exception] = None

        with ThreadPoolExecutor(max_workers=self.threads) as pool, \
                tqdm(total=len(items), desc=self.description, disable=not self.show_progress,
                     leave=False) as progress:
            futures = [pool.submit(job, item) for item in items]
            for index, future in enumerate(futures):
                try:
                    results[index] = future.result()
                except Exception as e:
                    if on_error is None:
                        self.logger.error(f"{self.description} failed on item {index}: {e}")
                        if first_error is None:
                            first_error = e
                    else:
                        results[index] = on_error(items[index], e)
                progress.update(1)

        if first_error is not None:
            raise first_error
        self.logger.info(f"Finished {self.description}")
        return results
