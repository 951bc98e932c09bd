from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from threading import Lock
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar

T = TypeVar("T")


class SweepRunner:
    """Runs independent pipeline jobs, serially or on a thread pool, keeping submission order."""

    def __init__(self, workers: int = 1) -> None:
        self._workers = max(1, int(workers))
        self._lock = Lock()
        self._active: set[str] = set()
        self._submitted = 0
        self._completed = 0
        self._failed = 0

    def run_all(self, name: str, jobs: Sequence[Callable[[], T]]) -> List[T]:
        job_ids = [f"{name}:{index}" for index in range(len(jobs))]
        with self._lock:
            self._submitted += len(jobs)

        if self._workers == 1 or len(jobs) <= 1:
            outcomes = [self._run_one(job_id, job) for job_id, job in zip(job_ids, jobs)]
        else:
            with ThreadPoolExecutor(max_workers=self._workers, thread_name_prefix=name) as pool:
                futures = [pool.submit(self._run_one, job_id, job) for job_id, job in zip(job_ids, jobs)]
                outcomes = [future.result() for future in futures]

        first_error: Optional[BaseException] = next((error for _, error in outcomes if error is not None), None)
        if first_error is not None:
            raise first_error
        return [value for value, _ in outcomes]  # type: ignore[misc]

    def _run_one(self, job_id: str, job: Callable[[], T]) -> tuple[Optional[T], Optional[BaseException]]:
        with self._lock:
            self._active.add(job_id)
        try:
            value = job()
        except Exception as exc:
            with self._lock:
                self._failed += 1
            return None, exc
        finally:
            with self._lock:
                self._active.discard(job_id)
        with self._lock:
            self._completed += 1
        return value, None

    def snapshot(self) -> Dict[str, Any]:
        with self._lock:
            return {
                "workers": self._workers,
                "submitted": self._submitted,
                "active": len(self._active),
                "completed": self._completed,
                "failed": self._failed,
            }
