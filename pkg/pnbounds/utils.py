"""
Utilities Module

Seeding, the worker pool, logging setup and summary printers shared by the
bound engines and the CLI.
"""

import hashlib
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, TypeVar

import numpy as np
from tqdm import tqdm

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

LOG_LEVEL_ENV = "PNBOUNDS_LOG_LEVEL"
JOBS_ENV = "PNBOUNDS_JOBS"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def realization_seeds(master_seed: int, count: int) -> List[int]:
    """Independent child seeds of a master seed; child i depends only on (master_seed, i)."""
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def resolve_jobs(requested: Optional[int] = None) -> int:
    """Worker count from the CLI flag, then PNBOUNDS_JOBS, then 1."""
    if requested is None:
        requested = int(os.environ.get(JOBS_ENV, "1"))
    return max(1, int(requested))


def progress(iterable: Iterable[T], total: Optional[int] = None, desc: Optional[str] = None,
             enabled: bool = True) -> Iterable[T]:
    """tqdm wrapper; silent unless enabled and stderr is a terminal."""
    return tqdm(iterable, total=total, desc=desc, leave=False,
                disable=not enabled or not sys.stderr.isatty())


def parallel_map(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1,
                 desc: Optional[str] = None, show_progress: bool = False) -> List[R]:
    """
    Apply fn to every item, in-process or on a process pool.

    Results come back in item order whatever the completion order, so any
    reduction over them is deterministic.

    Args:
        fn: Picklable callable when jobs > 1
        items: Work items
        jobs: Worker processes; 1 runs in the calling process
        desc: Progress bar label
        show_progress: Show a tqdm bar on terminals

    Returns:
        List of results aligned with items
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in progress(items, total=len(items), desc=desc,
                                              enabled=show_progress)]

    results: List[Any] = [None] * len(items)
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as executor:
        futures = {executor.submit(fn, item): index for index, item in enumerate(items)}
        for future in progress(as_completed(futures), total=len(futures), desc=desc,
                               enabled=show_progress):
            results[futures[future]] = future.result()
    return results


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging once for CLI use (flag, then PNBOUNDS_LOG_LEVEL, then INFO)."""
    name = (level or os.environ.get(LOG_LEVEL_ENV) or "INFO").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        raise ValueError(f"Unknown log level: {name}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, stream=sys.stderr)


def config_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def print_config_summary(lines: Sequence[str], title: str = "RESOLVED CONFIGURATION") -> None:
    """Print resolved `key = value` lines under a banner."""
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)
    for line in lines:
        print(f"  {line}")
    print("=" * 60)


def print_sweep_summary(axis: str, rows: Sequence[Dict[str, Any]], columns: Sequence[str],
                        output_path: Optional[str] = None) -> None:
    """
    Print a compact table of one sweep.

    Args:
        axis: Swept quantity
        rows: Row dicts as written to the result file
        columns: Numeric columns to show
        output_path: Where the full results went
    """
    print("\n" + "=" * 60)
    print(f"SWEEP SUMMARY ({axis})")
    print("=" * 60)
    print("  ".join(["axis_value".rjust(12)] + [c.rjust(16) for c in columns] + ["status"]))
    print("-" * 60)
    for row in rows:
        cells = [f"{row['axis_value']:12.4g}"]
        cells += [f"{row.get(c, float('nan')):16.6e}" for c in columns]
        cells.append(str(row.get("status", "")))
        print("  ".join(cells))
    print("-" * 60)
    failed = sum(1 for row in rows if str(row.get("status", "ok")).startswith("error"))
    print(f"Points: {len(rows)}    Failed: {failed}")
    if output_path:
        print(f"Results saved to {output_path}")
    print("=" * 60)
