import hashlib
import json
import math
import traceback
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Any, Callable, Dict, Mapping, Optional

import numpy as np
from tqdm import tqdm

from .logger import get_logger


def array_digest(*arrays: np.ndarray) -> str:
    """SHA-256 over the float64 bytes of the given arrays, in order.

    Args:
        arrays: Arrays to fingerprint

    Returns:
        Hex digest identifying the exact numeric content
    """
    sha256 = hashlib.sha256()
    for arr in arrays:
        data = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
        sha256.update(str(data.shape).encode())
        sha256.update(data.tobytes())
    return sha256.hexdigest()


def text_digest(text: str, length: Optional[int] = None) -> str:
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return digest[:length] if length else digest


def canonical_json(value: Any) -> str:
    """Compact JSON with sorted keys, used for config fingerprints."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def run_parallel(
    tasks: Mapping[Any, Callable[[], Any]],
    workers: int = 1,
    desc: Optional[str] = None,
    progress: Optional[bool] = False,
) -> Dict[Any, Any]:
    """Run independent tasks and return their results keyed like ``tasks``.

    Results never depend on completion order. ``progress=None`` lets tqdm
    show a bar only on a terminal.
    """
    results: Dict[Any, Any] = {}
    disable = None if progress is None else not progress
    with tqdm(total=len(tasks), desc=desc, unit="task", disable=disable) as bar:
        if workers <= 1:
            for key, task in tasks.items():
                results[key] = task()
                bar.update(1)
            return results
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(task): key for key, task in tasks.items()}
            for future in as_completed(futures):
                try:
                    results[futures[future]] = future.result()
                except Exception as e:
                    get_logger().error(json.dumps({
                        "event": "future_exception",
                        "task": str(futures[future]),
                        "error": str(e),
                        "traceback": traceback.format_exc(),
                    }))
                    raise
                bar.update(1)
    return {key: results[key] for key in tasks}
