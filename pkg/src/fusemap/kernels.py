"""Hot loops.  Compiled with numba when available, pure numpy otherwise.

Set ``FUSEMAP_BACKEND=numpy`` to force the fallback (``numba`` is the default
when it imports).
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _requested_backend() -> str:
    want = os.environ.get("FUSEMAP_BACKEND", "numba").strip().lower()
    if want not in ("numba", "numpy"):
        raise ValueError(f"FUSEMAP_BACKEND must be 'numba' or 'numpy', got {want!r}")
    return want if HAVE_NUMBA else "numpy"


BACKEND = _requested_backend()


def pareto_mask_numpy(x: np.ndarray, block: int = 512) -> np.ndarray:
    """Keep-mask for rows of ``x`` already sorted lexicographically.

    Row ``i`` is dropped if some row ``j`` is <= it everywhere and either
    strictly smaller somewhere or identical and earlier.  Works on object
    arrays too (used when int64 would overflow).
    """
    n = x.shape[0]
    keep = np.ones(n, dtype=bool)
    if n <= 1:
        return keep
    idx = np.arange(n)
    for lo in range(0, n, block):
        rows = x[lo:lo + block]                                   # (b, d)
        le = (x[None, :, :] <= rows[:, None, :]).all(axis=2)      # (b, n): x[j] <= row i
        lt = (x[None, :, :] < rows[:, None, :]).any(axis=2)
        earlier = idx[None, :] < idx[lo:lo + block, None]
        keep[lo:lo + block] = ~(le & (lt | earlier)).any(axis=1)
    return keep


if HAVE_NUMBA:

    @njit(cache=True)
    def _pareto_mask_sorted(x):  # pragma: no cover - compiled
        n, d = x.shape
        keep = np.ones(n, dtype=np.bool_)
        kept = np.empty(n, dtype=np.int64)
        nk = 0
        for i in range(n):
            dominated = False
            for kk in range(nk):
                j = kept[kk]
                ok = True
                for c in range(d):
                    if x[j, c] > x[i, c]:
                        ok = False
                        break
                if ok:
                    dominated = True
                    break
            if dominated:
                keep[i] = False
            else:
                kept[nk] = i
                nk += 1
        return keep


def pareto_mask_numba(x: np.ndarray) -> np.ndarray:
    """Same contract as :func:`pareto_mask_numpy` for int64 input."""
    if not HAVE_NUMBA:  # pragma: no cover
        return pareto_mask_numpy(x)
    return _pareto_mask_sorted(np.ascontiguousarray(x, dtype=np.int64))


def pareto_mask_sorted(x: np.ndarray, backend: str | None = None) -> np.ndarray:
    backend = backend or BACKEND
    if backend == "numba" and x.dtype == np.int64 and HAVE_NUMBA:
        return pareto_mask_numba(x)
    return pareto_mask_numpy(x)


def lexsort_rows(x: np.ndarray, ids: np.ndarray | None = None) -> np.ndarray:
    """Permutation sorting rows lexicographically, ties broken by ``ids``."""
    n = x.shape[0]
    if ids is None:
        ids = np.arange(n)
    if x.dtype == object:
        return np.array(sorted(range(n), key=lambda i: (tuple(x[i]), ids[i])), dtype=np.int64)
    keys = [ids] + [x[:, c] for c in range(x.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def pareto_select(x: np.ndarray, ids: np.ndarray | None = None, backend: str | None = None) -> np.ndarray:
    """Indices of the non-dominated rows, in (row, id) order; among duplicates the smallest id wins."""
    if x.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    if x.ndim != 2:
        raise ValueError("expected a 2-D criteria matrix")
    order = lexsort_rows(x, ids)
    mask = pareto_mask_sorted(x[order], backend)
    return order[mask]


def pareto_select_ranked(x: np.ndarray, rank: np.ndarray, lead: int = 2, backend: str | None = None) -> np.ndarray:
    """Rows that no other row weakly dominates with an excuse to win.

    Row ``j`` removes row ``i`` when ``x[j] <= x[i]`` everywhere and ``j``
    either is strictly better in one of the first ``lead`` (objective)
    columns or ties them with a smaller ``rank``.  This keeps the
    smallest-ranked member of every optimal tie alive, so the final choice
    does not depend on how aggressively intermediate states were pruned.
    """
    if x.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    if x.dtype == object:
        order = np.array(sorted(range(x.shape[0]), key=lambda i: (tuple(x[i, :lead]), rank[i])), dtype=np.int64)
    else:
        order = np.lexsort([rank] + [x[:, c] for c in range(lead - 1, -1, -1)])
    y = x[order]
    backend = backend or BACKEND
    if backend == "numba" and y.dtype == np.int64 and HAVE_NUMBA:
        mask = _pareto_mask_sorted(np.ascontiguousarray(y))
    else:
        mask = _weak_mask_numpy(y)
    return order[mask]


def _weak_mask_numpy(x: np.ndarray, block: int = 512) -> np.ndarray:
    n = x.shape[0]
    keep = np.ones(n, dtype=bool)
    idx = np.arange(n)
    for lo in range(0, n, block):
        rows = x[lo:lo + block]
        le = (x[None, :, :] <= rows[:, None, :]).all(axis=2)
        earlier = idx[None, :] < idx[lo:lo + block, None]
        keep[lo:lo + block] = ~(le & earlier).any(axis=1)
    return keep
