"""
Discrete stand-ins for the time-space norms of velocity and displacement
histories: maxima over the time grid of the L2 and H1 norms plus the L2 norms
of the first and second difference quotients in time.
"""

from __future__ import annotations

import numpy as np

__all__ = ["gram_norms", "history_norms", "relative_update"]


def gram_norms(gram, history) -> np.ndarray:
    """sqrt(u^T G u) for every row of ``history`` (T, N)."""
    history = np.atleast_2d(np.asarray(history, float))
    vals = np.einsum("tn,tn->t", history, (gram @ history.T).T)
    return np.sqrt(np.maximum(vals, 0.0))


def history_norms(disc, history, times, region: str) -> dict:
    """Per-term breakdown and ``total`` of the discrete norm on ``region``.

    ``region`` is ``"fluid"`` (velocity, F-type norm) or ``"solid"``
    (displacement, S-type norm).
    """
    history = np.atleast_2d(np.asarray(history, float))
    times = np.asarray(times, float)
    l2 = disc.grams[(region, "l2")]
    h1 = disc.grams[(region, "h1")]
    out = {"l2": float(gram_norms(l2, history).max(initial=0.0)),
           "h1": float(gram_norms(h1, history).max(initial=0.0)),
           "dt1": 0.0, "dt2": 0.0}
    if len(history) > 1:
        dt = np.diff(times)
        d1 = np.diff(history, axis=0) / dt[:, None]
        out["dt1"] = float(gram_norms(l2, d1).max())
        if len(history) > 2:
            mid = 0.5 * (dt[1:] + dt[:-1])
            d2 = np.diff(d1, axis=0) / mid[:, None]
            out["dt2"] = float(gram_norms(l2, d2).max())
    out["total"] = out["l2"] + out["h1"] + out["dt1"] + out["dt2"]
    return out


def relative_update(diff: float, size: float) -> float:
    """diff / size with 0/0 read as 0 (both iterates zero)."""
    if diff == 0.0:
        return 0.0
    return diff / size if size > 0 else np.inf
