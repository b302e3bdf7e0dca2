"""Shared test oracles, kept independent of the code paths they check."""

from __future__ import annotations

import numpy as np

from ffcac import autodiff as ad


def rel_err(analytic, numeric, floor: float = 1e-2) -> float:
    """Max |a - n| / max(|a|, |n|, floor); the floor keeps near-zero
    gradients from inflating the ratio."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def grad_check(make_loss, params, h: float = 1e-5, floor: float = 1e-2,
               max_coords_per_tensor: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Worst relative error between backward() gradients and central
    differences, perturbing parameter values in place.

    ``make_loss`` must rebuild the graph from the current parameter values
    on every call. With ``max_coords_per_tensor`` set, a random coordinate
    subset of each tensor is probed (every tensor is still touched).
    """
    loss = make_loss()
    ad.zero_grads(params)
    ad.backward(loss)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.values) for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.values.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords_per_tensor is not None and flat.size > max_coords_per_tensor:
            assert rng is not None
            coords = rng.choice(flat.size, size=max_coords_per_tensor, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = make_loss().values.item()
            flat[i] = orig - h
            fm = make_loss().values.item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            worst = max(worst, rel_err(a.reshape(-1)[i], numeric, floor))
    return worst


def enumerate_patch_count(big_f: int, big_t: int, s_f: int, s_t: int, d: int) -> int:
    """Count valid patch origins by exhaustive enumeration."""
    rows = sum(1 for i in range(0, big_f + 1, d) if i + s_f <= big_f)
    cols = sum(1 for j in range(0, big_t + 1, d) if j + s_t <= big_t)
    return rows * cols


def reassemble_patches(patches: np.ndarray, rows: int, cols: int, s_f: int, s_t: int) -> np.ndarray:
    """Rebuild the cropped spectrogram from non-overlapping patches laid
    out frequency-major."""
    out = np.zeros((rows * s_f, cols * s_t))
    k = 0
    for i in range(rows):
        for j in range(cols):
            out[i * s_f : (i + 1) * s_f, j * s_t : (j + 1) * s_t] = patches[k].reshape(s_f, s_t)
            k += 1
    return out


def lstsq_weights(E: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Independent least-squares oracle (orthogonal factorization via SVD)."""
    w, *_ = np.linalg.lstsq(E, Y, rcond=None)
    return w
