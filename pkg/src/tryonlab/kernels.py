"""Small convolution/pooling primitives shared by the toy denoiser and the
random feature extractor. All convolutions are 3x3 cross-correlations with
zero padding, vectorized over a kernel bank via sliding windows."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "correlate3x3",
    "correlate3x3_adjoint",
    "correlate3x3_multi",
    "avg_pool2",
    "avg_pool2_adjoint",
    "softplus",
    "sigmoid",
]


def _windows(x: np.ndarray) -> np.ndarray:
    """(h, w, 3, 3) view of x padded with one ring of zeros."""
    xp = np.pad(x, 1)
    return sliding_window_view(xp, (3, 3))


def correlate3x3(x: np.ndarray, bank: np.ndarray) -> np.ndarray:
    """Cross-correlate (h, w) input with a (C, 3, 3) bank -> (C, h, w)."""
    return np.einsum("ijab,cab->cij", _windows(x), bank)


def correlate3x3_adjoint(dz: np.ndarray, bank: np.ndarray) -> np.ndarray:
    """Adjoint of correlate3x3 w.r.t. the input: (C, h, w) -> (h, w).

    Correlation's adjoint under zero padding is convolution, i.e.
    correlation with the spatially flipped kernels.
    """
    flipped = bank[:, ::-1, ::-1]
    dzp = np.pad(dz, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(dzp, (3, 3), axis=(1, 2))
    return np.einsum("cijab,cab->ij", win, flipped)


def correlate3x3_multi(x: np.ndarray, bank: np.ndarray) -> np.ndarray:
    """Cross-correlate (K, h, w) input with a (C, K, 3, 3) bank -> (C, h, w)."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))
    return np.einsum("kijab,ckab->cij", win, bank)


def avg_pool2(f: np.ndarray) -> np.ndarray:
    """2x2 average pooling over the last two (even) axes."""
    h, w = f.shape[-2], f.shape[-1]
    return f.reshape(*f.shape[:-2], h // 2, 2, w // 2, 2).mean(axis=(-3, -1))


def avg_pool2_adjoint(g: np.ndarray) -> np.ndarray:
    """Adjoint of avg_pool2: spread each cell over its 2x2 block / 4."""
    return np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    np.exp(-np.abs(z), out=out)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + out[pos])
    out[~pos] = out[~pos] / (1.0 + out[~pos])
    return out
