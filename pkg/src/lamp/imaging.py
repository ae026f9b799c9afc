"""Degradation, image-quality metrics, the linear-Gaussian posterior oracle,
and array file formats."""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .linops import SpectralOperator
from .priors import GaussianPrior

__all__ = [
    "degrade",
    "mse",
    "psnr",
    "ssim",
    "exact_posterior_mean",
    "write_tensor",
    "read_tensor",
    "tensor_bytes",
    "write_pnm",
    "read_pgm",
    "TENSOR_MAGIC",
]

TENSOR_MAGIC = b"LTNSR1\x00"


def degrade(x0, op: SpectralOperator, sigma_y: float, seed: int) -> np.ndarray:
    """``y = K x0 + sigma_y z`` with ``z`` from ``default_rng(seed)``."""
    if sigma_y < 0:
        raise ValueError("sigma_y must be >= 0")
    y = op.apply(x0)
    if sigma_y == 0:
        return y
    z = np.random.default_rng(seed).standard_normal(op.out_shape)
    return y + sigma_y * z


def mse(x, ref) -> float:
    x, ref = np.asarray(x, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    return float(np.mean((x - ref) ** 2))


def psnr(x, ref, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``inf``."""
    err = mse(x, ref)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def _gauss_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def _local_mean(img, win):
    # 'valid' windowed average
    patches = sliding_window_view(img, win.shape)
    return np.einsum("ijkl,kl->ij", patches, win)


def ssim(x, ref, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity (Gaussian window, K1=0.01, K2=0.03).

    Accepts ``(H, W)`` or ``(C, H, W)``; channels are averaged. Only windows
    fully inside the image contribute.
    """
    x, ref = np.asarray(x, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    if x.ndim == 2:
        x, ref = x[None], ref[None]
    if min(x.shape[-2:]) < win_size:
        raise ValueError(f"image side {min(x.shape[-2:])} smaller than SSIM window {win_size}")
    win = _gauss_window(win_size, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    vals = []
    for a, b in zip(x, ref):
        mu_a, mu_b = _local_mean(a, win), _local_mean(b, win)
        var_a = _local_mean(a * a, win) - mu_a**2
        var_b = _local_mean(b * b, win) - mu_b**2
        cov = _local_mean(a * b, win) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def exact_posterior_mean(prior: GaussianPrior, op: SpectralOperator, y, sigma_y: float) -> np.ndarray:
    """Posterior mean of ``x0`` given ``y = K x0 + N(0, sigma_y^2)``.

    Requires the prior covariance to be diagonal in ``op``'s right singular
    basis (``prior.basis is op``).
    """
    a = np.where(op.observed, op.spectrum, 0.0)
    c = prior.spectral_var
    m_bar = op.to_spectral(prior.mean)
    y_bar = op.to_spectral_out(y)
    den = a * a * c + sigma_y**2
    ok = den > 0
    gain = np.where(ok, c * a / np.where(ok, den, 1.0), 0.0)
    return op.from_spectral(m_bar + gain * (y_bar - a * m_bar))


# ---------------------------------------------------------------------------
# raw tensor format: magic, u32 rank, u32 dims, float64 payload (all LE)


def tensor_bytes(arr) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = TENSOR_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(tensor_bytes(arr))


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    n = len(TENSOR_MAGIC)
    if raw[:n] != TENSOR_MAGIC:
        raise ValueError(f"{path}: bad tensor magic")
    (rank,) = struct.unpack_from("<I", raw, n)
    dims = struct.unpack_from(f"<{rank}I", raw, n + 4)
    off = n + 4 + 4 * rank
    count = math.prod(dims)
    if len(raw) - off != 8 * count:
        raise ValueError(f"{path}: payload size does not match dims {dims}")
    return np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(dims).astype(np.float64)


def write_pnm(path, img) -> None:
    """8-bit PGM (1 channel) or PPM (3 channels); values clamped to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    c, h, w = img.shape
    q = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    if c == 1:
        Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + q[0].tobytes())
    elif c == 3:
        Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + q.transpose(1, 2, 0).tobytes())
    else:
        raise ValueError("PNM export needs 1 or 3 channels")


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM/PPM into ``(C, H, W)`` floats in [0, 1]."""
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos].decode())
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic not in ("P5", "P6") or maxval > 255:
        raise ValueError(f"{path}: only 8-bit P5/P6 supported")
    c = 1 if magic == "P5" else 3
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * c, offset=pos + 1)
    return (data.reshape(h, w, c).transpose(2, 0, 1) / maxval).astype(np.float64)
