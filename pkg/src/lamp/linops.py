"""Linear forward operators with explicit SVD structure.

Every operator acts on images of shape ``(C, H, W)`` and exposes its
singular value decomposition ``K = U S V^T`` through four maps:

* ``to_spectral(x)``       -> ``V^T x``   (input side)
* ``from_spectral(xbar)``  -> ``V xbar``
* ``to_spectral_out(y)``   -> ``U^T y``   embedded in the input spectral layout
* ``from_spectral_out(yb)``-> ``U yb``

Spectral arrays share the input layout, and ``spectrum`` holds the singular
value belonging to each spectral slot (zero on the null space), so the
componentwise corrections can work elementwise.
"""

from __future__ import annotations

import math
from typing import Any

import numpy as np
from scipy import fft as sfft

from .errors import ConfigError

__all__ = [
    "SpectralOperator",
    "ConvolutionOperator",
    "BlockAverageOperator",
    "DenseOperator",
    "gaussian_kernel",
    "motion_kernel",
    "make_gaussian_blur",
    "make_motion_blur",
    "make_block_sr",
    "make_identity",
    "make_dense",
    "operator_from_config",
    "dense_oracle",
    "dense_adjoint_oracle",
    "DENSE_ORACLE_MAX_DIM",
]

DENSE_ORACLE_MAX_DIM = 4096
ZERO_REL_TOL = 1e-10


def _as_shape(shape) -> tuple[int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 2:
        shape = (1,) + shape
    if len(shape) != 3 or min(shape) < 1:
        raise ConfigError(f"expected (channels, height, width), got {shape}", "shape")
    return shape


class SpectralOperator:
    """Base class. Subclasses fill in the four spectral maps."""

    kind: str = "abstract"

    def __init__(self, in_shape, out_shape, spectrum: np.ndarray):
        self.in_shape = _as_shape(in_shape)
        self.out_shape = _as_shape(out_shape)
        spectrum = np.asarray(spectrum, dtype=np.float64)
        if spectrum.shape != self.in_shape:
            raise ValueError("spectrum must share the input layout")
        spectrum.setflags(write=False)
        self.spectrum = spectrum
        self.a_tol = ZERO_REL_TOL * float(spectrum.max()) if spectrum.size else 0.0
        observed = spectrum > self.a_tol
        observed.setflags(write=False)
        self.observed = observed

    # -- spectral maps -----------------------------------------------------
    def to_spectral(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def from_spectral(self, xbar: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_spectral_out(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def from_spectral_out(self, ybar: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- derived maps ------------------------------------------------------
    def apply(self, x: np.ndarray) -> np.ndarray:
        self._check(x, self.in_shape)
        return self.from_spectral_out(self.spectrum * self.to_spectral(x))

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        self._check(y, self.out_shape)
        return self.from_spectral(self.spectrum * self.to_spectral_out(y))

    def pinv_apply(self, y: np.ndarray) -> np.ndarray:
        """Moore-Penrose pseudo-inverse with singular values <= a_tol dropped."""
        self._check(y, self.out_shape)
        ybar = self.to_spectral_out(y)
        safe = np.where(self.observed, self.spectrum, 1.0)
        return self.from_spectral(np.where(self.observed, ybar / safe, 0.0))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)

    @property
    def in_dim(self) -> int:
        return math.prod(self.in_shape)

    @property
    def out_dim(self) -> int:
        return math.prod(self.out_shape)

    def to_config(self) -> dict[str, Any]:
        return {"kind": self.kind}

    def _check(self, arr: np.ndarray, shape: tuple[int, ...]) -> None:
        if np.shape(arr) != shape:
            raise ValueError(f"{self.kind}: expected shape {shape}, got {np.shape(arr)}")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(kind={self.kind!r}, in_shape={self.in_shape}, out_shape={self.out_shape})"


# ---------------------------------------------------------------------------
# circular convolution


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized isotropic Gaussian taps on a ``size x size`` grid."""
    if size < 1 or size % 2 == 0:
        raise ConfigError("must be a positive odd integer", "kernel_size")
    if not sigma > 0:
        raise ConfigError("must be positive", "sigma")
    r = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def _splat(kernel: np.ndarray, px: float, py: float, w: float) -> None:
    # bilinear deposit; rows are y, columns are x
    size = kernel.shape[0]
    x0, y0 = math.floor(px), math.floor(py)
    fx, fy = px - x0, py - y0
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yy, xx = y0 + dy, x0 + dx
            if 0 <= yy < size and 0 <= xx < size and wx * wy > 0:
                kernel[yy, xx] += w * wx * wy


def motion_kernel(size: int, intensity: float, seed: int) -> np.ndarray:
    """Seeded camera-shake kernel.

    A walk of ``4 * size`` equal steps starts heading along +x; each step
    turns by ``intensity * N(0, 1) * pi / 4`` radians. The path is centred on
    its midpoint, shrunk to fit the kernel support and deposited with bilinear
    weights. ``intensity = 0`` gives a straight horizontal streak.
    """
    if size < 1 or size % 2 == 0:
        raise ConfigError("must be a positive odd integer", "kernel_size")
    if not 0.0 <= intensity <= 1.0:
        raise ConfigError("must lie in [0, 1]", "intensity")
    rng = np.random.default_rng(seed)
    n_steps = 4 * size
    turns = intensity * rng.standard_normal(n_steps) * (math.pi / 4)
    turns[0] = 0.0
    heading = np.cumsum(turns)
    step = (size - 1) / n_steps
    pts = np.zeros((n_steps + 1, 2))
    pts[1:, 0] = np.cumsum(step * np.cos(heading))
    pts[1:, 1] = np.cumsum(step * np.sin(heading))
    pts -= 0.5 * (pts.max(axis=0) + pts.min(axis=0))
    half = (size - 1) / 2
    extent = np.abs(pts).max()
    if extent > half:
        pts *= half / extent
    kernel = np.zeros((size, size))
    for px, py in pts + half:
        _splat(kernel, float(px), float(py), 1.0)
    return kernel / kernel.sum()


class ConvolutionOperator(SpectralOperator):
    """Per-channel circular convolution, diagonal in the unitary 2-D DFT.

    Singular values are ``|khat|``; the phase of ``khat`` lives in ``U``.
    """

    def __init__(self, shape, kernel: np.ndarray, kind: str = "convolution", params: dict | None = None):
        shape = _as_shape(shape)
        kernel = np.asarray(kernel, dtype=np.float64)
        kh, kw = kernel.shape
        _, h, w = shape
        if kh > h or kw > w:
            raise ConfigError(f"kernel {kernel.shape} larger than image {(h, w)}", "kernel_size")
        pad = np.zeros((h, w))
        pad[:kh, :kw] = kernel
        pad = np.roll(pad, (-(kh // 2), -(kw // 2)), axis=(0, 1))
        khat = np.fft.fft2(pad)
        mag = np.abs(khat)
        phase = np.where(mag > 0, khat / np.where(mag > 0, mag, 1.0), 1.0)
        self.kind = kind
        self.kernel = kernel
        self.params = dict(params or {})
        self.khat = khat
        self.phase = phase
        super().__init__(shape, shape, np.broadcast_to(mag, shape).copy())

    def to_spectral(self, x):
        return sfft.fft2(x, norm="ortho")

    def from_spectral(self, xbar):
        return sfft.ifft2(xbar, norm="ortho").real

    def to_spectral_out(self, y):
        return np.conj(self.phase) * sfft.fft2(y, norm="ortho")

    def from_spectral_out(self, ybar):
        return sfft.ifft2(self.phase * ybar, norm="ortho").real

    def to_config(self):
        return {"kind": self.kind, **self.params}


def make_gaussian_blur(shape, kernel_size: int = 61, sigma: float = 3.0) -> ConvolutionOperator:
    kernel = gaussian_kernel(kernel_size, sigma)
    return ConvolutionOperator(
        shape, kernel, "gaussian_blur", {"kernel_size": kernel_size, "sigma": sigma}
    )


def make_motion_blur(shape, kernel_size: int = 61, intensity: float = 0.5, seed: int = 0) -> ConvolutionOperator:
    kernel = motion_kernel(kernel_size, intensity, seed)
    return ConvolutionOperator(
        shape,
        kernel,
        "motion_blur",
        {"kernel_size": kernel_size, "intensity": intensity, "seed": seed},
    )


# ---------------------------------------------------------------------------
# block-average super-resolution


class BlockAverageOperator(SpectralOperator):
    """Average every non-overlapping ``r x r`` block.

    ``V`` is the orthonormal 2-D DCT-II inside each block: its DC atom is the
    normalized block average, the only direction with a nonzero singular
    value ``1/r``. ``U`` is the identity on the low-resolution grid, whose
    samples sit at the DC slots of the input layout.
    """

    kind = "block_sr"

    def __init__(self, shape, factor: int):
        shape = _as_shape(shape)
        c, h, w = shape
        r = int(factor)
        if r < 1:
            raise ConfigError("must be a positive integer", "factor")
        if h % r or w % r:
            raise ConfigError(f"image {(h, w)} not divisible by {r}", "factor")
        self.factor = r
        spectrum = np.zeros(shape)
        spectrum[:, ::r, ::r] = 1.0 / r
        super().__init__(shape, (c, h // r, w // r), spectrum)

    def _blocks(self, x):
        c, h, w = self.in_shape
        r = self.factor
        return x.reshape(c, h // r, r, w // r, r).transpose(0, 1, 3, 2, 4)

    def _unblocks(self, b):
        c, h, w = self.in_shape
        return b.transpose(0, 1, 3, 2, 4).reshape(c, h, w)

    def to_spectral(self, x):
        if self.factor == 1:
            return np.array(x, dtype=np.float64)
        return self._unblocks(sfft.dctn(self._blocks(x), axes=(3, 4), norm="ortho"))

    def from_spectral(self, xbar):
        xbar = np.real(xbar)
        if self.factor == 1:
            return np.array(xbar, dtype=np.float64)
        return self._unblocks(sfft.idctn(self._blocks(xbar), axes=(3, 4), norm="ortho"))

    def to_spectral_out(self, y):
        r = self.factor
        out = np.zeros(self.in_shape, dtype=np.result_type(y, np.float64))
        out[:, ::r, ::r] = y
        return out

    def from_spectral_out(self, ybar):
        r = self.factor
        return np.array(np.real(ybar[:, ::r, ::r]), dtype=np.float64)

    def to_config(self):
        return {"kind": self.kind, "factor": self.factor}


def make_block_sr(shape, factor: int = 4) -> BlockAverageOperator:
    return BlockAverageOperator(shape, factor)


def make_identity(shape) -> BlockAverageOperator:
    """Identity operator (block average with ``r = 1``)."""
    return BlockAverageOperator(shape, 1)


# ---------------------------------------------------------------------------
# explicit matrix


class DenseOperator(SpectralOperator):
    """Explicit ``m x n`` matrix (``m <= n``) acting on flattened images."""

    kind = "dense"

    def __init__(self, in_shape, out_shape, matrix: np.ndarray):
        in_shape, out_shape = _as_shape(in_shape), _as_shape(out_shape)
        matrix = np.asarray(matrix, dtype=np.float64)
        m, n = math.prod(out_shape), math.prod(in_shape)
        if matrix.shape != (m, n):
            raise ConfigError(f"matrix shape {matrix.shape} != {(m, n)}", "matrix")
        if m > n:
            raise ConfigError("dense operators need out_dim <= in_dim", "matrix")
        u, s, vt = np.linalg.svd(matrix, full_matrices=True)
        self.matrix = matrix
        self._u, self._vt = u, vt
        spectrum = np.zeros(n)
        spectrum[:m] = s
        super().__init__(in_shape, out_shape, spectrum.reshape(in_shape))

    def to_spectral(self, x):
        return (self._vt @ np.ravel(x)).reshape(self.in_shape)

    def from_spectral(self, xbar):
        return (self._vt.T @ np.real(np.ravel(xbar))).reshape(self.in_shape)

    def to_spectral_out(self, y):
        out = np.zeros(self.in_dim)
        out[: self.out_dim] = self._u.T @ np.ravel(y)
        return out.reshape(self.in_shape)

    def from_spectral_out(self, ybar):
        yb = np.real(np.ravel(ybar))[: self.out_dim]
        return (self._u @ yb).reshape(self.out_shape)

    def apply(self, x):
        self._check(x, self.in_shape)
        return (self.matrix @ np.ravel(x)).reshape(self.out_shape)

    def adjoint(self, y):
        self._check(y, self.out_shape)
        return (self.matrix.T @ np.ravel(y)).reshape(self.in_shape)


def make_dense(in_shape, out_shape, matrix) -> DenseOperator:
    return DenseOperator(in_shape, out_shape, matrix)


# ---------------------------------------------------------------------------


def operator_from_config(cfg: dict[str, Any], shape) -> SpectralOperator:
    """Build an operator from ``{"kind", "kernel_size", "sigma" | "intensity" | "factor", "seed"}``."""
    kind = cfg.get("kind")
    if kind == "gaussian_blur":
        return make_gaussian_blur(shape, int(cfg.get("kernel_size", 61)), float(cfg.get("sigma", 3.0)))
    if kind == "motion_blur":
        return make_motion_blur(
            shape,
            int(cfg.get("kernel_size", 61)),
            float(cfg.get("intensity", 0.5)),
            int(cfg.get("seed", 0)),
        )
    if kind == "block_sr":
        return make_block_sr(shape, int(cfg.get("factor", 4)))
    if kind == "identity":
        return make_identity(shape)
    raise ConfigError(
        f"unknown operator kind {kind!r}; expected gaussian_blur, motion_blur, block_sr or identity",
        "operator.kind",
    )


def _guard(n: int) -> None:
    if n > DENSE_ORACLE_MAX_DIM:
        raise ValueError(f"dense oracle refused: dimension {n} > {DENSE_ORACLE_MAX_DIM}")


def dense_oracle(op: SpectralOperator) -> np.ndarray:
    """Explicit matrix of ``op.apply``, built one basis vector at a time."""
    _guard(op.in_dim)
    cols = np.empty((op.out_dim, op.in_dim))
    e = np.zeros(op.in_dim)
    for j in range(op.in_dim):
        e[j] = 1.0
        cols[:, j] = np.ravel(op.apply(e.reshape(op.in_shape)))
        e[j] = 0.0
    return cols


def dense_adjoint_oracle(op: SpectralOperator) -> np.ndarray:
    """Explicit matrix of ``op.adjoint``."""
    _guard(op.in_dim)
    cols = np.empty((op.in_dim, op.out_dim))
    e = np.zeros(op.out_dim)
    for j in range(op.out_dim):
        e[j] = 1.0
        cols[:, j] = np.ravel(op.adjoint(e.reshape(op.out_shape)))
        e[j] = 0.0
    return cols
