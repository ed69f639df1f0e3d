"""Fields on the flat torus [0, 2π)^N sampled on a uniform periodic grid.

Scalar fields are arrays of shape ``(n,) * N``; vector fields carry the
component axis first, shape ``(N,) + (n,) * N``.  All differential operators
are spectral.  Integrals use the normalized Lebesgue measure, so an integral
is simply the grid mean and ``integral(1) == 1``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

MAGIC = b"PVL1"
_HEADER = struct.Struct("<4sBBI")


def _check_finite(a: np.ndarray, what: str = "field") -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``n`` points per axis on the N-torus."""

    dim: int = 2
    n: int = 64

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.n < 8 or self.n % 2:
            raise ValueError(f"n must be even and >= 8, got {self.n}")

    @property
    def h(self) -> float:
        return 2 * np.pi / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def vshape(self) -> tuple[int, ...]:
        return (self.dim,) + self.shape

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @cached_property
    def x(self) -> np.ndarray:
        """Coordinates, shape ``(N, n, ..., n)``."""
        x1 = np.arange(self.n) * self.h
        return np.array(np.meshgrid(*([x1] * self.dim), indexing="ij"))

    @cached_property
    def points(self) -> np.ndarray:
        """Grid points as a ``(n**N, N)`` array in row-major order."""
        return self.x.reshape(self.dim, -1).T.copy()

    @cached_property
    def k(self) -> np.ndarray:
        """Integer wavenumbers in FFT order, shape ``(N, n, ..., n)``."""
        k1 = np.fft.fftfreq(self.n, 1.0 / self.n)
        return np.array(np.meshgrid(*([k1] * self.dim), indexing="ij"))

    @cached_property
    def kd(self) -> np.ndarray:
        """Wavenumbers for odd derivatives: Nyquist modes zeroed."""
        kd = self.k.copy()
        kd[kd == -self.n // 2] = 0.0
        return kd

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.k**2, axis=0)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        return np.all(np.abs(self.k) <= self.n // 3, axis=0)

    # -- construction helpers ------------------------------------------------

    def zeros(self, vector: bool = True) -> np.ndarray:
        return np.zeros(self.vshape if vector else self.shape)

    def constant(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if c.shape != (self.dim,):
            raise ValueError(f"constant vector must have {self.dim} components")
        return np.broadcast_to(c.reshape((self.dim,) + (1,) * self.dim), self.vshape).copy()

    def _check(self, a: np.ndarray, vector: bool | None = None) -> None:
        if a.shape[-self.dim:] != self.shape:
            raise ValueError(f"field shape {a.shape} does not match grid {self.shape}")
        if vector is True and a.shape != self.vshape:
            raise ValueError(f"expected vector field of shape {self.vshape}, got {a.shape}")
        if vector is False and a.shape != self.shape:
            raise ValueError(f"expected scalar field of shape {self.shape}, got {a.shape}")

    # -- transforms ----------------------------------------------------------

    def transform(self, f: np.ndarray) -> np.ndarray:
        """Fourier coefficients normalized so a constant field maps to its value."""
        self._check(f)
        _check_finite(f)
        return np.fft.fftn(f, axes=self.axes) / self.n**self.dim

    def inverse_transform(self, fh: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(fh * self.n**self.dim, axes=self.axes).real

    def _apply(self, f: np.ndarray, mult: np.ndarray) -> np.ndarray:
        return self.inverse_transform(self.transform(f) * mult)

    # -- differential calculus -----------------------------------------------

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """Gradient of a scalar field; of a vector field gives ``out[j, i] = ∂_j f^i``."""
        self._check(f)
        fh = self.transform(f)
        return np.array([self.inverse_transform(1j * kj * fh) for kj in self.kd])

    def divergence(self, u: np.ndarray) -> np.ndarray:
        self._check(u, vector=True)
        uh = self.transform(u)
        return self.inverse_transform(np.sum(1j * self.kd * uh, axis=0))

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        self._check(f)
        return self._apply(f, -self.k2)

    def dealias(self, f: np.ndarray) -> np.ndarray:
        """Truncate to the 2/3-rule band."""
        return self._apply(f, self.dealias_mask)

    def advect(self, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        """``(u·∇)w`` with 2/3-rule dealiasing of the factors and the product."""
        self._check(u, vector=True)
        if w.shape[-self.dim:] != self.shape:
            raise ValueError("grid mismatch between advecting and advected field")
        mask = self.dealias_mask
        uh = self.transform(u) * mask
        wh = self.transform(w) * mask
        ud = self.inverse_transform(uh)
        dw = np.array([self.inverse_transform(1j * kj * wh) for kj in self.kd])
        prod = np.einsum("j...,j...->...", ud, dw) if w.ndim == self.dim else np.einsum(
            "j...,ji...->i...", ud, dw
        )
        return self.dealias(prod)

    def lie_bracket(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """``[u, v] = ∇_u v − ∇_v u``."""
        self._check(u, vector=True)
        self._check(v, vector=True)
        return self.advect(u, v) - self.advect(v, u)

    def leray_project(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Split ``u = P u + ∇φ``; returns ``(P u, φ)``.

        The zero mode of ``u`` stays in ``P u``.  Projection uses the same
        Nyquist-free wavenumbers as ``gradient``/``divergence`` so that the
        decomposition is exact in the discrete sense.
        """
        self._check(u, vector=True)
        uh = self.transform(u)
        kd = self.kd
        kk = np.sum(kd**2, axis=0)
        safe = np.where(kk == 0, 1.0, kk)
        kdotu = np.sum(kd * uh, axis=0)
        long = np.where(kk == 0, 0.0, kdotu / safe)
        proj = self.inverse_transform(uh - kd * long)
        phi = self.inverse_transform(-1j * long)
        return proj, phi

    # -- integrals -----------------------------------------------------------

    def integral(self, f: np.ndarray) -> float | np.ndarray:
        """Mean over the torus (normalized measure); leading axes are kept."""
        return f.mean(axis=self.axes)

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        self._check(u, vector=True)
        self._check(v, vector=True)
        return float(self.integral(np.sum(u * v, axis=0)))

    def pointwise_norm(self, u: np.ndarray) -> np.ndarray:
        return np.sqrt(np.sum(u * u, axis=0))

    def lq_integral(self, u: np.ndarray, q: float) -> float:
        """``∫ ‖u(x)‖^q dx``."""
        if not q > 1:
            raise ValueError(f"q must exceed 1, got {q}")
        return float(self.integral(self.pointwise_norm(u) ** q))

    def l2_norm(self, u: np.ndarray) -> float:
        """Scalar, vector or tensor fields: leading axes are summed pointwise."""
        sq = (u * u).reshape((-1,) + self.shape).sum(axis=0)
        return float(np.sqrt(self.integral(sq)))

    # -- off-grid evaluation -------------------------------------------------

    def interpolant(self, f: np.ndarray) -> SpectralInterpolant:
        return SpectralInterpolant(self, self.transform(f), vector=f.ndim > self.dim)

    def interpolate(self, f: np.ndarray, points: np.ndarray) -> np.ndarray:
        return self.interpolant(f)(points)


class SpectralInterpolant:
    """Trigonometric interpolant of a grid field, evaluable anywhere.

    Modes below ``tol`` times the largest coefficient are cropped away
    (the retained box is symmetric in each axis), which makes evaluation of
    band-limited fields cheap without changing values beyond round-off.
    """

    def __init__(self, grid: Grid, coeffs: np.ndarray, vector: bool = True, tol: float = 1e-13):
        self.grid = grid
        self.vector = vector
        c = coeffs if vector else coeffs[None]
        n, dim = grid.n, grid.dim
        amp = np.max(np.abs(c), axis=0)
        big = amp > tol * amp.max() if amp.max() > 0 else np.zeros_like(amp, dtype=bool)
        self.ks = []
        for j in range(dim):
            kj = np.abs(grid.k[j][big]).max() if big.any() else 0
            kj = int(kj)
            ks = np.arange(-n // 2, n // 2) if kj >= n // 2 else np.arange(-kj, kj + 1)
            self.ks.append(ks)
        box = c[(slice(None),) + np.ix_(*[ks % n for ks in self.ks])]
        self.box = np.moveaxis(box, 0, -1)  # (B0, ..., B_{N-1}, ncomp)
        self.kmax = [int(np.abs(ks).max()) for ks in self.ks]

    @staticmethod
    def _exps(xj: np.ndarray, ks: np.ndarray) -> np.ndarray:
        # ks is an ascending contiguous range -kneg..kpos
        kneg, kpos = -int(ks[0]), int(ks[-1])
        kmax = max(kneg, kpos)
        if kmax == 0:
            return np.ones((xj.size, 1), dtype=complex)
        base = np.exp(1j * xj)
        pw = np.empty((xj.size, kmax + 1), dtype=complex)
        pw[:, 0] = 1.0
        pw[:, 1] = base
        for m in range(2, kmax + 1):
            np.multiply(pw[:, m - 1], base, out=pw[:, m])
        out = np.empty((xj.size, kneg + kpos + 1), dtype=complex)
        np.conjugate(pw[:, kneg:0:-1], out=out[:, :kneg])
        out[:, kneg:] = pw[:, : kpos + 1]
        return out

    def basis(self, points: np.ndarray) -> list[np.ndarray]:
        """Per-axis exponential tables ``exp(i k x)`` for the retained modes."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.grid.dim:
            raise ValueError(f"points must have shape (P, {self.grid.dim})")
        return [self._exps(points[:, j], ks) for j, ks in enumerate(self.ks)]

    @staticmethod
    def contract(es: list[np.ndarray], box: np.ndarray) -> np.ndarray:
        """Sum a coefficient box ``(B0, ..., ncomp)`` against exponential tables."""
        # widest axis goes through the matmul, the rest through einsum
        first = int(np.argmax([e.shape[1] for e in es]))
        P, b0 = es[first].shape
        box = np.moveaxis(box, first, 0)
        t = (es[first] @ box.reshape(b0, -1)).reshape((P,) + box.shape[1:])
        for j, e in enumerate(es):
            if j != first:
                t = np.einsum("pb...,pb->p...", t, e)
        out = t.real
        _check_finite(out, "interpolated values")
        return out

    def __call__(self, points: np.ndarray) -> np.ndarray:
        out = self.contract(self.basis(points), self.box)
        return out if self.vector else out[:, 0]

    def gradient(self) -> SpectralInterpolant:
        """Interpolant of the gradient: component ``j*ncomp + i`` is ``∂_j f^i``."""
        g = self.grid
        kd = [np.where(ks == -g.n // 2, 0, ks) for ks in self.ks]
        mesh = np.meshgrid(*kd, indexing="ij")
        parts = [1j * kj[..., None] * self.box for kj in mesh]
        new = object.__new__(SpectralInterpolant)
        new.grid, new.vector, new.ks, new.kmax = g, True, self.ks, self.kmax
        new.box = np.concatenate(parts, axis=-1)
        return new


# -- serialization -------------------------------------------------------------


def write_field_dump(path: str | Path, grid: Grid, field: np.ndarray) -> None:
    """Binary dump: magic, u8 dim, u8 n_components, u32 n, then f64 components."""
    vector = field.ndim > grid.dim
    grid._check(field, vector=vector)
    ncomp = field.shape[0] if vector else 1
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, grid.dim, ncomp, grid.n))
        fh.write(np.ascontiguousarray(field, dtype="<f8").tobytes())


def read_field_dump(path: str | Path) -> tuple[Grid, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, dim, ncomp, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    grid = Grid(dim, n)
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    expected = ncomp * n**dim
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {data.size}")
    shape = grid.shape if ncomp == 1 else (ncomp,) + grid.shape
    return grid, data.reshape(shape).astype(float)


def write_field_csv(path: str | Path, grid: Grid, u: np.ndarray) -> None:
    """One row per grid point: coordinates then components."""
    comps = u.reshape(u.shape[0] if u.ndim > grid.dim else 1, -1).T
    names = [f"x{j + 1}" for j in range(grid.dim)] + [f"u{i + 1}" for i in range(comps.shape[1])]
    np.savetxt(path, np.hstack([grid.points, comps]), delimiter=",", header=",".join(names), comments="")
