"""Perturbation flows ``e_t(εv)`` of the torus and the drift they induce.

A perturbation direction is separable, ``v_t(x) = s(t) w(x)``, with a
divergence-free spatial profile ``w`` and a scalar envelope ``s`` that
vanishes at both ends of ``[0, T]``.  The flow solves

    d/dt e_t = ε v̇_t(e_t),   e_0 = id,

and is stored as the identity plus a periodic displacement field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .torus import Grid, read_field_dump, write_field_dump

TWO_PI = 2 * np.pi


class FlowError(RuntimeError):
    """Raised when a flow cannot be integrated or inverted reliably."""


@dataclass(frozen=True)
class Envelope:
    """Scalar time profile ``s`` on ``[0, T]`` with closed-form derivative ``ds``."""

    T: float
    s: Callable[[float], float]
    ds: Callable[[float], float]
    label: str = "custom"

    def check_endpoints(self, rtol: float = 1e-12) -> None:
        ts = np.linspace(0.0, self.T, 101)
        scale = max(max(abs(self.s(t)) for t in ts), 1e-300)
        for t in (0.0, self.T):
            if abs(self.s(t)) > rtol * scale:
                raise ValueError(f"envelope must vanish at t={t} (v_0 = v_T = 0), got s={self.s(t)!r}")


def bump_envelope(T: float = 1.0, poly: Sequence[float] = (1.0,), amplitude: float = 16.0) -> Envelope:
    """``s(t) = amplitude · τ²(1−τ)² p(τ)`` with ``τ = t/T``.

    Evaluated in factored form so ``s(0)`` and ``s(T)`` are exactly zero.
    With the default ``p = 1`` the peak value is 1.
    """
    p = Polynomial(poly)
    dp = p.deriv()

    def s(t):
        tau = t / T
        return amplitude * tau**2 * (1 - tau) ** 2 * p(tau)

    def ds(t):
        tau = t / T
        b = tau**2 * (1 - tau) ** 2
        db = 2 * tau * (1 - tau) ** 2 - 2 * tau**2 * (1 - tau)
        return amplitude * (db * p(tau) + b * dp(tau)) / T

    return Envelope(T, s, ds, label=f"bump{tuple(poly)}")


@dataclass(frozen=True)
class TestVectorField:
    """Admissible perturbation direction ``v_t(x) = s(t) w(x)``."""

    __test__ = False  # keep pytest from collecting this class

    grid: Grid
    profile: np.ndarray
    envelope: Envelope
    label: str = ""

    def __post_init__(self):
        self.grid._check(self.profile, vector=True)
        scale = max(np.abs(self.profile).max(), 1e-300)
        div = np.abs(self.grid.divergence(self.profile)).max()
        if div > 1e-10 * scale:
            raise ValueError(f"test field profile is not divergence-free (max|div|={div:.3e})")
        self.envelope.check_endpoints()

    @property
    def T(self) -> float:
        return self.envelope.T

    def v(self, t: float) -> np.ndarray:
        return self.envelope.s(t) * self.profile

    def vdot(self, t: float) -> np.ndarray:
        return self.envelope.ds(t) * self.profile


@dataclass(frozen=True)
class TorusMap:
    """Map ``x ↦ x + displacement(x) (mod 2π)`` of the torus at time ``t``."""

    grid: Grid
    displacement: np.ndarray
    t: float = 0.0
    _interp: list = field(default_factory=list, repr=False, compare=False)

    @classmethod
    def identity(cls, grid: Grid, t: float = 0.0) -> TorusMap:
        return cls(grid, grid.zeros(), t)

    def positions(self) -> np.ndarray:
        """Images of the grid points, unwrapped, shape ``(N, n, ..., n)``."""
        return self.grid.x + self.displacement

    def interpolant(self):
        if not self._interp:
            self._interp.append(self.grid.interpolant(self.displacement))
        return self._interp[0]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate the map at arbitrary ``(P, N)`` points (unwrapped)."""
        return points + self.interpolant()(points)

    def is_identity(self) -> bool:
        return not np.any(self.displacement)

    def save(self, path: str | Path) -> None:
        write_field_dump(path, self.grid, self.displacement)

    @classmethod
    def load(cls, path: str | Path, t: float = 0.0) -> TorusMap:
        grid, d = read_field_dump(path)
        return cls(grid, d, t)


def integrate_flow(
    v: TestVectorField,
    eps: float,
    times: np.ndarray,
    substeps: int = 1,
    stability: float = 1.0,
) -> list[TorusMap]:
    """RK4 integration of ``de/dt = ε v̇_t(e)`` from the identity at ``times[0]``.

    Returns one map per entry of ``times``.  The right-hand side is the
    trigonometric interpolant of the profile evaluated at the moving points.
    """
    if abs(eps) > 1:
        raise ValueError(f"|eps| must be <= 1, got {eps}")
    times = np.asarray(times, dtype=float)
    grid = v.grid
    if eps == 0.0:
        return [TorusMap.identity(grid, t) for t in times]

    w = grid.interpolant(v.profile)
    jac_sup = np.abs(grid.gradient(v.profile)).max()
    tt = np.linspace(times[0], times[-1], 201)
    ds_sup = max(abs(v.envelope.ds(t)) for t in tt)
    dt_max = np.max(np.diff(times)) / substeps if len(times) > 1 else 0.0
    if abs(eps) * ds_sup * jac_sup * dt_max > stability:
        raise FlowError(
            f"flow step too large: |eps|*max|s'|*max|grad w|*dt = {abs(eps) * ds_sup * jac_sup * dt_max:.3g}"
        )

    X = grid.points
    d = np.zeros_like(X)

    def rhs(t, d):
        return (eps * v.envelope.ds(t)) * w(X + d)

    out = [TorusMap(grid, grid.zeros(), times[0])]
    for t0, t1 in zip(times[:-1], times[1:]):
        h = (t1 - t0) / substeps
        t = t0
        for i in range(substeps):
            k1 = rhs(t, d)
            k2 = rhs(t + h / 2, d + h / 2 * k1)
            k3 = rhs(t + h / 2, d + h / 2 * k2)
            k4 = rhs(t + h, d + h * k3)
            d = d + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t = t0 + h * (i + 1)
        if not np.all(np.isfinite(d)):
            raise FlowError(f"flow diverged at t={t1}")
        out.append(TorusMap(grid, d.T.reshape(grid.vshape).copy(), t1))
    return out


def invert_map(m: TorusMap, tol: float = 1e-10, maxiter: int = 100) -> TorusMap:
    """Fixed-point inversion ``y ← x − d(y)``; contraction holds for small displacements."""
    grid = m.grid
    if m.is_identity():
        return TorusMap.identity(grid, m.t)
    sup = np.abs(m.displacement).max()
    if sup >= np.pi / 2:
        raise FlowError(f"displacement too large to invert (sup={sup:.3f} >= π/2)")
    d = m.interpolant()
    X = grid.points
    y = X - m.displacement.reshape(grid.dim, -1).T
    for _ in range(maxiter):
        y_new = X - d(y)
        step = np.abs(y_new - y).max()
        y = y_new
        if step < tol:
            break
    else:
        raise FlowError(f"map inversion did not converge in {maxiter} iterations (last step {step:.2e})")
    return TorusMap(grid, (y - X).T.reshape(grid.vshape).copy(), m.t)


def map_derivatives(m: TorusMap) -> tuple[np.ndarray, np.ndarray]:
    """Jacobian ``J[i, j] = ∂_j e^i`` and componentwise Laplacian ``Δe``."""
    grid = m.grid
    grad_d = grid.gradient(m.displacement)  # [j, i] = ∂_j d^i
    jac = np.swapaxes(grad_d, 0, 1).copy()
    for i in range(grid.dim):
        jac[i, i] += 1.0
    return jac, grid.laplacian(m.displacement)


def jacobian_determinant(jac: np.ndarray) -> np.ndarray:
    return np.linalg.det(np.moveaxis(jac, (0, 1), (-2, -1)))


def composed_drift(
    u: np.ndarray,
    m: TorusMap,
    velocity: np.ndarray,
    mode: Literal["pre", "post"] = "post",
    inverse: TorusMap | None = None,
) -> np.ndarray:
    """Drift of the perturbed flow at one instant.

    ``pre`` returns ``F̃(y) = ∂_t e(y) + (u·∇)e(y) + ½Δe(y)`` on the grid, with
    ``∂_t e(y) = velocity(e(y))`` where ``velocity`` is the field ``ε v̇_t``.
    ``post`` returns ``F(x) = F̃(e⁻¹(x))``.  For the identity map both modes
    return ``u`` exactly.
    """
    grid = m.grid
    grid._check(u, vector=True)
    grid._check(velocity, vector=True)
    out = u.copy()
    if np.any(velocity):
        pts = (grid.x + m.displacement).reshape(grid.dim, -1).T
        out += grid.interpolate(velocity, pts).T.reshape(grid.vshape)
    if m.is_identity():
        return out
    out += grid.advect(u, m.displacement) + 0.5 * grid.laplacian(m.displacement)
    if mode == "pre":
        return out
    if mode != "post":
        raise ValueError(f"mode must be 'pre' or 'post', got {mode!r}")
    inv = inverse if inverse is not None else invert_map(m)
    ypts = (grid.x + inv.displacement).reshape(grid.dim, -1).T
    return grid.interpolate(out, ypts).T.reshape(grid.vshape)
