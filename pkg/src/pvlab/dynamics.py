"""The PDE side: momentum variable, Euler–Lagrange residual, q=2 solver, exact solutions.

The equation is

    ∂_t m + (u·∇)m − ½Δm = −∇P,    m = ‖u‖^{q−2} u,    div u = 0,

(``proof_form``), or with ``∂_t u`` in place of ``∂_t m`` (``literal_form``).
The two coincide for q = 2, where the equation is Navier–Stokes with
viscosity ½.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .torus import Grid, read_field_dump, write_field_dump


class PdeForm(str, enum.Enum):
    PROOF = "proof_form"
    LITERAL = "literal_form"


class SolverError(RuntimeError):
    pass


def momentum(u: np.ndarray, q: float) -> np.ndarray:
    """``m = ‖u‖^{q−2} u`` pointwise, extended by 0 where ``u = 0``."""
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    if q == 2:
        return u.copy()
    norm = np.sqrt(np.sum(u * u, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(norm > 0, norm ** (q - 2), 0.0)
    return w * u


def velocity_from_momentum(m: np.ndarray, q: float) -> np.ndarray:
    """Inverse of :func:`momentum`: ``u = ‖m‖^{(2−q)/(q−1)} m``."""
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    if q == 2:
        return m.copy()
    norm = np.sqrt(np.sum(m * m, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(norm > 0, norm ** ((2 - q) / (q - 1)), 0.0)
    return w * m


def time_derivative(values: np.ndarray, k: int, dt: float) -> np.ndarray:
    """Fourth-order finite difference in time at node ``k`` of a uniform sequence.

    Centred 5-point stencil where available; nodes 1 and K−1 use the
    off-centred 5-point stencil and the end nodes the one-sided one.
    """
    K = len(values) - 1
    if K < 4:
        raise ValueError("need at least 5 time nodes")
    f = values
    if 2 <= k <= K - 2:
        return (f[k - 2] - 8 * f[k - 1] + 8 * f[k + 1] - f[k + 2]) / (12 * dt)
    if k == 1:
        return (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * dt)
    if k == K - 1:
        return (3 * f[K] + 10 * f[K - 1] - 18 * f[K - 2] + 6 * f[K - 3] - f[K - 4]) / (12 * dt)
    if k == 0:
        return (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * dt)
    if k == K:
        return (25 * f[K] - 48 * f[K - 1] + 36 * f[K - 2] - 16 * f[K - 3] + 3 * f[K - 4]) / (12 * dt)
    raise IndexError(f"node {k} outside 0..{K}")


@dataclass(frozen=True)
class Trajectory:
    """Divergence-free fields ``u_k`` on a uniform time grid ``0 = t_0 < ... < t_K = T``."""

    grid: Grid
    times: np.ndarray
    fields: np.ndarray
    q: float = 2.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if self.fields.shape != (len(times),) + self.grid.vshape:
            raise ValueError(f"fields shape {self.fields.shape} does not match {len(times)} nodes on {self.grid}")
        if len(times) < 9:
            raise ValueError("a trajectory needs K >= 8 time intervals")
        steps = np.diff(times)
        if np.ptp(steps) > 1e-12 * steps.mean() or steps.min() <= 0:
            raise ValueError("time grid must be uniform and increasing")
        if not np.all(np.isfinite(self.fields)):
            raise ValueError("trajectory contains non-finite values")
        for k in range(len(times)):
            u = self.fields[k]
            scale = max(np.abs(u).max(), 1e-300)
            if np.abs(self.grid.divergence(u)).max() > 1e-10 * scale:
                raise ValueError(f"field at node {k} is not divergence-free")

    @property
    def K(self) -> int:
        return len(self.times) - 1

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @cached_property
    def momenta(self) -> np.ndarray:
        return np.array([momentum(u, self.q) for u in self.fields])

    @classmethod
    def frozen(cls, grid: Grid, u: np.ndarray, times: np.ndarray, q: float = 2.0, **meta) -> Trajectory:
        """Time-independent trajectory ``u_t = u`` (generally not a solution)."""
        fields = np.broadcast_to(u, (len(times),) + u.shape).copy()
        return cls(grid, times, fields, q, dict(meta))

    def save(self, directory: str | Path, form: PdeForm | str = PdeForm.PROOF) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = []
        for k, u in enumerate(self.fields):
            name = f"u_{k:05d}.pvl"
            write_field_dump(d / name, self.grid, u)
            files.append(name)
        manifest = {
            "q": self.q,
            "T": self.T,
            "K": self.K,
            "form": PdeForm(form).value,
            "family": self.meta.get("family", "unknown"),
            "params": self.meta.get("params", {}),
            "dim": self.grid.dim,
            "n": self.grid.n,
            "t0": float(self.times[0]),
            "files": files,
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
        return d

    @classmethod
    def load(cls, directory: str | Path) -> Trajectory:
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        fields = []
        grid = None
        for name in manifest["files"]:
            g, u = read_field_dump(d / name)
            if grid is not None and g != grid:
                raise ValueError(f"{name}: grid differs from earlier dumps")
            grid = g
            fields.append(u)
        t0 = manifest.get("t0", 0.0)
        times = np.linspace(t0, manifest["T"], manifest["K"] + 1)
        meta = {"family": manifest.get("family"), "params": manifest.get("params", {}), "form": manifest.get("form")}
        return cls(grid, times, np.array(fields), manifest["q"], meta)


def el_residual(traj: Trajectory, k: int, form: PdeForm | str = PdeForm.PROOF) -> tuple[np.ndarray, np.ndarray]:
    """Raw residual ``∂_t(m or u) + (u·∇)m − ½Δm`` at node ``k`` and its Leray projection.

    The projected residual vanishes iff the raw residual is a gradient ``−∇P``.
    """
    form = PdeForm(form)
    if traj.q < 2:
        raise ValueError(f"q must be >= 2, got {traj.q}")
    if not 1 <= k <= traj.K - 1:
        raise IndexError(f"residual needs an interior node, got k={k} with K={traj.K}")
    g = traj.grid
    m = traj.momenta
    series = m if form is PdeForm.PROOF else traj.fields
    raw = time_derivative(series, k, traj.dt) + g.advect(traj.fields[k], m[k]) - 0.5 * g.laplacian(m[k])
    projected, _ = g.leray_project(raw)
    return raw, projected


def residual_norms(traj: Trajectory, form: PdeForm | str = PdeForm.PROOF) -> np.ndarray:
    """L² norm of the projected residual at every interior node (NaN at the ends)."""
    out = np.full(traj.K + 1, np.nan)
    for k in range(1, traj.K):
        out[k] = traj.grid.l2_norm(el_residual(traj, k, form)[1])
    return out


def solve_ns(
    u0: np.ndarray,
    grid: Grid,
    T: float = 1.0,
    dt: float = 1e-3,
    K: int | None = None,
    cfl: float = 0.5,
) -> Trajectory:
    """Pseudo-spectral IMEX solver for ``∂_t u = P[−(u·∇)u + ½Δu]``.

    Crank–Nicolson on the viscous term, Adams–Bashforth-2 on the projected,
    dealiased advection (forward Euler on the first step).  ``K`` output
    intervals; every step energy is kept in ``meta["step_energy"]``.
    """
    grid._check(u0, vector=True)
    nsteps = int(round(T / dt))
    if abs(nsteps * dt - T) > 1e-9 * T:
        raise ValueError("T must be an integer multiple of dt")
    K = nsteps if K is None else K
    if nsteps % K:
        raise ValueError(f"{nsteps} steps cannot be sampled onto K={K} intervals")
    every = nsteps // K
    if np.abs(grid.divergence(u0)).max() > 1e-10 * max(np.abs(u0).max(), 1e-300):
        raise ValueError("initial field is not divergence-free")

    visc = 0.25 * dt * grid.k2
    lhs = 1.0 / (1.0 + visc)
    rhs_fac = 1.0 - visc

    def nonlinear(u):
        p, _ = grid.leray_project(-grid.advect(u, u))
        nh = grid.transform(p)
        nh[(slice(None),) + (0,) * grid.dim] = 0.0
        return nh

    u = u0.copy()
    uh = grid.transform(u)
    out = [u.copy()]
    energies = [0.5 * grid.integral(np.sum(u * u, axis=0))]
    n_prev = None
    for step in range(1, nsteps + 1):
        c = np.abs(u).max() * dt / grid.h
        if c > cfl:
            raise SolverError(f"CFL violation at step {step}: {c:.3f} > {cfl}")
        n_now = nonlinear(u)
        adv = n_now if n_prev is None else 1.5 * n_now - 0.5 * n_prev
        uh = lhs * (rhs_fac * uh + dt * adv)
        n_prev = n_now
        u = grid.inverse_transform(uh)
        if not np.all(np.isfinite(u)):
            raise SolverError(f"solution blew up at step {step}")
        energies.append(0.5 * grid.integral(np.sum(u * u, axis=0)))
        if step % every == 0:
            out.append(u.copy())
    times = np.linspace(0.0, T, K + 1)
    meta = {"family": "solver", "params": {"dt": dt}, "step_energy": np.array(energies)}
    return Trajectory(grid, times, np.array(out), 2.0, meta)


def taylor_green(grid: Grid, t: float = 0.0, amplitude: float = 1.0) -> np.ndarray:
    """``A e^{−t}(sin x cos y, −cos x sin y[, 0])``: exact decay rate for viscosity ½."""
    x, y = grid.x[0], grid.x[1]
    comps = [np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)] + [np.zeros_like(x)] * (grid.dim - 2)
    return amplitude * np.exp(-t) * np.array(comps)


def exact_family(name: str, grid: Grid, times: np.ndarray, q: float, **params) -> Trajectory:
    """Closed-form solutions of the proof-form equation.

    ``constant``: ``u ≡ c`` for any q.
    ``taylor_green``: q = 2 only, amplitude ``amplitude``.
    ``shear``: ``u = (M^{1/(q−1)}, 0)`` with ``M = a + b e^{−t/2} sin y``, which
    solves the heat equation ``∂_t M = ½ ∂_yy M``; needs ``a > |b|``.
    """
    times = np.asarray(times, dtype=float)
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    if name == "constant":
        c = np.asarray(params.get("c", [1.0] + [0.0] * (grid.dim - 1)), dtype=float)
        fields = np.array([grid.constant(c) for _ in times])
        params = {"c": c.tolist()}
    elif name == "taylor_green":
        if q != 2:
            raise ValueError("the Taylor–Green family is a solution only for q = 2")
        amp = float(params.get("amplitude", 1.0))
        fields = np.array([taylor_green(grid, t, amp) for t in times])
        params = {"amplitude": amp}
    elif name == "shear":
        a = float(params.get("a", 1.0))
        b = float(params.get("b", 0.5))
        if not a > abs(b):
            raise ValueError(f"shear family needs a > |b| to keep M positive (a={a}, b={b})")
        y = grid.x[1]
        fields = np.zeros((len(times),) + grid.vshape)
        for k, t in enumerate(times):
            M = a + b * np.exp(-t / 2) * np.sin(y)
            fields[k, 0] = M ** (1.0 / (q - 1))
        params = {"a": a, "b": b}
    else:
        raise ValueError(f"unknown exact family {name!r}")
    return Trajectory(grid, times, fields, q, {"family": name, "params": params})
