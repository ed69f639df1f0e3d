"""Energy functional of a trajectory under perturbation flows, and its first variation.

``energy`` evaluates

    E_q(u, εv) = (1/q) ∫_0^T ∫ ‖[(∂_t + L(u_t)) e_t(εv)](e_t^{-1}(x))‖^q dx dt

and the Gateaux derivative at ε = 0 is computed three ways:

* ``derivative_fd``: central differences of ``energy`` with Richardson extrapolation;
* ``derivative_analytic``: ``∫∫ ‖u‖^{q−2} ⟨v̇ + [u, v] + ½Δv, u⟩``;
* ``derivative_el``: the pairing ``∫∫ ⟨(∂_t + u·∇ − ½Δ) m, v⟩`` with the
  Euler–Lagrange residual, which equals ``−dE/dε``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import simpson

from .dynamics import PdeForm, Trajectory, el_residual, momentum
from .flowmap import TestVectorField, bump_envelope, composed_drift, integrate_flow
from .torus import Grid

SIGN_CONVENTION = "derivative_el = -dE/deps; agreement checked as derivative_analytic + derivative_el = 0"


def _check(traj: Trajectory, v: TestVectorField) -> None:
    if v.grid != traj.grid:
        raise ValueError("test field and trajectory live on different grids")
    if abs(v.T - traj.T) > 1e-12 * traj.T or traj.times[0] != 0.0:
        raise ValueError("test field envelope must span the trajectory interval [0, T]")


def _time_integral(values: np.ndarray, times: np.ndarray) -> float:
    return float(simpson(values, x=times))


def energy_integrand(traj: Trajectory, v: TestVectorField, eps: float, q: float | None = None) -> np.ndarray:
    """Spatial integral ``∫ ‖F_ε(t_k, x)‖^q dx`` at every node (no 1/q factor)."""
    q = traj.q if q is None else q
    if not q > 1:
        raise ValueError(f"q must exceed 1, got {q}")
    _check(traj, v)
    g = traj.grid
    maps = integrate_flow(v, eps, traj.times)
    out = np.empty(traj.K + 1)
    for k, (t, u) in enumerate(zip(traj.times, traj.fields)):
        F = composed_drift(u, maps[k], eps * v.vdot(t), mode="post")
        out[k] = g.lq_integral(F, q)
    return out


def energy(traj: Trajectory, v: TestVectorField, eps: float, q: float | None = None) -> float:
    q = traj.q if q is None else q
    return _time_integral(energy_integrand(traj, v, eps, q), traj.times) / q


def unperturbed_energy(traj: Trajectory, q: float | None = None) -> float:
    """``(1/q) ∫∫ ‖u‖^q``: the energy at ε = 0 for any perturbation."""
    q = traj.q if q is None else q
    vals = np.array([traj.grid.lq_integral(u, q) for u in traj.fields])
    return _time_integral(vals, traj.times) / q


class FDEstimate(NamedTuple):
    value: float
    error: float
    coarse: float
    fine: float


def richardson(energy_at, delta: float) -> FDEstimate:
    """Central differences at ``delta`` and ``delta/2`` combined to cancel the O(δ²) term."""
    d1 = (energy_at(delta) - energy_at(-delta)) / (2 * delta)
    d2 = (energy_at(delta / 2) - energy_at(-delta / 2)) / delta
    value = (4 * d2 - d1) / 3
    for x in (d1, d2):
        if not np.isfinite(x):
            raise FloatingPointError("non-finite energy in finite-difference derivative")
    return FDEstimate(value, abs(value - d2), d1, d2)


def derivative_fd(traj: Trajectory, v: TestVectorField, q: float | None = None, delta: float = 1e-3) -> FDEstimate:
    if not 1e-4 <= delta <= 1e-2:
        raise ValueError(f"delta must lie in [1e-4, 1e-2], got {delta}")
    return richardson(lambda e: energy(traj, v, e, q), delta)


def derivative_analytic(traj: Trajectory, v: TestVectorField, q: float | None = None) -> float:
    """``∫_0^T ∫ ‖u‖^{q−2} ⟨v̇ + [u, v] + ½Δv, u⟩ dx dt``."""
    q = traj.q if q is None else q
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    _check(traj, v)
    g = traj.grid
    vals = np.empty(traj.K + 1)
    for k, (t, u) in enumerate(zip(traj.times, traj.fields)):
        vt = v.v(t)
        first = v.vdot(t) + g.lie_bracket(u, vt) + 0.5 * g.laplacian(vt)
        vals[k] = g.inner(first, momentum(u, q))
    return _time_integral(vals, traj.times)


def derivative_el(
    traj: Trajectory,
    v: TestVectorField,
    q: float | None = None,
    form: PdeForm | str = PdeForm.PROOF,
    projected: bool = True,
) -> float:
    """``∫∫ ⟨(∂_t + u·∇ − ½Δ) m, v⟩``, i.e. minus the first variation.

    End nodes contribute nothing because ``v`` vanishes there.
    """
    if q is not None and q != traj.q:
        traj = dataclasses.replace(traj, q=q)
    _check(traj, v)
    g = traj.grid
    vals = np.zeros(traj.K + 1)
    for k in range(1, traj.K):
        raw, proj = el_residual(traj, k, form)
        vals[k] = g.inner(proj if projected else raw, v.v(traj.times[k]))
    return _time_integral(vals, traj.times)


def _stream_profile(grid: Grid, psi: np.ndarray) -> np.ndarray:
    """Divergence-free ``(∂_y ψ, −∂_x ψ[, 0])`` scaled to unit sup norm."""
    gx, gy = grid.gradient(psi)[:2]
    w = np.zeros(grid.vshape)
    w[0], w[1] = gy, -gx
    return w / np.abs(w).max()


def _unit_peak(T: float, poly: Sequence[float]):
    env = bump_envelope(T, poly, 1.0)
    peak = max(abs(env.s(t)) for t in np.linspace(0, T, 2001))
    return bump_envelope(T, poly, 1.0 / peak)


def default_battery(grid: Grid, T: float = 1.0) -> list[TestVectorField]:
    """Five divergence-free directions with modes |k| ≤ 3 and two time envelopes.

    A finite battery is the falsifiable stand-in for "all admissible v".
    """
    x, y = grid.x[0], grid.x[1]
    z = grid.x[2] if grid.dim == 3 else 0.0
    env_a = _unit_peak(T, (1.0,))
    env_b = _unit_peak(T, (1.0, -2.0))
    specs = [
        ("sin x sin y", np.sin(x) * np.sin(y), env_a),
        ("cos 2y", np.cos(2 * y) + 0 * x, env_b),
        ("sin(x+2y)", np.sin(x + 2 * y + z), env_a),
        ("cos 3x sin y", np.cos(3 * x) * np.sin(y), env_b),
        ("sin y + cos(2x-y)/2", np.sin(y) + 0.5 * np.cos(2 * x - y), env_a),
    ]
    return [TestVectorField(grid, _stream_profile(grid, psi), env, label=f"psi={name}") for name, psi, env in specs]


@dataclass
class FieldVariation:
    label: str
    derivative_fd: float
    fd_error: float
    derivative_analytic: float
    derivative_el: float

    @property
    def fd_vs_analytic(self) -> float:
        return abs(self.derivative_fd - self.derivative_analytic)

    @property
    def analytic_vs_el(self) -> float:
        return abs(self.derivative_analytic + self.derivative_el)

    @property
    def fd_vs_el(self) -> float:
        return abs(self.derivative_fd + self.derivative_el)


@dataclass
class VariationReport:
    """First-variation values per battery field and the resulting verdict."""

    q: float
    delta: float
    fields: list[FieldVariation]
    energy: float
    energy_scale: float
    residual_norm: float
    momentum_norm: float
    theta_crit: float
    theta_res: float
    verdict: str = ""
    form: str = PdeForm.PROOF.value
    digest: str = ""
    anchor: str = "first variation of E_q vanishes iff u solves the weighted porous media equation"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.verdict:
            self.verdict = self.decide()

    @property
    def max_abs_fd(self) -> float:
        return max(abs(f.derivative_fd) for f in self.fields)

    def decide(self) -> str:
        ok = self.max_abs_fd <= self.theta_crit and self.residual_norm <= self.theta_res
        return "critical" if ok else "non-critical"

    def to_dict(self) -> dict:
        d = {
            "anchor": self.anchor,
            "inputs_digest": self.digest,
            "q": self.q,
            "form": self.form,
            "delta": self.delta,
            "sign_convention": SIGN_CONVENTION,
            "energy": self.energy,
            "energy_scale": self.energy_scale,
            "residual_norm": self.residual_norm,
            "momentum_norm": self.momentum_norm,
            "theta_crit": self.theta_crit,
            "theta_res": self.theta_res,
            "max_abs_derivative_fd": self.max_abs_fd,
            "verdict": self.verdict,
            "fields": [
                dict(
                    dataclasses.asdict(f),
                    fd_vs_analytic=f.fd_vs_analytic,
                    analytic_vs_el=f.analytic_vs_el,
                    fd_vs_el=f.fd_vs_el,
                )
                for f in self.fields
            ],
        }
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def inputs_digest(traj: Trajectory, battery: Sequence[TestVectorField], *extra) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(traj.fields).tobytes())
    h.update(np.ascontiguousarray(traj.times).tobytes())
    for v in battery:
        h.update(np.ascontiguousarray(v.profile).tobytes())
        h.update(np.array([v.envelope.s(t) for t in traj.times]).tobytes())
    h.update(repr(extra).encode())
    return h.hexdigest()[:16]


def criticality_report(
    traj: Trajectory,
    battery: Sequence[TestVectorField],
    q: float | None = None,
    delta: float = 1e-3,
    form: PdeForm | str = PdeForm.PROOF,
    theta_crit_rel: float = 1e-4,
    theta_res_rel: float = 1e-5,
) -> VariationReport:
    """Three-route first variation over a battery, with the criticality verdict.

    Critical iff every |dE/dε| ≤ θ_crit = theta_crit_rel · max(E, 1) and the
    largest projected residual ≤ θ_res = theta_res_rel · max_k ‖m_k‖₂.
    """
    q = traj.q if q is None else q
    if q != traj.q:
        traj = dataclasses.replace(traj, q=q)
    if len(battery) < 5:
        raise ValueError("criticality needs a battery of at least 5 test fields")
    form = PdeForm(form)
    g = traj.grid
    rows = []
    for v in battery:
        fd = derivative_fd(traj, v, q, delta)
        rows.append(
            FieldVariation(
                v.label,
                fd.value,
                fd.error,
                derivative_analytic(traj, v, q),
                derivative_el(traj, v, q, form),
            )
        )
    e0 = unperturbed_energy(traj, q)
    res = max(g.l2_norm(el_residual(traj, k, form)[1]) for k in range(1, traj.K))
    mnorm = max(g.l2_norm(m) for m in traj.momenta)
    scale = max(e0, 1.0)
    return VariationReport(
        q=q,
        delta=delta,
        fields=rows,
        energy=e0,
        energy_scale=scale,
        residual_norm=res,
        momentum_norm=mnorm,
        theta_crit=theta_crit_rel * scale,
        theta_res=theta_res_rel * mnorm,
        form=form.value,
        digest=inputs_digest(traj, battery, q, delta, form.value),
    )
