"""Incompressible diffusion flows ``dg = σ dW + u_t(g) dt`` and their energies.

Only the constant identity noise is implemented: every particle of one
sample is driven by the same N-dimensional Brownian path, so with a
divergence-free drift the flow is a volume-preserving map of the torus.
Because of that, the spatial mean over transported grid particles is an
equal-weight quadrature of the uniform measure.

Each sample draws its increments from a Philox stream keyed by
``(master_seed, stream, sample)``, so results do not depend on how samples
are spread across workers.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import simpson

from .dynamics import PdeForm, Trajectory, el_residual
from .flowmap import TestVectorField, composed_drift, integrate_flow
from .torus import SpectralInterpolant
from .variation import (
    FieldVariation,
    VariationReport,
    derivative_analytic,
    derivative_el,
    inputs_digest,
    unperturbed_energy,
)

CHUNK = 8  # samples per work unit; fixed so results do not depend on the worker count


def worker_count() -> int:
    try:
        n = int(os.environ.get("PVL_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, min(n, os.cpu_count() or 1))


@dataclass(frozen=True)
class NoiseModel:
    """``σ(x) ≡ I`` on R^N; ``σσ* = I`` at every point."""

    dim: int = 2
    kind: str = "constant_identity"

    def __post_init__(self):
        if self.kind != "constant_identity":
            raise ValueError(f"unsupported noise model {self.kind!r}")

    def sigma(self, x: np.ndarray | None = None) -> np.ndarray:
        return np.eye(self.dim)


def sample_rng(master_seed: int, sample: int, stream: int = 0) -> np.random.Generator:
    key = np.array([master_seed, (stream << 32) | sample], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class FlowEnsemble:
    traj: Trajectory
    dt: float
    samples: int
    particles: int
    master_seed: int
    stream: int
    x0: np.ndarray  # (P, N)
    positions: np.ndarray  # (K+1, S, P, N), wrapped to [0, 2π)
    det_min: np.ndarray  # (K+1, S)
    det_max: np.ndarray  # (K+1, S)
    jacobians: np.ndarray  # (S, P, N, N) at t = T
    _node_interp: list = field(default_factory=list, repr=False)

    @property
    def times(self) -> np.ndarray:
        return self.traj.times

    @property
    def max_det_error(self) -> np.ndarray:
        """Per-sample ``max_t max_x |det ∇g_t − 1|``."""
        return np.maximum(np.abs(self.det_min - 1), np.abs(self.det_max - 1)).max(axis=0)

    def node_interpolant(self) -> SpectralInterpolant:
        if not self._node_interp:
            self._node_interp.append(_stacked_interpolant(self.traj))
        return self._node_interp[0]

    def write_summary_csv(self, path: str | Path, energies: np.ndarray | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "energy", "det_min", "det_max"])
            for s in range(self.samples):
                e = "" if energies is None else repr(float(energies[s]))
                w.writerow([s, e, repr(float(self.det_min[:, s].min())), repr(float(self.det_max[:, s].max()))])


def _stacked_interpolant(traj: Trajectory) -> SpectralInterpolant:
    g = traj.grid
    coeffs = g.transform(traj.fields).reshape((-1,) + g.shape)
    return SpectralInterpolant(g, coeffs, vector=True)


def _lagrange_window(i: int, sub: int, K: int) -> tuple[int, np.ndarray]:
    """Cubic Lagrange weights in time for SDE step ``i`` (``sub`` steps per node)."""
    k, r = divmod(i, sub)
    if r == 0:
        return k, np.array([1.0])
    start = min(max(k - 1, 0), K - 3)
    tau = (k - start) + r / sub
    nodes = np.arange(4.0)
    w = np.ones(4)
    for a in range(4):
        for b in range(4):
            if a != b:
                w[a] *= (tau - nodes[b]) / (nodes[a] - nodes[b])
    return start, w


def _grad_box(interp: SpectralInterpolant, ubox: np.ndarray) -> np.ndarray:
    n = interp.grid.n
    kd = [np.where(ks == -n // 2, 0, ks) for ks in interp.ks]
    mesh = np.meshgrid(*kd, indexing="ij")
    return np.concatenate([1j * kj[..., None] * ubox for kj in mesh], axis=-1)


def simulate_flow(
    traj: Trajectory,
    noise: NoiseModel | None = None,
    samples: int = 64,
    dt: float = 1e-3,
    master_seed: int = 0,
    particles: int = 16,
    stream: int = 0,
    workers: int | None = None,
) -> FlowEnsemble:
    """Euler–Maruyama for ``dg = dW + u_t(g) dt`` from a grid of ``particles**N`` points.

    Jacobians follow the variational equation ``d(∇g) = ∇u(g)·∇g dt``; the
    additive noise contributes nothing to them.
    """
    g = traj.grid
    N = g.dim
    noise = noise or NoiseModel(N)
    if noise.dim != N:
        raise ValueError("noise dimension does not match the grid")
    if samples < 1:
        raise ValueError("need at least one sample")
    sub = int(round(traj.dt / dt))
    if sub < 1 or abs(sub * dt - traj.dt) > 1e-9 * traj.dt:
        raise ValueError(f"SDE step {dt} must divide the trajectory step {traj.dt}")
    umax = np.abs(traj.fields).max()
    if umax * dt > 0.5 * g.h:
        raise ValueError(f"drift step too large: max|u|*dt = {umax * dt:.3g} > h/2")

    interp = _stacked_interpolant(traj)
    nodes_box = interp.box.reshape(interp.box.shape[:-1] + (traj.K + 1, N))
    nsteps = sub * traj.K
    x1 = np.arange(particles) * (2 * np.pi / particles)
    x0 = np.array(np.meshgrid(*([x1] * N), indexing="ij")).reshape(N, -1).T.copy()
    P = x0.shape[0]
    sqdt = np.sqrt(dt)

    boxes = []
    for i in range(nsteps):
        start, w = _lagrange_window(i, sub, traj.K)
        ub = np.tensordot(nodes_box[..., start : start + len(w), :], w, axes=([-2], [0]))
        boxes.append((ub, _grad_box(interp, ub)))

    def run_chunk(ids: Sequence[int]):
        C = len(ids)
        dW = np.stack([sample_rng(master_seed, s, stream).standard_normal((nsteps, N)) for s in ids]) * sqdt
        pos = np.broadcast_to(x0, (C, P, N)).copy()
        J = np.broadcast_to(np.eye(N), (C, P, N, N)).copy()
        rec = np.empty((traj.K + 1, C, P, N))
        dmin = np.ones((traj.K + 1, C))
        dmax = np.ones((traj.K + 1, C))
        rec[0] = pos
        for i in range(nsteps):
            ub, gb = boxes[i]
            es = interp.basis(pos.reshape(-1, N))
            uval = SpectralInterpolant.contract(es, ub).reshape(C, P, N)
            grad = SpectralInterpolant.contract(es, gb).reshape(C, P, N, N)  # [.., j, i] = ∂_j u^i
            A = np.swapaxes(grad, -1, -2)
            J = J + dt * (A @ J)
            pos = pos + uval * dt + dW[:, i, None, :]
            if not np.all(np.isfinite(pos)):
                raise FloatingPointError(f"non-finite particle positions at step {i + 1}")
            if (i + 1) % sub == 0:
                k = (i + 1) // sub
                rec[k] = np.mod(pos, 2 * np.pi)
                det = np.linalg.det(J)
                dmin[k], dmax[k] = det.min(axis=1), det.max(axis=1)
        return rec, dmin, dmax, J

    chunks = [list(range(a, min(a + CHUNK, samples))) for a in range(0, samples, CHUNK)]
    nw = workers or worker_count()
    if nw > 1:
        with ThreadPoolExecutor(nw) as ex:
            results = list(ex.map(run_chunk, chunks))
    else:
        results = [run_chunk(c) for c in chunks]
    return FlowEnsemble(
        traj=traj,
        dt=dt,
        samples=samples,
        particles=particles,
        master_seed=master_seed,
        stream=stream,
        x0=x0,
        positions=np.concatenate([r[0] for r in results], axis=1),
        det_min=np.concatenate([r[1] for r in results], axis=1),
        det_max=np.concatenate([r[2] for r in results], axis=1),
        jacobians=np.concatenate([r[3] for r in results], axis=0),
    )


def drift_field(ens: FlowEnsemble, k: int) -> np.ndarray:
    """Drift ``Dg_t = u_t(g_t)`` at node ``k`` for every particle, shape ``(S, P, N)``."""
    if not 0 <= k <= ens.traj.K:
        raise IndexError(f"node {k} outside 0..{ens.traj.K}")
    N = ens.traj.grid.dim
    interp = ens.node_interpolant()
    box = interp.box[..., k * N : (k + 1) * N]
    pts = ens.positions[k].reshape(-1, N)
    return SpectralInterpolant.contract(interp.basis(pts), box).reshape(ens.samples, -1, N)


def _mean_norm_q(vals: np.ndarray, q: float) -> np.ndarray:
    return np.mean(np.sqrt(np.sum(vals * vals, axis=-1)) ** q, axis=-1)


def _summarize(per_sample: np.ndarray) -> tuple[float, float]:
    if per_sample.size == 0:
        raise ValueError("empty ensemble")
    se = per_sample.std(ddof=1) / np.sqrt(per_sample.size) if per_sample.size > 1 else 0.0
    return float(per_sample.mean()), float(se)


def sample_energies(ens: FlowEnsemble, q: float | None = None) -> np.ndarray:
    """Per-sample ``(1/q) ∫∫ ‖Dg_t(x)‖^q dx dt``."""
    q = ens.traj.q if q is None else q
    if not q > 1:
        raise ValueError(f"q must exceed 1, got {q}")
    vals = np.array([_mean_norm_q(drift_field(ens, k), q) for k in range(ens.traj.K + 1)])
    return simpson(vals, x=ens.times, axis=0) / q


def mc_energy(ens: FlowEnsemble, q: float | None = None) -> tuple[float, float]:
    """Monte Carlo estimate of the stochastic energy and its standard error."""
    return _summarize(sample_energies(ens, q))


def sample_perturbed_energies(ens: FlowEnsemble, v: TestVectorField, eps: float, q: float | None = None) -> np.ndarray:
    """Per-sample energy of ``e_t(εv)∘g_t``, whose drift is ``F̃(t, g_t)`` by Itô's formula."""
    traj = ens.traj
    q = traj.q if q is None else q
    if not q > 1:
        raise ValueError(f"q must exceed 1, got {q}")
    if eps == 0.0:
        return sample_energies(ens, q)
    g = traj.grid
    N = g.dim
    maps = integrate_flow(v, eps, traj.times)
    vals = np.empty((traj.K + 1, ens.samples))
    for k, t in enumerate(traj.times):
        F = composed_drift(traj.fields[k], maps[k], eps * v.vdot(t), mode="pre")
        drift = g.interpolate(F, ens.positions[k].reshape(-1, N)).reshape(ens.samples, -1, N)
        vals[k] = _mean_norm_q(drift, q)
    return simpson(vals, x=traj.times, axis=0) / q


def mc_energy_perturbed(ens: FlowEnsemble, v: TestVectorField, eps: float, q: float | None = None) -> tuple[float, float]:
    return _summarize(sample_perturbed_energies(ens, v, eps, q))


def crn_derivative(ens: FlowEnsemble, v: TestVectorField, q: float | None = None, delta: float = 1e-3):
    """Richardson-extrapolated central difference per sample, all ε on the same paths.

    Returns ``(mean, stderr, per_sample)``.
    """
    e = {s: sample_perturbed_energies(ens, v, s, q) for s in (delta, -delta, delta / 2, -delta / 2)}
    d1 = (e[delta] - e[-delta]) / (2 * delta)
    d2 = (e[delta / 2] - e[-delta / 2]) / delta
    per = (4 * d2 - d1) / 3
    mean, se = _summarize(per)
    return mean, se, per


def independent_derivative(
    traj: Trajectory,
    v: TestVectorField,
    q: float | None = None,
    delta: float = 1e-3,
    samples: int = 64,
    dt: float = 1e-3,
    master_seed: int = 0,
    particles: int = 16,
    noise: NoiseModel | None = None,
) -> tuple[float, float]:
    """Same estimator as :func:`crn_derivative` but with a fresh seed stream per ε."""
    steps = (delta, -delta, delta / 2, -delta / 2)
    stats = {}
    for stream, s in enumerate(steps, start=1):
        ens = simulate_flow(traj, noise, samples, dt, master_seed, particles, stream=stream)
        stats[s] = _summarize(sample_perturbed_energies(ens, v, s, q))
    m = {s: stats[s][0] for s in steps}
    var = {s: stats[s][1] ** 2 for s in steps}
    d1 = (m[delta] - m[-delta]) / (2 * delta)
    d2 = (m[delta / 2] - m[-delta / 2]) / delta
    value = (4 * d2 - d1) / 3
    se = np.sqrt(
        (16 / delta**2) * (var[delta / 2] + var[-delta / 2]) / 9 + (var[delta] + var[-delta]) / (4 * delta**2) / 9
    )
    return float(value), float(se)


def stochastic_criticality(
    traj: Trajectory,
    battery: Sequence[TestVectorField],
    q: float | None = None,
    delta: float = 1e-3,
    samples: int = 64,
    dt: float = 1e-3,
    master_seed: int = 0,
    particles: int = 16,
    noise: NoiseModel | None = None,
    form: PdeForm | str = PdeForm.PROOF,
    theta_crit_rel: float = 1e-4,
    theta_res_rel: float = 1e-5,
    ensemble: FlowEnsemble | None = None,
) -> VariationReport:
    """Criticality of the diffusion flow with generator ½Δ + u·∇.

    The ε-derivative uses common random numbers: one ensemble of base paths
    serves every ε.  The verdict is ``inconclusive`` when an error bar is not
    below θ_crit.
    """
    q = traj.q if q is None else q
    if q != traj.q:
        traj = dataclasses.replace(traj, q=q)
    if len(battery) < 5:
        raise ValueError("criticality needs a battery of at least 5 test fields")
    form = PdeForm(form)
    ens = ensemble or simulate_flow(traj, noise, samples, dt, master_seed, particles)
    rows, stochastic = [], []
    for v in battery:
        mean, se, _ = crn_derivative(ens, v, q, delta)
        rows.append(
            FieldVariation(v.label, mean, se, derivative_analytic(traj, v, q), derivative_el(traj, v, q, form))
        )
        stochastic.append({"label": v.label, "derivative_mc": mean, "stderr": se})
    g = traj.grid
    e_mc, e_se = mc_energy(ens, q)
    e0 = unperturbed_energy(traj, q)
    scale = max(e0, 1.0)
    theta_crit = theta_crit_rel * scale
    res = max(g.l2_norm(el_residual(traj, k, form)[1]) for k in range(1, traj.K))
    mnorm = max(g.l2_norm(m) for m in traj.momenta)
    theta_res = theta_res_rel * mnorm
    if max(r["stderr"] for r in stochastic) >= theta_crit:
        verdict = "inconclusive"
    elif max(abs(r.derivative_fd) for r in rows) <= theta_crit and res <= theta_res:
        verdict = "critical"
    else:
        verdict = "non-critical"
    return VariationReport(
        q=q,
        delta=delta,
        fields=rows,
        energy=e0,
        energy_scale=scale,
        residual_norm=res,
        momentum_norm=mnorm,
        theta_crit=theta_crit,
        theta_res=theta_res,
        verdict=verdict,
        form=form.value,
        digest=inputs_digest(traj, battery, q, delta, form.value, samples, dt, master_seed, particles),
        anchor="stochastic flow with generator L(u_t) is critical for E_q iff u solves the weighted porous media equation",
        extra={
            "stochastic": {
                "samples": samples,
                "dt": dt,
                "master_seed": master_seed,
                "particles_per_axis": particles,
                "noise": "constant_identity",
                "mc_energy": e_mc,
                "mc_energy_stderr": e_se,
                "max_det_error": float(ens.max_det_error.max()),
                "fields": stochastic,
            }
        },
    )
