"""Flow engine: the reduced parabolic Monge-Ampere flow with an exact gauge split.

The flow ``phi' = log(q / c0) + kappa phi`` (``h0 = 0`` on the round
background) depends on ``phi`` only through ``L phi``, so writing
``phi = psi + alpha`` with ``mean0(psi) = 0`` gives

    psi'   = log(q / c0) - m + kappa psi,     m = mean0(log(q / c0)),
    alpha' = kappa alpha + m.

``psi`` is integrated with classical RK4; ``alpha`` is reconstructed from the
recorded ``m(t)`` by exact exponential quadrature (piecewise-linear ``m``).
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate as spi

from . import geometry as geo
from . import kernels
from .errors import PositivityViolation, StabilityViolation, TailNotConverged, ValidationError

TAIL_TOL = 1e-8


@dataclass(frozen=True)
class FlowConfig:
    """Time stepping parameters.

    The default ``dt`` is sized for the default 513-node grid: explicit RK4 on
    this operator needs ``dt * mu_max / min(q) <= safety * 2.785``.
    """

    dt: float = 1e-5
    t_max: float = 10.0
    sample_every: int = 100
    record_every: int = 10
    safety: float = 0.9
    scheme: str = "rk4"

    @property
    def nsteps(self) -> int:
        return int(round(self.t_max / self.dt))

    def problems(self) -> list[str]:
        out = []
        if not (self.dt > 0 and math.isfinite(self.dt)):
            out.append(f"flow.dt must be positive, got {self.dt!r}")
        if not (self.t_max > 0 and math.isfinite(self.t_max)):
            out.append(f"flow.t_max must be positive, got {self.t_max!r}")
        if not (0 < self.safety <= 1):
            out.append(f"flow.safety must lie in (0, 1], got {self.safety!r}")
        if self.scheme != "rk4":
            out.append(f"flow.scheme must be 'rk4', got {self.scheme!r}")
        for name in ("sample_every", "record_every"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                out.append(f"flow.{name} must be a positive integer, got {v!r}")
        if out:
            return out
        n = self.t_max / self.dt
        if abs(n - round(n)) > 1e-9 * n:
            out.append(f"flow.t_max / flow.dt must be an integer, got {n!r}")
        elif self.nsteps % self.sample_every:
            out.append(f"flow.sample_every ({self.sample_every}) must divide the step count ({self.nsteps})")
        if self.sample_every % self.record_every:
            out.append(f"flow.record_every ({self.record_every}) must divide flow.sample_every")
        return out

    def validate(self) -> "FlowConfig":
        probs = self.problems()
        if probs:
            raise ValidationError(probs)
        return self

    def q_floor(self, bg: geo.Background) -> float:
        """Smallest admissible ``min q`` for which ``dt`` is stable."""
        return self.dt * bg.mu_max / (self.safety * kernels.RK4_REAL_LIMIT)


@dataclass(frozen=True, eq=False)
class FlowState:
    """Snapshot of the flow; ``phi = psi + alpha``."""

    t: float
    psi: np.ndarray
    alpha: float
    q: np.ndarray
    W: np.ndarray
    h: np.ndarray
    m: float
    phi_dot: np.ndarray
    c: float

    @property
    def phi(self) -> np.ndarray:
        return self.psi + self.alpha


def make_state(bg: geo.Background, t: float, psi: np.ndarray, alpha: float) -> FlowState:
    """Assemble a state from its gauge part and constant mode."""
    q = geo.density(bg, psi)
    h = geo.transverse_ricci_potential(bg, q)
    logq = np.log1p(bg.L(psi) / bg.c0)
    m = float(bg.mean0(logq))
    phi_dot = logq + bg.kappa * (psi + alpha)
    c = float(np.sum(bg.weights * q * (phi_dot - h)) / bg.V)
    return FlowState(t=float(t), psi=np.asarray(psi, dtype=float), alpha=float(alpha), q=q,
                     W=bg.a * q, h=h, m=m, phi_dot=phi_dot, c=c)


@dataclass(frozen=True, eq=False)
class GaugeTrack:
    """Constant mode reconstructed from the recorded gauge source ``m(t)``."""

    t: np.ndarray
    m: np.ndarray
    alpha0: float
    alpha: np.ndarray
    kappa: float
    bounded: bool
    tail_bound: float
    a: np.ndarray | None = None

    def at(self, times: np.ndarray) -> np.ndarray:
        """``alpha`` at record-aligned times (exact lookups, no interpolation)."""
        dt = self.t[1] - self.t[0]
        idx = np.rint((np.asarray(times) - self.t[0]) / dt).astype(int)
        return self.alpha[idx]


def _expint_coeffs(kappa: float, step: float):
    z = kappa * step
    E = math.exp(z)
    E1 = math.expm1(z) / kappa
    # (e^z - 1 - z) / kappa^2 without cancellation
    E2 = (math.expm1(z) - z) / kappa**2 if z > 1e-3 else step**2 * (0.5 + z / 6 + z * z / 24 + z**3 / 120)
    return E, E1, E2


def _tail_window(t: np.ndarray) -> np.ndarray:
    return t >= t[-1] - 0.1 * (t[-1] - t[0])


def alpha_solve(traj: "Trajectory", alpha0: float | None = None) -> GaugeTrack:
    """Constant mode from ``alpha' = kappa alpha + m`` by exponential quadrature.

    With ``alpha0=None`` the bounded branch is returned, computed by the stable
    backward recursion from ``alpha(T) = -m(T) / kappa``; its ``alpha0`` is the
    shooting value. Otherwise the forward recursion from ``alpha0``.
    """
    t, m, kappa = traj.t_rec, traj.m_rec, traj.kappa
    step = float(t[1] - t[0]) if t.size > 1 else 0.0
    alpha = np.empty_like(m)
    tail = 0.0
    if t.size > 1:
        E, E1, E2 = _expint_coeffs(kappa, step)
        # increment over [t_k, t_k+1] for linear m
        inc = m[:-1] * E1 + (m[1:] - m[:-1]) * E2 / step
    if alpha0 is None:
        win = _tail_window(t)
        dev = float(np.max(np.abs(m[win] - m[-1]))) if t.size else 0.0
        tail = 2.0 * dev * math.exp(-kappa * (t[-1] - t[0])) / kappa
        alpha[-1] = -m[-1] / kappa
        for k in range(t.size - 2, -1, -1):
            alpha[k] = (alpha[k + 1] - inc[k]) / E
        bounded = True
    else:
        alpha[0] = alpha0
        for k in range(t.size - 1):
            alpha[k + 1] = E * alpha[k] + inc[k]
        bounded = False
    return GaugeTrack(t=t, m=m, alpha0=float(alpha[0]), alpha=alpha, kappa=kappa,
                      bounded=bounded, tail_bound=tail)


@dataclass(eq=False)
class Trajectory:
    """Sampled flow with dense gauge records.

    ``t``/``psi`` are the sampled states; ``t_rec``/``m_rec``/``g_rec`` the dense
    records of ``m(t)`` and ``||grad phi'||^2`` (V-normalised). Derived per-sample
    fields are computed lazily.
    """

    bg: geo.Background
    flow: FlowConfig
    t: np.ndarray
    psi: np.ndarray
    t_rec: np.ndarray
    m_rec: np.ndarray
    g_rec: np.ndarray
    alpha0: float | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def kappa(self) -> float:
        return self.bg.kappa

    @cached_property
    def gauge(self) -> GaugeTrack:
        return alpha_solve(self, self.alpha0)

    @cached_property
    def alpha(self) -> np.ndarray:
        return self.gauge.at(self.t)

    @property
    def phi(self) -> np.ndarray:
        return self.psi + self.alpha[:, None]

    @cached_property
    def q(self) -> np.ndarray:
        return self.bg.c0 + self.bg.L(self.psi)

    @cached_property
    def h(self) -> np.ndarray:
        return np.stack([geo.transverse_ricci_potential(self.bg, q) for q in self.q])

    @cached_property
    def R(self) -> np.ndarray:
        return (2.0 - self.bg.L(np.log(self.q))) / self.q

    @cached_property
    def m(self) -> np.ndarray:
        return np.log1p(self.bg.L(self.psi) / self.bg.c0) @ self.bg.weights

    @cached_property
    def phi_dot(self) -> np.ndarray:
        return np.log1p(self.bg.L(self.psi) / self.bg.c0) + self.kappa * self.phi

    @cached_property
    def c(self) -> np.ndarray:
        """``c(t)``: the ``dmu_phi``-mean of ``phi' - h``."""
        return self.mean_phi(self.phi_dot - self.h)

    @cached_property
    def functionals(self) -> dict[str, np.ndarray]:
        """Functional series at every sample (see :mod:`sasakiflow.functionals`)."""
        from .functionals import SeriesEvaluator

        return SeriesEvaluator(self.bg)(self.phi)

    @cached_property
    def y(self) -> np.ndarray:
        """``(1/V) int phi' dmu_phi``."""
        return self.mean_phi(self.phi_dot)

    @cached_property
    def lemma31_Q(self) -> np.ndarray:
        """``Q = K - F0 - (1/V) int phi' dmu_phi``."""
        f = self.functionals
        return f["K"] - f["F0"] - self.y

    def mean_phi(self, f: np.ndarray) -> np.ndarray:
        return np.sum(self.bg.weights * self.q * f, axis=-1) / self.bg.V

    def state(self, i: int) -> FlowState:
        return make_state(self.bg, self.t[i], self.psi[i], self.alpha[i])

    def __len__(self):
        return self.t.size


def _raise_failure(res, bg, cfg, t0):
    t = t0 + res["fail_step"] * cfg.dt
    if res["status"] == 1:
        raise PositivityViolation(
            f"flow left the admissible cone at t = {t:.6g}, node {res['fail_node']} "
            f"(q = {res['fail_q']:.3e})", node=int(res["fail_node"]))
    raise StabilityViolation(
        f"step size {cfg.dt:g} unstable at t = {t:.6g}: min q = {res['fail_q']:.4g} "
        f"below the bound {cfg.q_floor(bg):.4g}")


def run(bg: geo.Background, cfg: FlowConfig, phi0, alpha0: float | None = None,
        provenance: dict | None = None) -> Trajectory:
    """Integrate from ``phi0`` to ``cfg.t_max``.

    The constant part of ``phi0`` is not used: by default the constant mode is
    placed on its bounded branch (``alpha0 = c0_shoot``); pass ``alpha0`` to
    follow another branch.
    """
    cfg.validate()
    phi0 = np.asarray(phi0.values if isinstance(phi0, geo.PotentialProfile) else phi0, dtype=float)
    psi0 = phi0 - bg.mean0(phi0)
    q0 = bg.c0 + bg.L(psi0)
    geo.check_admissible(q0)
    if q0.min() < cfg.q_floor(bg):
        raise StabilityViolation(
            f"dt = {cfg.dt:g} exceeds the stability bound "
            f"{cfg.dt * q0.min() / cfg.q_floor(bg):.3g} for this initial metric")
    res = kernels.rk4_integrate(bg.rows, bg.weights, bg.c0, bg.kappa, psi0, cfg.dt, cfg.nsteps,
                                cfg.sample_every, cfg.record_every, cfg.q_floor(bg))
    if res["status"] != 0:
        _raise_failure(res, bg, cfg, 0.0)
    nsam = res["samples"].shape[0]
    nrec = res["m"].size
    prov = {"backend": kernels.BACKEND}
    prov.update(provenance or {})
    return Trajectory(
        bg=bg, flow=cfg,
        t=np.arange(nsam) * (cfg.dt * cfg.sample_every),
        psi=res["samples"],
        t_rec=np.arange(nrec) * (cfg.dt * cfg.record_every),
        m_rec=res["m"], g_rec=res["energy"] / bg.V,
        alpha0=alpha0, provenance=prov)


def step(bg: geo.Background, state: FlowState, dt: float, safety: float = 0.9) -> FlowState:
    """One RK4 step of ``psi``; ``alpha`` follows by exact quadrature over the step."""
    cfg = FlowConfig(dt=dt, t_max=dt, sample_every=1, record_every=1, safety=safety)
    res = kernels.rk4_integrate(bg.rows, bg.weights, bg.c0, bg.kappa, state.psi, dt, 1, 1, 1,
                                cfg.q_floor(bg))
    if res["status"] != 0:
        _raise_failure(res, bg, cfg, state.t)
    m0, m1 = res["m"]
    E, E1, E2 = _expint_coeffs(bg.kappa, dt)
    alpha = E * state.alpha + m0 * E1 + (m1 - m0) * E2 / dt
    return make_state(bg, state.t + dt, res["psi"], alpha)


# ---------------------------------------------------------------------------
# initial-constant machinery


@dataclass(frozen=True)
class ShootValue:
    value: float
    tail_bound: float


@dataclass(frozen=True)
class PaperC0:
    """The initial-constant formula evaluated on a trajectory.

    ``value`` uses the weight ``exp(-t)`` verbatim; ``value_kappa`` uses
    ``exp(-kappa t)``. ``correction`` is ``mean_{mu_init}(log(q/c0) + kappa psi0)``;
    ``matched = (value_kappa - correction) / kappa`` is the exact bounded-branch
    constant for a non-constant start.
    """

    value: float
    value_kappa: float
    tail_bound: float
    correction: float
    matched: float
    mean_h0: float


def c0_shoot(traj: Trajectory, tol: float = TAIL_TOL) -> ShootValue:
    """``-int_0^inf exp(-kappa t) m dt``: the constant that keeps ``alpha`` bounded."""
    g = alpha_solve(traj, None)
    if not g.tail_bound <= tol:
        raise TailNotConverged(f"c0_shoot tail bound {g.tail_bound:.3e} exceeds {tol:g}")
    return ShootValue(value=g.alpha0, tail_bound=g.tail_bound)


def _weighted_integral(t, f, rate):
    return float(spi.simpson(np.exp(-rate * t) * f, x=t))


def c0_paper(traj: Trajectory, bg: geo.Background | None = None, tol: float = TAIL_TOL) -> PaperC0:
    """``int_0^inf exp(-t) ||grad phi'||^2 dt + mean0(h0)`` with a tail bound."""
    bg = bg or traj.bg
    t, g = traj.t_rec, traj.g_rec
    T = t[-1] - t[0]
    gmax = float(np.max(g[_tail_window(t)]))
    tail = max(math.exp(-T), math.exp(-traj.kappa * T)) * gmax / min(1.0, traj.kappa)
    if not tail <= tol:
        raise TailNotConverged(f"c0_paper tail bound {tail:.3e} exceeds {tol:g}")
    mean_h0 = float(bg.mean0(bg.h0))
    val = _weighted_integral(t, g, 1.0) + mean_h0
    val_k = _weighted_integral(t, g, traj.kappa) + mean_h0
    psi0 = traj.psi[0]
    q0 = bg.c0 + bg.L(psi0)
    corr = float(np.sum(bg.weights * q0 * (np.log(q0 / bg.c0) + traj.kappa * psi0)) / bg.V)
    return PaperC0(value=val, value_kappa=val_k, tail_bound=tail, correction=corr,
                   matched=(val_k - corr) / traj.kappa, mean_h0=mean_h0)


# ---------------------------------------------------------------------------
# normalization map


def _target(direction: str, bg: geo.Background):
    if direction not in ("to_unit", "to_sasaki"):
        raise ValueError(f"direction must be 'to_unit' or 'to_sasaki', got {direction!r}")
    src = "sasaki" if direction == "to_unit" else "unit"
    if bg.config.normalization != src:
        raise ValueError(f"{direction} expects a {src}-mode source")
    kap = geo.NORMALIZATIONS["sasaki"][1]
    # unit = kappa * sasaki for potentials, metrics and times
    return (kap if direction == "to_unit" else 1.0 / kap), \
        dataclasses.replace(bg.config, normalization="unit" if direction == "to_unit" else "sasaki")


def rescale_normalization(obj, direction: str, bg: geo.Background | None = None):
    """Exact map between the sasaki and unit normalizations.

    ``omega_unit = kappa omega_sasaki``, ``phi_unit = kappa phi_sasaki`` and
    ``t_unit = kappa t_sasaki`` with ``kappa = 4``. Accepts a Background, a
    Trajectory, or a PotentialProfile (which needs ``bg``).
    """
    if isinstance(obj, geo.Background):
        _, cfg = _target(direction, obj)
        return geo.build_background(cfg)
    if isinstance(obj, geo.PotentialProfile):
        if bg is None:
            raise ValueError("mapping a profile needs its background")
        s, cfg = _target(direction, bg)
        return geo.PotentialProfile.from_values(geo.build_background(cfg), s * obj.values)
    if isinstance(obj, Trajectory):
        s, cfg = _target(direction, obj.bg)
        nbg = geo.build_background(cfg)
        f = obj.flow
        nflow = dataclasses.replace(f, dt=f.dt * s, t_max=f.t_max * s)
        out = Trajectory(bg=nbg, flow=nflow, t=obj.t * s, psi=obj.psi * s, t_rec=obj.t_rec * s,
                         m_rec=obj.m_rec.copy(), g_rec=obj.g_rec / s,
                         alpha0=None if obj.alpha0 is None else obj.alpha0 * s,
                         provenance=dict(obj.provenance, rescaled=direction))
        return out
    raise TypeError(f"cannot rescale {type(obj).__name__}")


# ---------------------------------------------------------------------------
# consistency residuals


def time_derivative(values: np.ndarray, dt: float):
    """Fourth-order differences along axis 0 at samples ``2 .. S-3``.

    The ``t = 0`` sample is kept out of every stencil: a discrete initial
    profile is not on the slow manifold of the semi-discrete flow, and the
    resulting grid-scale layer (lifetime ``~1/mu_max``) is not resolvable by
    differences of the samples. Sample 2 therefore uses the forward-biased
    stencil on samples 1..5. Returns (indices, derivative).
    """
    v = np.asarray(values)
    d = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12.0 * dt)
    if v.shape[0] >= 6:
        d[0] = (-3 * v[1] - 10 * v[2] + 18 * v[3] - 6 * v[4] + v[5]) / (12.0 * dt)
    return np.arange(2, v.shape[0] - 2), d


def consistency_residuals(bg: geo.Background, traj: Trajectory) -> dict:
    """Pointwise residuals of the evolution identities at interior samples.

    (a) ``phi' - h - c(t)``; (b) ``phi'' - Delta phi' - kappa phi'``;
    (c) ``h' - Delta h - kappa h - a(t)`` and the variant with coefficient 1;
    (d) ``d/dt dmu_phi - (Delta phi') dmu_phi``. Time derivatives use
    fourth-order differences of the samples.
    """
    dts = float(traj.t[1] - traj.t[0])
    q, h, pd = traj.q, traj.h, traj.phi_dot
    res_a = np.max(np.abs(pd - h - traj.c[:, None]), axis=1)
    idx, pdd = time_derivative(pd, dts)
    _, hd = time_derivative(h, dts)
    _, qd = time_derivative(q, dts)
    qi = q[idx]
    lap_pd = bg.L(pd[idx]) / qi
    lap_h = bg.L(h[idx]) / qi
    res_b = np.max(np.abs(pdd - lap_pd - traj.kappa * pd[idx]), axis=1)
    out = {"t": traj.t, "t_interior": traj.t[idx], "c": traj.c, "a": res_a}
    for name, coef in (("c_kappa", traj.kappa), ("c_literal", 1.0)):
        r = hd - lap_h - coef * h[idx]
        a_t = np.sum(bg.weights * qi * r, axis=1) / bg.V
        out[name] = np.max(np.abs(r - a_t[:, None]), axis=1)
        out["a_t_" + name.split("_")[1]] = a_t
    out["b"] = res_b
    out["d"] = np.max(np.abs(qd - lap_pd * qi), axis=1)
    return out
