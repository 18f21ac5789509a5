"""Energy functionals I, J, F0, F (two variants) and the K-energy.

All functionals are V-normalised. J and K are computed as path integrals in
the path parameter with Gauss-Legendre quadrature; every path node evaluates
the metric and its curvature from scratch, so the closed forms in
:func:`k_energy_closed_form` and ``J = I / 2`` are independent oracles.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import logsumexp

from . import geometry as geo
from .errors import PositivityViolation


@dataclass(frozen=True)
class PathSpec:
    """Path ``phi_s = s phi`` (linear) or ``s^2 phi`` (quadratic) from 0 to phi."""

    kind: Literal["linear", "quadratic"] = "linear"
    nodes: int = 33

    def __post_init__(self):
        if self.nodes < 9:
            raise ValueError(f"path quadrature needs at least 9 nodes, got {self.nodes}")
        if self.kind not in ("linear", "quadratic"):
            raise ValueError(f"unknown path kind {self.kind!r}")

    def rule(self):
        """Nodes ``s``, weights, path factor ``f(s)`` and its derivative ``f'(s)``."""
        z, w = npleg.leggauss(self.nodes)
        s, w = 0.5 * (z + 1.0), 0.5 * w
        if self.kind == "linear":
            return s, w, s, np.ones_like(s)
        return s, w, s * s, 2 * s


@dataclass(frozen=True)
class FunctionalReport:
    I: float
    J: float
    F0: float
    F_b: float
    F_a: float
    K: float
    osc: float
    sup_phi: float
    mean_phi_mu0: float
    mean_phi_muphi: float
    norm_C0: float
    norm_C1: float
    norm_C2: float

    def as_dict(self) -> dict:
        return asdict(self)


def _values(phi) -> np.ndarray:
    return phi.values if isinstance(phi, geo.PotentialProfile) else np.asarray(phi, dtype=float)


def path_integrals(bg: geo.Background, phi: np.ndarray, path: PathSpec) -> tuple[float, float]:
    """``(J, K)`` by quadrature along the path.

    ``dJ/ds = (1/V) int phi_s' (dmu_0 - dmu_{phi_s})`` and
    ``dK/ds = -(1/V) int phi_s' (R_s - n kappa) dmu_{phi_s}``.
    """
    s, w, f, df = path.rule()
    Lphi = bg.L(phi)
    q = bg.c0 + f[:, None] * Lphi[None, :]  # density along the path
    if not np.all(q > 0):
        k, i = np.unravel_index(np.argmin(q), q.shape)
        raise PositivityViolation(f"path point s = {s[k]:.4f} inadmissible at node {i}", node=int(i))
    dphi = df[:, None] * phi[None, :]
    wts = bg.weights
    dJ = np.sum(wts * dphi * (bg.c0 - q), axis=1) / bg.V
    Rq = 2.0 - bg.L(np.log(q))  # R * q
    dK = -np.sum(wts * dphi * (Rq - bg.kappa * q), axis=1) / bg.V
    return float(w @ dJ), float(w @ dK)


def i_functional(bg: geo.Background, phi) -> float:
    """``I = (1/V) int phi (dmu_0 - dmu_phi)``."""
    phi = _values(phi)
    return float(-np.sum(bg.weights * phi * bg.L(phi)) / bg.V)


def k_energy_closed_form(bg: geo.Background, phi) -> float:
    """``K = (1/V) int q log(q/c0) dx - (kappa/2) I``, exact for the discrete operator."""
    phi = _values(phi)
    q = geo.density(bg, phi)
    return float(np.sum(bg.weights * q * np.log(q / bg.c0)) / bg.V - 0.5 * bg.kappa * i_functional(bg, phi))


def evaluate(bg: geo.Background, phi, path: PathSpec | None = None) -> FunctionalReport:
    """All functionals of one admissible potential."""
    path = path or PathSpec()
    phi = _values(phi)
    q = geo.density(bg, phi)
    J, K = path_integrals(bg, phi, path)
    I = i_functional(bg, phi)
    mean0 = float(bg.mean0(phi))
    F0 = J - mean0
    # -log((1/V) int exp(h0 - c phi) dmu_0) with a stable log-sum-exp
    F_b = F0 - float(logsumexp(bg.h0 - bg.kappa * phi, b=bg.weights))
    F_a = F0 - float(logsumexp(bg.h0 - phi, b=bg.weights))
    grad = np.sqrt(bg.a / bg.c0) * np.abs(geo.first_derivative(phi, bg.dx))
    c0n = float(np.max(np.abs(phi)))
    c1n = c0n + float(np.max(grad))
    c2n = c1n + float(np.max(np.abs(bg.L(phi)))) / bg.c0
    return FunctionalReport(
        I=I, J=J, F0=F0, F_b=F_b, F_a=F_a, K=K,
        osc=float(phi.max() - phi.min()), sup_phi=float(phi.max()),
        mean_phi_mu0=mean0, mean_phi_muphi=float(np.sum(bg.weights * q * phi) / bg.V),
        norm_C0=c0n, norm_C1=c1n, norm_C2=c2n)


def path_independence(bg: geo.Background, phi, nodes: int = 33) -> float:
    """``|J_lin - J_quad| + |K_lin - K_quad|`` for the two path families."""
    phi = _values(phi)
    J1, K1 = path_integrals(bg, phi, PathSpec("linear", nodes))
    J2, K2 = path_integrals(bg, phi, PathSpec("quadratic", nodes))
    return abs(J1 - J2) + abs(K1 - K2)


class SeriesEvaluator:
    """Functional series for a stack of potentials, vectorised in chunks.

    Implements the same formulas as :func:`evaluate`; the tests check both
    agree to rounding error.
    """

    def __init__(self, bg: geo.Background, path: PathSpec | None = None, chunk: int = 64):
        self.bg = bg
        self.path = path or PathSpec()
        self.chunk = chunk

    def _block(self, phi: np.ndarray) -> dict[str, np.ndarray]:
        bg = self.bg
        s, w, f, df = self.path.rule()
        Lphi = bg.L(phi)
        q1 = bg.c0 + Lphi
        geo.check_admissible(q1.ravel())
        q = bg.c0 + f[:, None, None] * Lphi[None]
        if not np.all(q > 0):
            raise PositivityViolation("inadmissible path point")
        wts = bg.weights
        dphi = df[:, None, None] * phi[None]
        dJ = np.sum(wts * dphi * (bg.c0 - q), axis=-1) / bg.V
        Rq = 2.0 - bg.L(np.log(q))
        dK = -np.sum(wts * dphi * (Rq - bg.kappa * q), axis=-1) / bg.V
        J = w @ dJ
        K = w @ dK
        I = -np.sum(wts * phi * Lphi, axis=-1) / bg.V
        mean0 = phi @ wts
        F0 = J - mean0
        grad = np.sqrt(bg.a / bg.c0) * np.abs(geo.first_derivative(phi, bg.dx))
        c0n = np.max(np.abs(phi), axis=-1)
        c1n = c0n + np.max(grad, axis=-1)
        return {
            "I": I, "J": J, "F0": F0,
            "F_b": F0 - logsumexp(bg.h0 - bg.kappa * phi, b=wts, axis=-1),
            "F_a": F0 - logsumexp(bg.h0 - phi, b=wts, axis=-1),
            "K": K,
            "osc": phi.max(axis=-1) - phi.min(axis=-1),
            "sup_phi": phi.max(axis=-1),
            "mean_phi_mu0": mean0,
            "mean_phi_muphi": np.sum(wts * q1 * phi, axis=-1) / bg.V,
            "norm_C0": c0n, "norm_C1": c1n,
            "norm_C2": c1n + np.max(np.abs(Lphi), axis=-1) / bg.c0,
        }

    def __call__(self, phi: np.ndarray) -> dict[str, np.ndarray]:
        phi = np.atleast_2d(np.asarray(phi, dtype=float))
        parts = [self._block(phi[i:i + self.chunk]) for i in range(0, phi.shape[0], self.chunk)]
        return {k: np.concatenate([p[k] for p in parts]) for k in FunctionalReport.__dataclass_fields__}


def derivative_check(bg: geo.Background, traj, series: dict | None = None) -> dict:
    """Finite-difference time derivatives of I, J, I - J and K against the variation formulas.

    Both printed candidates for ``dI/dt`` are evaluated: the second term with
    coefficient ``1/(2V)`` and with ``1/V``; ``I_variant`` names the one whose
    residual stays below ``tol``.
    """
    from .flow import time_derivative

    tol = 1e-4
    series = series or SeriesEvaluator(bg)(traj.phi)
    dts = float(traj.t[1] - traj.t[0])
    idx, dI = time_derivative(series["I"], dts)
    _, dJ = time_derivative(series["J"], dts)
    _, dK = time_derivative(series["K"], dts)
    phi, pd, q = traj.phi[idx], traj.phi_dot[idx], traj.q[idx]
    w, V = bg.weights, bg.V
    qdot = bg.L(pd)  # d/dt of the density of dmu_phi
    term1 = np.sum(w * pd * (bg.c0 - q), axis=1) / V
    term2 = np.sum(w * phi * qdot, axis=1) / V
    kform = np.sum(w * pd * qdot, axis=1) / V  # (1/V) int phi' Delta phi' dmu_phi
    res = {
        "t": traj.t[idx],
        "J": np.abs(dJ - term1),
        "I_minus_J": np.abs((dI - dJ) + term2),
        "K": np.abs(dK - kform),
        "I_half": np.abs(dI - (term1 - 0.5 * term2)),
        "I_full": np.abs(dI - (term1 - term2)),
        "dK_formula": kform,
    }
    ok = {k: bool(res[k].max() < tol) for k in ("I_half", "I_full")}
    res["I_variant"] = [k for k, v in ok.items() if v]
    res["tol"] = tol
    return res
