"""Reduced S^1-invariant transverse geometry on the 2-sphere.

A rotationally symmetric transverse metric is described on the moment
coordinate ``x in [0, 1]``. With ``a(x) = x(1 - x)`` and the cylinder
coordinate ``s = log(x / (1 - x))`` one has ``d/ds = a d/dx``. The metric
density per ``ds`` is

    W = W0 + phi''_s = a(x) * q(x),    q = c0 + L phi,

where ``L f = (a f_x)_x`` is the Legendre operator and ``W0 = c0 a``. All
discrete work is done with ``q`` (density per ``dx``), which stays positive
up to the poles.

``L`` is discretised with lumped quadratic spectral elements on the uniform
grid: ``L = -diag(w)^-1 K`` where ``K`` is the exact element stiffness
matrix of ``int a f' g' dx`` and ``w`` are Simpson weights. This makes the
operator symmetric in the ``w`` inner product and conservative
(``sum(w * L f) = 0``), so self-adjointness, zero-mean and Gauss-Bonnet hold
to rounding error rather than to truncation error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy import linalg

from .errors import (
    PositivityViolation,
    SamplingFailed,
    SolvabilityResidualExceeded,
    ValidationError,
)

# normalization -> (c0, kappa); kappa * c0 = 2 in both modes
NORMALIZATIONS = {"unit": (2.0, 1.0), "sasaki": (0.5, 4.0)}
QUADRATURES = ("sem2",)
SOLVABILITY_TOL = 1e-6


@dataclass(frozen=True)
class GeometryConfig:
    """Static description of the reduced testbed."""

    n: int = 1
    normalization: Literal["unit", "sasaki"] = "unit"
    grid_nodes: int = 513
    quadrature: str = "sem2"

    def problems(self) -> list[str]:
        out = []
        if self.n != 1:
            out.append(f"geometry.n must be 1, got {self.n!r}")
        if self.normalization not in NORMALIZATIONS:
            out.append(f"geometry.normalization must be one of {sorted(NORMALIZATIONS)}, "
                       f"got {self.normalization!r}")
        if not isinstance(self.grid_nodes, (int, np.integer)) or self.grid_nodes < 65:
            out.append(f"geometry.grid_nodes must be an integer >= 65, got {self.grid_nodes!r}")
        elif self.grid_nodes % 2 == 0:
            out.append(f"geometry.grid_nodes must be odd, got {self.grid_nodes}")
        if self.quadrature not in QUADRATURES:
            out.append(f"geometry.quadrature must be one of {QUADRATURES}, got {self.quadrature!r}")
        return out

    def validate(self) -> "GeometryConfig":
        probs = self.problems()
        if probs:
            raise ValidationError(probs)
        return self


# ---------------------------------------------------------------------------
# discrete operator

_REF_NODES = np.array([0.0, 0.5, 1.0])
_GAUSS_T, _GAUSS_W = npleg.leggauss(5)
_GAUSS_T = 0.5 * (_GAUSS_T + 1.0)
_GAUSS_W = 0.5 * _GAUSS_W


def _ref_basis(t):
    """Quadratic Lagrange basis on [0, 1] at nodes 0, 1/2, 1 and derivatives."""
    t = np.asarray(t, dtype=float)
    phi = np.stack([2 * (t - 0.5) * (t - 1), -4 * t * (t - 1), 2 * t * (t - 0.5)])
    dphi = np.stack([4 * t - 3, -8 * t + 4, 4 * t - 1])
    return phi, dphi


def assemble_stiffness(x: np.ndarray, weight: np.ndarray | None = None) -> np.ndarray:
    """Banded stiffness of ``int a(x) omega(x) f' g' dx`` in upper LAPACK form.

    ``omega`` is given at the nodes and interpolated by the element basis;
    ``None`` means ``omega = 1``. Returns ``ab`` of shape ``(3, N)`` with
    ``ab[2 + i - j, j] = K[i, j]`` for ``i <= j``.
    """
    N = x.size
    ne = (N - 1) // 2
    h = x[2] - x[0]
    phi, dphi = _ref_basis(_GAUSS_T)
    x0 = x[0:-1:2]
    xq = x0[:, None] + h * _GAUSS_T[None, :]
    coef = xq * (1.0 - xq)
    if weight is not None:
        nodal = np.stack([weight[0:-1:2], weight[1::2], weight[2::2]], axis=1)
        coef = coef * (nodal @ phi)
    # Ke[e, j, k] = sum_g gw a dphi_j dphi_k / h
    Ke = np.einsum("eg,jg,kg->ejk", coef * _GAUSS_W[None, :], dphi, dphi) / h
    ab = np.zeros((3, N))
    base = 2 * np.arange(ne)
    for j in range(3):
        for k in range(j, 3):
            cols = base + k
            ab[2 + j - k, cols] += Ke[:, j, k]
    assert ne * 2 == N - 1
    return ab


def lumped_weights(x: np.ndarray) -> np.ndarray:
    """Simpson weights; they integrate quadratics per element exactly."""
    h = x[2] - x[0]
    w = np.zeros(x.size)
    w[0:-1:2] += h / 6
    w[1::2] += 4 * h / 6
    w[2::2] += h / 6
    return w


def band_matvec(ab: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Product of the symmetric banded matrix ``ab`` (upper form) with ``f``.

    ``f`` may carry extra leading axes.
    """
    out = ab[2] * f
    out[..., :-1] += ab[1, 1:] * f[..., 1:]
    out[..., 1:] += ab[1, 1:] * f[..., :-1]
    out[..., :-2] += ab[0, 2:] * f[..., 2:]
    out[..., 2:] += ab[0, 2:] * f[..., :-2]
    return out


def band_to_dense(ab: np.ndarray) -> np.ndarray:
    N = ab.shape[1]
    K = np.diag(ab[2])
    K += np.diag(ab[1, 1:], 1) + np.diag(ab[1, 1:], -1)
    K += np.diag(ab[0, 2:], 2) + np.diag(ab[0, 2:], -2)
    assert K.shape == (N, N)
    return K


def legendre_rows(ab: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Row-banded storage ``B[i, d + 2] = L[i, i + d]`` of ``L = -K / w``."""
    N = w.size
    K = band_to_dense(ab)
    B = np.zeros((N, 5))
    for d in range(-2, 3):
        i = np.arange(max(0, -d), min(N, N - d))
        B[i, d + 2] = -K[i, i + d] / w[i]
    return B


def first_derivative(f: np.ndarray, dx: float) -> np.ndarray:
    """Fourth-order finite-difference d/dx on the uniform grid (last axis)."""
    f = np.asarray(f, dtype=float)
    d = np.empty_like(f)
    d[..., 2:-2] = (f[..., :-4] - 8 * f[..., 1:-3] + 8 * f[..., 3:-1] - f[..., 4:]) / 12.0
    d[..., 0] = (-25 * f[..., 0] + 48 * f[..., 1] - 36 * f[..., 2] + 16 * f[..., 3] - 3 * f[..., 4]) / 12.0
    d[..., 1] = (-3 * f[..., 0] - 10 * f[..., 1] + 18 * f[..., 2] - 6 * f[..., 3] + f[..., 4]) / 12.0
    d[..., -1] = -(-25 * f[..., -1] + 48 * f[..., -2] - 36 * f[..., -3] + 16 * f[..., -4] - 3 * f[..., -5]) / 12.0
    d[..., -2] = -(-3 * f[..., -1] - 10 * f[..., -2] + 18 * f[..., -3] - 6 * f[..., -4] + f[..., -5]) / 12.0
    return d / dx


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True, eq=False)
class Background:
    """The fixed round background and its discretisation.

    ``W0`` is the background density per ``ds``; ``h0`` its Ricci potential
    (identically zero, the round metric is Einstein). ``weights`` are the
    lumped quadrature weights in ``x``; ``V = c0`` since ``sum(weights) = 1``.
    """

    config: GeometryConfig
    x: np.ndarray
    weights: np.ndarray
    c0: float
    kappa: float
    V: float
    W0: np.ndarray
    h0: np.ndarray
    stiffness: np.ndarray  # banded upper form, shape (3, N)
    rows: np.ndarray  # L in row-banded form, shape (N, 5)
    mu_max: float  # largest eigenvalue of K v = mu diag(w) v
    metric: "MetricData" = field(init=False, repr=False)

    @property
    def N(self) -> int:
        return self.x.size

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def a(self) -> np.ndarray:
        return self.x * (1.0 - self.x)

    def L(self, f: np.ndarray) -> np.ndarray:
        """Legendre operator ``(a f_x)_x`` (acts on the last axis)."""
        return -band_matvec(self.stiffness, f) / self.weights

    def energy(self, f: np.ndarray, g: np.ndarray | None = None) -> float:
        """Unnormalised Dirichlet form ``int a f_x g_x dx``."""
        g = f if g is None else g
        return float(f @ band_matvec(self.stiffness, g))

    def mean0(self, f: np.ndarray) -> np.ndarray:
        """``(1/V) int f dmu_0``; the background measure is ``c0 dx``."""
        return f @ self.weights

    def __repr__(self):
        c = self.config
        return f"Background({c.normalization}, N={c.grid_nodes}, kappa={self.kappa})"


@dataclass(frozen=True, eq=False)
class PotentialProfile:
    """Grid values of a basic potential with cached s-derivatives."""

    values: np.ndarray
    phi_s: np.ndarray
    phi_ss: np.ndarray

    @classmethod
    def from_values(cls, bg: Background, values) -> "PotentialProfile":
        v = np.array(values, dtype=float).reshape(-1)
        if v.size != bg.N:
            raise ValueError(f"profile has {v.size} nodes, background has {bg.N}")
        a = bg.a
        return cls(values=v, phi_s=a * first_derivative(v, bg.dx), phi_ss=a * bg.L(v))


@dataclass(frozen=True, eq=False)
class MetricData:
    """Metric density with its curvature and Ricci potential.

    ``q`` is the density per ``dx`` (``W = a q``). ``h`` is the Ricci potential
    in the flow's sign convention, ``Delta h = kappa - R``, normalised by
    ``(1/V) int exp(-h) dmu_W = 1``.
    """

    q: np.ndarray
    W: np.ndarray
    R: np.ndarray
    h: np.ndarray
    solvability_residual: float


def _as_values(phi) -> np.ndarray:
    if isinstance(phi, PotentialProfile):
        return phi.values
    return np.asarray(phi, dtype=float)


def _q(metric) -> np.ndarray:
    return metric.q if isinstance(metric, MetricData) else np.asarray(metric, dtype=float)


def build_background(config: GeometryConfig | None = None) -> Background:
    """Construct the Einstein background for ``config``."""
    config = (config or GeometryConfig()).validate()
    c0, kappa = NORMALIZATIONS[config.normalization]
    x = np.linspace(0.0, 1.0, config.grid_nodes)
    w = lumped_weights(x)
    ab = assemble_stiffness(x)
    # largest eigenvalue of w^-1/2 K w^-1/2 via a banded symmetric solve
    s = 1.0 / np.sqrt(w)
    scaled = ab.copy()
    for r, off in ((0, 2), (1, 1), (2, 0)):
        scaled[r, off:] *= s[off:] * s[: x.size - off]
    mu_max = float(linalg.eig_banded(scaled, eigvals_only=True, select="i",
                                     select_range=(x.size - 1, x.size - 1))[0])
    bg = Background(config=config, x=x, weights=w, c0=c0, kappa=kappa, V=c0,
                    W0=c0 * x * (1 - x), h0=np.zeros_like(x), stiffness=ab,
                    rows=legendre_rows(ab, w), mu_max=mu_max)
    q0 = np.full_like(x, c0)
    object.__setattr__(bg, "metric", MetricData(q=q0, W=bg.W0.copy(), R=np.full_like(x, kappa),
                                                h=np.zeros_like(x), solvability_residual=0.0))
    return bg


def density(bg: Background, phi) -> np.ndarray:
    """``q = c0 + L phi``; raises if not positive."""
    q = bg.c0 + bg.L(_as_values(phi))
    check_admissible(q)
    return q


def check_admissible(q: np.ndarray) -> None:
    bad = np.flatnonzero(~(q > 0))
    if bad.size:
        i = int(bad[np.argmin(q[bad])]) if np.all(np.isfinite(q[bad])) else int(bad[0])
        raise PositivityViolation(f"metric density not positive at node {i} (q = {q[i]:.3e})", node=i)


def scalar_curvature(bg: Background, metric) -> np.ndarray:
    """``R = -(log W)''_s / W``, equivalently ``(2 - L log q) / q``."""
    q = _q(metric)
    check_admissible(q)
    return (2.0 - bg.L(np.log(q))) / q


def laplacian(bg: Background, metric, f) -> np.ndarray:
    """``Delta f = f''_s / W = L f / q``."""
    q = _q(metric)
    check_admissible(q)
    return bg.L(_as_values(f)) / q


def ricci_potential_raw(bg: Background, q: np.ndarray) -> tuple[np.ndarray, float]:
    """Unnormalised Ricci potential and the solvability residual.

    Solves ``L h = L log q + kappa q - 2``: write ``h = log q + H`` with
    ``L H = kappa q - 2``. The right side has zero integral because
    ``int q dx = c0`` and ``kappa c0 = 2``.
    """
    rhs = bg.kappa * q - 2.0
    residual = float(rhs @ bg.weights)
    if not abs(residual) <= SOLVABILITY_TOL:
        raise SolvabilityResidualExceeded(f"solvability residual {residual:.3e} exceeds {SOLVABILITY_TOL}")
    # K H = -w * rhs; pin H[0] = 0, the reduced matrix is SPD
    H = np.zeros_like(q)
    H[1:] = linalg.solveh_banded(bg.stiffness[:, 1:], -(bg.weights * rhs)[1:])
    return np.log(q) + H, residual


def normalize_potential(bg: Background, q: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Shift ``h`` so that ``(1/V) int exp(-h) q dx = 1``."""
    ww = bg.weights * q / bg.V
    shift = np.log(np.sum(ww * np.exp(-(h - h.min())))) - h.min()
    return h + shift


def transverse_ricci_potential(bg: Background, metric) -> np.ndarray:
    """Normalised Ricci potential of the metric (see :class:`MetricData`)."""
    q = _q(metric)
    check_admissible(q)
    h, _ = ricci_potential_raw(bg, q)
    return normalize_potential(bg, q, h)


def metric_density(bg: Background, phi) -> MetricData:
    q = density(bg, phi)
    h, res = ricci_potential_raw(bg, q)
    h = normalize_potential(bg, q, h)
    return MetricData(q=q, W=bg.a * q, R=(2.0 - bg.L(np.log(q))) / q, h=h,
                      solvability_residual=res)


def integrate(bg: Background, metric, f) -> float:
    """``(1/V) int f dmu_W``."""
    return float(np.sum(bg.weights * _q(metric) * _as_values(f)) / bg.V)


def grad_norm_sq(bg: Background, metric, f) -> float:
    """``(1/V) int |grad f|^2 dmu_W``; independent of ``W`` in this reduction."""
    return bg.energy(_as_values(f)) / bg.V


def grad_norm_pointwise(bg: Background, metric, f) -> np.ndarray:
    """``|grad f|_g`` at the nodes: ``sqrt(a f_x^2 / q)``."""
    fx = first_derivative(_as_values(f), bg.dx)
    return np.sqrt(bg.a * fx**2 / _q(metric))


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class SampleSpec:
    """Random smooth potentials as Legendre series in ``y = 2x - 1``.

    ``amplitude`` is the typical relative distortion ``|q / c0 - 1|`` contributed
    by each mode. ``margin`` is the required lower bound of ``min q / c0``.
    """

    mode_count: int = 3
    amplitude: float = 0.1
    symmetry: Literal["even", "full"] = "even"
    margin: float = 0.1


def legendre_coefficients(spec: SampleSpec, seed: int, c0: float) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if spec.symmetry == "even":
        degrees = 2 * np.arange(1, spec.mode_count + 1)
    elif spec.symmetry == "full":
        degrees = np.arange(1, spec.mode_count + 1)
    else:
        raise ValueError(f"unknown symmetry class {spec.symmetry!r}")
    z = rng.standard_normal(degrees.size)
    coef = np.zeros(degrees.max() + 1 if degrees.size else 1)
    coef[degrees] = spec.amplitude * c0 * z / (degrees * (degrees + 1.0))
    return coef


def solve_legendre(bg: Background, rhs: np.ndarray) -> np.ndarray:
    """Mean-zero solution of ``L f = rhs - mean0(rhs)``."""
    r = rhs - bg.mean0(rhs)
    f = np.zeros_like(r)
    f[1:] = linalg.solveh_banded(bg.stiffness[:, 1:], -(bg.weights * r)[1:])
    return f - bg.mean0(f)


def sample_potential(bg: Background, spec: SampleSpec, seed: int) -> PotentialProfile:
    """Deterministic admissible random potential, mean zero in ``dmu_0``.

    The grid profile is the discrete potential whose density ``q`` equals the
    series' exact ``c0 + L phi`` at the nodes. Sampling values of the series
    directly would add a grid-scale component to ``q`` of relative size
    ``O(dx^2)``, which the flow then damps in a short initial layer.
    """
    coef = legendre_coefficients(spec, seed, bg.c0)
    degrees = np.arange(coef.size)
    y = 2 * bg.x - 1
    Lphi = npleg.legval(y, -degrees * (degrees + 1.0) * coef)
    if spec.symmetry == "even":
        Lphi = 0.5 * (Lphi + Lphi[::-1])
    phi = solve_legendre(bg, Lphi)
    if spec.symmetry == "even":
        phi = 0.5 * (phi + phi[::-1])
    Lphi = bg.L(phi)
    if not np.all(np.isfinite(Lphi)):
        raise SamplingFailed("non-finite sample")

    def margin(s):
        return np.min(1.0 + s * Lphi / bg.c0)

    scale = 1.0
    if margin(1.0) < spec.margin:
        lo, hi = 0.0, 1.0
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if margin(mid) >= spec.margin:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-12:
                break
        else:
            raise SamplingFailed("bisection did not reach the admissibility margin")
        scale = lo
        if margin(scale) < spec.margin:
            raise SamplingFailed("no admissible rescaling found")
    return PotentialProfile.from_values(bg, scale * phi)


# ---------------------------------------------------------------------------
# spectrum


def _even_basis(N: int) -> np.ndarray:
    half = N // 2
    S = np.zeros((N, half + 1))
    i = np.arange(half)
    S[i, i] = 1.0
    S[N - 1 - i, i] = 1.0
    S[half, half] = 1.0
    return S


def linearized_spectrum(bg: Background, metric=None, sector: str = "even", count: int = 6) -> np.ndarray:
    """Lowest eigenvalues of ``-(Delta_W + kappa)`` on mean-zero profiles.

    Solves the dense generalised problem ``K v = mu diag(w q) v`` in the
    requested sector and discards the constant mode.
    """
    q = bg.metric.q if metric is None else _q(metric)
    check_admissible(q)
    K = band_to_dense(bg.stiffness)
    M = bg.weights * q
    if sector == "even":
        S = _even_basis(bg.N)
        K = S.T @ K @ S
        M = S.T @ (M[:, None] * S)
    elif sector == "full":
        M = np.diag(M)
    else:
        raise ValueError(f"unknown sector {sector!r}")
    k = min(count + 1, K.shape[0])
    mu = linalg.eigh(K, M, eigvals_only=True, subset_by_index=[0, k - 1])
    return mu[1:] - bg.kappa
