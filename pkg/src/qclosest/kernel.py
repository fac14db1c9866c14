"""Radially symmetric mollifiers and the ball-mass function.

A mollifier ``phi`` is a nonnegative, compactly supported (radius ``sigma``)
probability density on R^d.  Everything the fuzzy dynamics needs from it is
the ball-mass function

    K(s, r) = integral of phi(z - y) over z in B(0, r),   |y| = s,

i.e. the mass a blurred particle at distance ``s`` deposits inside a ball of
radius ``r``.  ``K`` is evaluated by

* d = 1: interval overlap with the one-dimensional CDF of ``phi``;
* d = 2, 3: radial quadrature of the spherical density of ``phi`` weighted
  by the fraction of each sphere lying inside the ball (circular arc in 2D,
  spherical cap in 3D).

The heavy lifting is done by numba-compiled scalar routines which the radius
solver and the dynamics call directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import optimize

__all__ = [
    "FAMILIES",
    "MollifierSpec",
    "BallMassKernel",
    "evaluate_phi",
    "ball_mass",
    "radial_cdf",
]

FAMILIES = ("bump", "cosine", "quartic")
_FAMILY_CODE = {name: i for i, name in enumerate(FAMILIES)}

# surface area of the unit sphere S^{d-1}
_SPHERE_AREA = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}
# volume of the unit ball in R^d
UNIT_BALL_VOLUME = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}

_CDF_CELLS = 128
_CDF_NODES = 8


def _profile_np(family: str, u):
    """Unnormalized radial profile g(u), u = |z| / sigma, on numpy arrays."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = u < 1.0
    ui = u[inside]
    if family == "bump":
        out[inside] = np.exp(-1.0 / (1.0 - ui * ui))
    elif family == "cosine":
        out[inside] = 0.5 * (1.0 + np.cos(np.pi * ui))
    else:
        w = 1.0 - ui * ui
        out[inside] = w * w
    return out


def _profile_slope_np(family: str, u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = u < 1.0
    ui = u[inside]
    if family == "bump":
        w = 1.0 - ui * ui
        out[inside] = -np.exp(-1.0 / w) * 2.0 * ui / (w * w)
    elif family == "cosine":
        out[inside] = -0.5 * np.pi * np.sin(np.pi * ui)
    else:
        out[inside] = -4.0 * ui * (1.0 - ui * ui)
    return out


@dataclass(frozen=True)
class MollifierSpec:
    """Choice of mollifier: radial family, support radius and dimension."""

    family: str = "quartic"
    sigma: float = 0.05
    dim: int = 2

    def __post_init__(self):
        if self.family not in _FAMILY_CODE:
            raise ValueError(f"unknown mollifier family {self.family!r}; expected one of {FAMILIES}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")

    @property
    def normalization(self) -> float:
        """Constant ``c`` with ``phi(z) = c * g(|z| / sigma)``."""
        return _normalization(self.family, self.sigma, self.dim)

    def sup_norm(self) -> float:
        """max phi, attained at the origin."""
        g0 = math.exp(-1.0) if self.family == "bump" else 1.0
        return self.normalization * g0

    def lipschitz_constant(self) -> float:
        """Upper bound on the Lipschitz constant of ``phi``.

        Exact for the cosine and quartic profiles; for the bump profile the
        maximal slope is located numerically and padded by a relative 1e-9.
        """
        if self.family == "cosine":
            slope = 0.5 * math.pi
        elif self.family == "quartic":
            slope = 8.0 / (3.0 * math.sqrt(3.0))
        else:
            slope = _max_bump_slope() * (1.0 + 1e-9)
        return self.normalization * slope / self.sigma


_NORM_CACHE: dict = {}


def _normalization(family: str, sigma: float, dim: int) -> float:
    key = (family, sigma, dim)
    if key not in _NORM_CACHE:
        total = _cdf_table(family, dim)[-1]
        # total is the mass of g(|z|) over the unit ball; rescale to radius sigma
        _NORM_CACHE[key] = 1.0 / (total * sigma**dim)
    return _NORM_CACHE[key]


_TABLE_CACHE: dict = {}


def _cdf_table(family: str, dim: int) -> np.ndarray:
    """Cumulative unnormalized radial mass of g(|z|) on a uniform grid of [0, 1]."""
    key = (family, dim)
    if key not in _TABLE_CACHE:
        x, w = np.polynomial.legendre.leggauss(_CDF_NODES)
        edges = np.linspace(0.0, 1.0, _CDF_CELLS + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        u = mid[:, None] + half[:, None] * x[None, :]
        integrand = _SPHERE_AREA[dim] * u ** (dim - 1) * _profile_np(family, u)
        cells = half * (integrand @ w)
        _TABLE_CACHE[key] = np.concatenate([[0.0], np.cumsum(cells)])
    return _TABLE_CACHE[key]


def _max_bump_slope() -> float:
    res = optimize.minimize_scalar(
        lambda u: _profile_slope_np("bump", u).item(),
        bounds=(0.0, 1.0 - 1e-12),
        method="bounded",
        options={"xatol": 1e-13},
    )
    return -float(res.fun)


def evaluate_phi(spec: MollifierSpec, z) -> np.ndarray | float:
    """Value of the normalized mollifier at point(s) ``z``.

    ``z`` has trailing axis of length ``spec.dim`` (a bare scalar or 1D
    array of scalars is accepted when ``dim == 1``).
    """
    z = np.asarray(z, dtype=float)
    if spec.dim == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        norm = np.abs(z)
    else:
        if z.shape[-1] != spec.dim:
            raise ValueError(f"expected points of dimension {spec.dim}, got shape {z.shape}")
        norm = np.linalg.norm(z, axis=-1)
    out = spec.normalization * _profile_np(spec.family, norm / spec.sigma)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# compiled scalar core
#
# kernel parameters travel as a tuple
#   (family_code, sigma, dim, density_const, cell_width, cum, cx, cw, u, 1 - u, tail, w)
# where density_const * rho^(d-1) * g(rho/sigma) is the radial mass density,
# cum / tail hold the normalized mass below / above each table node and
# (u, w) is the cosine-substituted Gauss rule on [0, 1] used for K.


@njit(cache=True, inline="always")
def _g(fam, u):
    if u >= 1.0:
        return 0.0
    if fam == 0:
        return math.exp(-1.0 / (1.0 - u * u))
    elif fam == 1:
        return 0.5 * (1.0 + math.cos(math.pi * u))
    w = 1.0 - u * u
    return w * w


@njit(cache=True, inline="always")
def _density(kp, rho):
    sigma = kp[1]
    dim = kp[2]
    val = kp[3] * _g(kp[0], rho / sigma)
    if dim == 2:
        val *= rho
    elif dim == 3:
        val *= rho * rho
    return val


@njit(cache=True, inline="always")
def _cell_integral(kp, a, b):
    # Gauss-Legendre over [a, b] inside one table cell
    cx = kp[6]
    cw = kp[7]
    half = 0.5 * (b - a)
    mid = a + half
    acc = 0.0
    for n in range(cx.shape[0]):
        acc += cw[n] * _density(kp, mid + half * cx[n])
    return half * acc


@njit(cache=True, inline="always")
def _cdf(kp, rho):
    """Radial CDF P(rho): mass within distance rho of the center."""
    sigma = kp[1]
    if rho <= 0.0:
        return 0.0
    if rho >= sigma:
        return 1.0
    h = kp[4]
    cum = kp[5]
    k = min(int(rho / h), cum.shape[0] - 2)
    val = cum[k] + _cell_integral(kp, k * h, rho)
    return min(val, 1.0)


@njit(cache=True, inline="always")
def _ccdf(kp, rho):
    """Tail mass 1 - P(rho), accurate to relative precision near sigma."""
    sigma = kp[1]
    if rho <= 0.0:
        return 1.0
    if rho >= sigma:
        return 0.0
    h = kp[4]
    tail = kp[10]
    k = min(int(rho / h), tail.shape[0] - 2)
    upper = sigma if k == tail.shape[0] - 2 else (k + 1) * h
    val = tail[k + 1] + _cell_integral(kp, rho, upper)
    return min(val, 1.0)


@njit(cache=True, inline="always")
def _ball_mass_eval(kp, s, r):
    """(K, 1 - K, dK/dr), the first two with full relative precision."""
    sigma = kp[1]
    dim = kp[2]
    if r <= 0.0:
        return 0.0, 1.0, 0.0
    if s < 0.0:
        s = -s
    if s + sigma <= r:
        return 1.0, 0.0, 0.0
    if r + sigma <= s:
        return 0.0, 1.0, 0.0
    if dim == 1:
        # F1(t) = 1/2 + sign(t) P(|t|) / 2, written with tails to avoid cancellation
        t = r - s
        tail_plus = 0.5 * _ccdf(kp, r + s)
        if t >= 0.0:
            tail_minus = 0.5 * _ccdf(kp, t)
            inside = 1.0 - tail_minus - tail_plus
            outside = tail_minus + tail_plus
        else:
            left = 0.5 * _ccdf(kp, -t)
            inside = left - tail_plus
            outside = 1.0 - left + tail_plus
        slope = 0.5 * (_density(kp, abs(t)) + _density(kp, r + s))
    else:
        if s <= 1e-12 * (sigma + r):
            return _cdf(kp, r), _ccdf(kp, r), _density(kp, r)
        a = abs(r - s)
        b = min(r + s, sigma)
        if r > s:
            inside = _cdf(kp, a)
            outside = _ccdf(kp, b)
        else:
            inside = 0.0
            outside = _cdf(kp, a) + _ccdf(kp, b)
        slope = 0.0
        if b > a:
            # rho = a + (b - a) u on cosine-spaced nodes; the vanishing
            # factors of the cap geometry are formed without cancellation
            bu = kp[8]
            bv = kp[9]
            bw = kp[11]
            width = b - a
            top = r + s >= sigma
            acc_in = 0.0
            acc_out = 0.0
            acc_d = 0.0
            for n in range(bu.shape[0]):
                dl = width * bu[n]
                rho = a + dl
                p = bw[n] * width * _density(kp, rho)
                near = dl
                far = rho + a
                if r > s:
                    fa, fb = far, near  # fa = r - s + rho, fb = s + rho - r
                else:
                    fa, fb = near, far
                fc = (r + s - rho) if top else width * bv[n]  # r + s - rho
                fd = r + s + rho
                if dim == 2:
                    q = fa * fb * fc * fd
                    root = math.sqrt(q) if q > 0.0 else 0.0
                    num = s * s + rho * rho - r * r
                    if num >= 0.0:
                        f_in = math.atan2(root, num) / math.pi
                        f_out = 1.0 - f_in
                    else:
                        f_out = math.atan2(root, -num) / math.pi
                        f_in = 1.0 - f_out
                    if root > 0.0:
                        acc_d += p * 2.0 * r / (math.pi * root)
                else:
                    den = 1.0 / (4.0 * s * rho)
                    f_in = fa * fc * den
                    f_out = fb * fd * den
                    acc_d += p * 2.0 * r * den
                acc_in += p * f_in
                acc_out += p * f_out
            inside += acc_in
            outside += acc_out
            slope = acc_d
    inside = min(max(inside, 0.0), 1.0)
    outside = min(max(outside, 0.0), 1.0)
    return inside, outside, slope


@njit(cache=True, inline="always")
def _ball_mass_pair(kp, s, r):
    """(K, 1 - K) with each entry carrying full relative precision."""
    res = _ball_mass_eval(kp, s, r)
    return res[0], res[1]


@njit(cache=True, inline="always")
def _ball_mass_scalar(kp, s, r):
    return _ball_mass_pair(kp, s, r)[0]


@njit(cache=True)
def _ball_mass_array(kp, s, r):
    out = np.empty(s.shape[0])
    for i in range(s.shape[0]):
        out[i] = _ball_mass_scalar(kp, s[i], r[i])
    return out


@njit(cache=True)
def _cdf_array(kp, rho):
    out = np.empty(rho.shape[0])
    for i in range(rho.shape[0]):
        out[i] = _cdf(kp, rho[i])
    return out


class BallMassKernel:
    """Tabulated radial CDF plus quadrature rule for ``K(s, r)``.

    Immutable after construction.  For ``dim >= 2`` the number of radial
    quadrature nodes is doubled until two successive rules agree to
    ``quadrature_tol / 10`` on a probe grid covering the partial-overlap
    region.
    """

    def __init__(self, spec: MollifierSpec, quadrature_tol: float = 1e-9, nodes: int | None = None):
        if not quadrature_tol > 0:
            raise ValueError("quadrature_tol must be positive")
        self._spec = spec
        self._tol = float(quadrature_tol)
        table = _cdf_table(spec.family, spec.dim)
        total = table[-1]
        cum = table / total
        cum[-1] = 1.0
        cells = np.diff(table) / total
        tail = np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])
        self._tail = tail
        cx, cw = np.polynomial.legendre.leggauss(_CDF_NODES)
        density_const = _SPHERE_AREA[spec.dim] / (total * spec.sigma**spec.dim)
        self._base = (
            _FAMILY_CODE[spec.family],
            float(spec.sigma),
            int(spec.dim),
            float(density_const),
            spec.sigma / _CDF_CELLS,
            cum,
            cx,
            cw,
        )
        if nodes is None:
            nodes = 1 if spec.dim == 1 else self._select_nodes()
        self._nodes = nodes
        self._kp = self._with_nodes(nodes)

    def _with_nodes(self, n):
        x, w = np.polynomial.legendre.leggauss(n)
        theta = 0.25 * np.pi * (1.0 + x)
        # u = (1 - cos 2theta) / 2 = sin^2 theta, 1 - u = cos^2 theta, weights carry d rho
        u = np.sin(theta) ** 2
        v = np.cos(theta) ** 2
        weight = w * np.sin(2.0 * theta) * 0.25 * np.pi
        return self._base + (u, v, self._tail, weight)

    def _select_nodes(self) -> int:
        sig = self._spec.sigma
        ss, rr = np.meshgrid(np.linspace(0.01, 3.0, 23) * sig, np.linspace(0.01, 3.0, 19) * sig)
        ss, rr = ss.ravel(), rr.ravel()
        n = 16
        prev = _ball_mass_array(self._with_nodes(n), ss, rr)
        while n < 1024:
            cur = _ball_mass_array(self._with_nodes(2 * n), ss, rr)
            if np.max(np.abs(cur - prev)) < self._tol / 10:
                return n
            n *= 2
            prev = cur
        return n

    @property
    def spec(self) -> MollifierSpec:
        return self._spec

    @property
    def sigma(self) -> float:
        return self._spec.sigma

    @property
    def dim(self) -> int:
        return self._spec.dim

    @property
    def quadrature_tol(self) -> float:
        return self._tol

    @property
    def nodes(self) -> int:
        return self._nodes

    @property
    def params(self):
        """Parameter tuple consumed by the compiled routines."""
        return self._kp

    def __call__(self, s, r):
        return ball_mass(self, s, r)

    def __repr__(self):
        return f"BallMassKernel({self._spec!r}, quadrature_tol={self._tol:g}, nodes={self._nodes})"


def ball_mass(kernel: BallMassKernel, s, r):
    """K(s, r) for scalar or broadcastable array arguments."""
    s_arr, r_arr = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(r, dtype=float))
    out = _ball_mass_array(kernel.params, np.ascontiguousarray(s_arr).ravel(), np.ascontiguousarray(r_arr).ravel())
    out = out.reshape(s_arr.shape)
    return float(out) if out.ndim == 0 else out


def radial_cdf(kernel: BallMassKernel, rho):
    """Mass of phi inside the centered ball of radius ``rho``; equals K(0, rho)."""
    rho_arr = np.asarray(rho, dtype=float)
    out = _cdf_array(kernel.params, np.ascontiguousarray(rho_arr).ravel()).reshape(rho_arr.shape)
    return float(out) if out.ndim == 0 else out
