"""Reference computations that share no code with the package internals."""

from __future__ import annotations

import itertools
import math

import numpy as np
from numba import njit
from scipy.integrate import quad

SPHERE = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}
BALL = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}
FAMILY_CODE = {"bump": 0, "cosine": 1, "quartic": 2}


def profile(family, u):
    """Unnormalized radial profile on [0, 1)."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    m = u < 1
    if family == "bump":
        out[m] = np.exp(-1.0 / (1.0 - u[m] ** 2))
    elif family == "cosine":
        out[m] = 0.5 * (1.0 + np.cos(np.pi * u[m]))
    else:
        out[m] = (1.0 - u[m] ** 2) ** 2
    return out


def norm_const(family, sigma, dim):
    """c with int c g(|z|/sigma) dz = 1, by adaptive quadrature in the radius."""
    mass, _ = quad(lambda u: float(profile(family, np.array(u))) * u ** (dim - 1), 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    return 1.0 / (SPHERE[dim] * mass * sigma**dim)


def phi(family, sigma, dim, z):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    return norm_const(family, sigma, dim) * profile(family, np.linalg.norm(z, axis=-1) / sigma)


def radial_mass_1d(family, sigma, s, r):
    """K(s, r) in one dimension by adaptive quadrature of phi over [-r, r]."""
    c = norm_const(family, sigma, 1)
    lo, hi = max(-r, s - sigma), min(r, s + sigma)
    if hi <= lo:
        return 0.0
    val, _ = quad(lambda z: c * float(profile(family, np.array(abs(z - s) / sigma))), lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


@njit(cache=True)
def _g(code, u):
    if u >= 1.0:
        return 0.0
    if code == 0:
        return math.exp(-1.0 / (1.0 - u * u))
    if code == 1:
        return 0.5 * (1.0 + math.cos(math.pi * u))
    w = 1.0 - u * u
    return w * w


@njit(cache=True)
def _mc(code, c, sigma, dim, s, r, n, seed):
    # uniform samples in B(s e_1, sigma); estimate |B| E[phi(z - y) 1{|z| <= r}]
    np.random.seed(seed)
    acc = 0.0
    acc2 = 0.0
    z = np.empty(3)
    for _ in range(n):
        while True:
            nrm = 0.0
            for k in range(dim):
                z[k] = 2.0 * np.random.random() - 1.0
                nrm += z[k] * z[k]
            if nrm < 1.0:
                break
        val = c * _g(code, math.sqrt(nrm))
        x0 = s + sigma * z[0]
        rr = x0 * x0
        for k in range(1, dim):
            rr += (sigma * z[k]) ** 2
        if rr > r * r:
            val = 0.0
        acc += val
        acc2 += val * val
    mean = acc / n
    var = acc2 / n - mean * mean
    return mean, math.sqrt(max(var, 0.0) / n)


@njit(cache=True)
def _mc_many(code, c, sigma, dim, s, r, n, seed):
    # one sample stream scored against every (s_k, r_k) query
    np.random.seed(seed)
    m = s.shape[0]
    acc = np.zeros(m)
    acc2 = np.zeros(m)
    z = np.empty(3)
    for _ in range(n):
        while True:
            nrm = 0.0
            for k in range(dim):
                z[k] = 2.0 * np.random.random() - 1.0
                nrm += z[k] * z[k]
            if nrm < 1.0:
                break
        val = c * _g(code, math.sqrt(nrm))
        tail = 0.0
        for k in range(1, dim):
            tail += (sigma * z[k]) ** 2
        for j in range(m):
            x0 = s[j] + sigma * z[0]
            if x0 * x0 + tail <= r[j] * r[j]:
                acc[j] += val
                acc2[j] += val * val
    mean = acc / n
    var = acc2 / n - mean * mean
    return mean, np.sqrt(np.maximum(var, 0.0) / n)


def mc_ball_mass_many(family, sigma, dim, s, r, n=10**7, seed=0):
    """Vector version of :func:`mc_ball_mass` sharing one sample stream.

    Each estimate is an ordinary ``n``-sample estimate; estimates for
    different queries are correlated.
    """
    c = norm_const(family, sigma, dim)
    vol = BALL[dim] * sigma**dim
    s = np.ascontiguousarray(s, dtype=float)
    r = np.ascontiguousarray(r, dtype=float)
    mean, se = _mc_many(FAMILY_CODE[family], c, sigma, dim, s, r, int(n), int(seed))
    return vol * mean, vol * se


def mc_ball_mass(family, sigma, dim, s, r, n=10**7, seed=0):
    """Monte-Carlo estimate of K(s, r) and its standard error."""
    c = norm_const(family, sigma, dim)
    vol = BALL[dim] * sigma**dim
    mean, se = _mc(FAMILY_CODE[family], c, sigma, dim, float(s), float(r), int(n), int(seed))
    return vol * mean, vol * se


def brute_force_cost(a, b, p):
    """Minimum over all permutations of the mean |a_i - b_pi(i)|^p, and the argmin."""
    n = a.shape[0]
    sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    c = sq if p == 2 else np.sqrt(sq)
    best, arg = math.inf, None
    rows = np.arange(n)
    for perm in itertools.permutations(range(n)):
        val = c[rows, list(perm)].sum() / n
        if val < best:
            best, arg = val, perm
    return best, np.array(arg)


def grid_scan_radius(mass, r_max, n=10**6):
    """Smallest grid radius with mass(r) >= target, on a uniform grid of n points.

    ``mass`` maps an array of radii to (mass - target).
    """
    grid = np.linspace(0.0, r_max, n)
    vals = mass(grid)
    k = int(np.argmax(vals >= 0))
    return grid[k], grid[1] - grid[0]
