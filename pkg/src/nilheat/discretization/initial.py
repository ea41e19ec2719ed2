"""Lattice-invariant test functions and positive initial densities.

Two families of smooth functions descend to the quotient:

* torus modes ``cos/sin(2 pi k.q)``, independent of the vertical variables;
* twisted modes, obtained by periodising a lowest-Landau-level Gaussian
  ``h(q, tau) = exp(2 pi i nu tau_s) exp(-pi nu |q|^2)`` over the lattice.
  Every left translate of ``h`` is an eigenfunction of the sub-Laplacian with
  eigenvalue ``-2 pi nu m``, hence so is the periodisation.  The sum over the
  lattice factorises into one-dimensional theta series.

Both families are evaluated in closed form, so they double as exact oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from nilheat.errors import NotPositive, NotWrapConsistent

_THETA_TERMS = 8


class InitialShape(str, Enum):
    CONSTANT = "constant"
    PLANAR_MODES = "planar_modes"
    PERIODIZED_BUMP = "periodized_bump"


@dataclass(frozen=True)
class InitialDataSpec:
    shape: InitialShape = InitialShape.PLANAR_MODES
    amplitude: float = 0.5
    band_limit: int = 2
    seed: int = 0
    bump_radius: float = 0.15
    truncation_radius: int = 3
    floor: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "shape", InitialShape(self.shape))


# ---------------------------------------------------------------------------
# closed-form lattice-invariant functions


def torus_mode(grid, kvec, phase: float = 0.0) -> np.ndarray:
    """``cos(2 pi k.q + phase)`` on the grid (vertical-independent)."""
    arg = np.zeros([grid.sizes[j] if j < grid.m else 1 for j in range(grid.ndim)])
    for b, kb in enumerate(kvec):
        if kb:
            arg = arg + 2 * np.pi * kb * grid.coords(b)
    return np.broadcast_to(np.cos(arg + phase), grid.shape).copy()


def _theta_factor(nu: int, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``sum_j exp(-pi nu (x+j)^2) exp(2 pi i nu j w)``, truncated."""
    j0 = np.rint(-x)
    out = np.zeros(np.broadcast_shapes(x.shape, w.shape), dtype=complex)
    for d in range(-_THETA_TERMS, _THETA_TERMS + 1):
        j = j0 + d
        out = out + np.exp(-np.pi * nu * (x + j) ** 2 + 2j * np.pi * nu * j * w)
    return out


def twisted_mode(grid, structures, s: int, nu: int, q0, tau0: float = 0.0,
                 phase: float = 0.0) -> np.ndarray:
    """Real part of ``e^{i phase}`` times the periodised Landau Gaussian.

    ``s`` is the 0-based vertical direction and ``nu >= 1`` its frequency.
    The result satisfies ``Delta f = -2 pi nu m f`` for the continuous
    sub-Laplacian.
    """
    if nu < 1:
        raise ValueError("twisted modes need a positive frequency")
    m = grid.m
    M = np.asarray(structures.matrices[s], dtype=float)
    q0 = np.asarray(q0, dtype=float)
    xs = [grid.coords(b) for b in range(m)]
    tau = grid.coords(m + s)
    # q0^T M q and w = M (q - q0), both affine in q
    lin = sum(float(q0 @ M[:, b]) * xs[b] for b in range(m) if np.any(M[:, b]))
    expo = 2j * np.pi * nu * (tau + tau0 + lin) + 1j * phase
    val = np.exp(expo)
    for b in range(m):
        w = sum(M[b, c] * (xs[c] - q0[c]) for c in range(m) if M[b, c] != 0)
        val = val * _theta_factor(nu, xs[b] + q0[b], np.asarray(w))
    return np.broadcast_to(val.real, grid.shape).copy()


def twisted_sup_bound(nu: int, m: int) -> float:
    """Upper bound for ``|twisted_mode|`` over the whole manifold."""
    j = np.arange(-_THETA_TERMS, _THETA_TERMS + 1)
    return float(np.sum(np.exp(-np.pi * nu * j ** 2))) ** m


# ---------------------------------------------------------------------------
# wrap consistency


def wrap_consistency_residual(grid, func) -> float:
    """Max gap between ``func`` on the domain and on its lattice image.

    ``func(q, tau)`` takes coordinate arrays of any (common) shape.  For each
    horizontal axis ``a`` the identity ``f(q + e_a, tau) = f(q, tau - B(e_a, q))``
    is tested at the grid points.
    """
    pts = [np.broadcast_to(c, grid.shape).ravel() for c in grid.mesh(sparse=True)]
    q = np.stack(pts[:grid.m])
    tau = np.stack(pts[grid.m:])
    base = func(q, tau)
    scale = max(float(np.max(np.abs(base))), 1e-300)
    worst = 0.0
    for a in range(grid.m):
        q2 = q.copy()
        q2[a] += 1.0
        tau2 = tau.copy()
        for s in range(grid.k):
            # B_s(e_a, q) = sum_b M_s[a, b] q_b
            tau2[s] -= grid.shear[s, a] @ q
        worst = max(worst, float(np.max(np.abs(func(q2, tau) - func(q, tau2)))))
    return worst / scale


# ---------------------------------------------------------------------------
# positive densities


def _bump_function(grid, spec: InitialDataSpec, q0: np.ndarray):
    """Lattice sum of a Gaussian in ``q`` times periodised Gaussians in ``tau``."""
    m, k = grid.m, grid.k
    sig = spec.bump_radius
    R = spec.truncation_radius
    shear = np.asarray(grid.shear, dtype=float)
    offsets = np.array(np.meshgrid(*[np.arange(-R, R + 1)] * m, indexing="ij")).reshape(m, -1).T
    tails = np.arange(-3, 4)

    def theta(t):
        t = t - np.rint(t)
        return sum(np.exp(-((t + j) ** 2) / (2 * sig ** 2)) for j in tails)

    def func(q, tau):
        q = np.asarray(q, dtype=float)
        tau = np.asarray(tau, dtype=float)
        out = np.full(q.shape[1:], spec.floor)
        for a in offsets:
            qa = q + a.reshape((m,) + (1,) * (q.ndim - 1)) - q0.reshape((m,) + (1,) * (q.ndim - 1))
            r2 = np.sum(qa ** 2, axis=0)
            if np.min(r2) > (12 * sig) ** 2:
                continue
            term = np.exp(-r2 / (2 * sig ** 2))
            for s in range(k):
                # group product (a, 0).(q, tau) shifts tau_s by B_s(a, q)
                shift = np.tensordot(a @ shear[s], q, axes=(0, 0))
                term = term * theta(tau[s] + shift)
            out = out + spec.amplitude * term
        return out

    return func


def planar_potential(grid, structures, band_limit: int, rng: np.random.Generator) -> np.ndarray:
    """Random smooth lattice-invariant potential with ``max |psi| <= 1``.

    Mixes torus modes up to ``band_limit`` with twisted modes of frequency up
    to ``band_limit`` so vertical derivatives are exercised.  The coefficient
    normalisation uses analytic sup bounds, so the continuum function does not
    depend on the grid.
    """
    m, k = grid.m, grid.k
    terms = []
    coefs = []
    for kvec in np.ndindex(*([2 * band_limit + 1] * m)):
        kv = np.array(kvec) - band_limit
        if not kv.any():
            continue
        # keep one representative of +-k
        first = kv[np.nonzero(kv)[0][0]]
        if first < 0:
            continue
        weight = 1.0 / (1.0 + float(kv @ kv))
        terms.append(("torus", kv, rng.uniform(0, 2 * np.pi)))
        coefs.append(weight * rng.standard_normal())
    for s in range(k):
        for nu in range(1, band_limit + 1):
            q0 = rng.uniform(-0.5, 0.5, size=m)
            tau0 = rng.uniform(0.0, 1.0)
            ph = rng.uniform(0, 2 * np.pi)
            terms.append(("twisted", (s, nu, q0, tau0), ph))
            coefs.append(rng.standard_normal() / (1.0 + 2.0 * nu))
    coefs = np.asarray(coefs)
    bounds = np.array([1.0 if t[0] == "torus" else twisted_sup_bound(t[1][1], m) for t in terms])
    norm = float(np.sum(np.abs(coefs) * bounds))
    psi = np.zeros(grid.shape)
    for c, (kind, data, ph) in zip(coefs, terms):
        if kind == "torus":
            psi += (c / norm) * torus_mode(grid, data, ph)
        else:
            s, nu, q0, tau0 = data
            psi += (c / norm) * twisted_mode(grid, structures, s, nu, q0, tau0, ph)
    return psi


def make_initial_density(spec: InitialDataSpec, model) -> np.ndarray:
    """Strictly positive lattice-invariant density on the model grid."""
    grid = model.grid
    rng = np.random.default_rng(spec.seed)
    if spec.shape is InitialShape.CONSTANT:
        u = np.full(grid.shape, float(spec.amplitude))
    elif spec.shape is InitialShape.PLANAR_MODES:
        psi = planar_potential(grid, model.structures, spec.band_limit, rng)
        u = np.exp(spec.amplitude * psi)
    else:
        q0 = rng.uniform(-0.5, 0.5, size=grid.m)
        func = _bump_function(grid, spec, q0)
        gap = wrap_consistency_residual(grid, func)
        if gap > 1e-12:
            raise NotWrapConsistent(
                f"periodised bump is not lattice invariant (relative gap {gap:.3e}); "
                "increase the truncation radius")
        pts = [np.broadcast_to(c, grid.shape) for c in grid.mesh(sparse=True)]
        u = func(np.stack(pts[:grid.m]), np.stack(pts[grid.m:]))
    if not np.all(np.isfinite(u)) or float(np.min(u)) <= 0.0:
        raise NotPositive("initial density is not strictly positive; reduce the amplitude")
    return u
