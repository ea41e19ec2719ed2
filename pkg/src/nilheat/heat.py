"""Explicit time integration of ``u_t = Delta u`` on the quotient grid.

The discrete sub-Laplacian is a sum of squares of exactly antisymmetric
operators, so it is symmetric negative semidefinite.  Classical RK4 is stable
for ``dt * |lambda| <= 2.785`` on the negative real axis; the automatic step
uses a fraction ``safety`` of the computed spectral bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable

import numpy as np

from nilheat.discretization.fields import add_product, add_scaled, frame_operators, integrate
from nilheat.errors import NotPositive, PositivityLost, StabilityViolated

# extent of the RK4 stability region along the negative real axis
RK4_REAL_EXTENT = 2.785
DEFAULT_SAFETY = 0.25


@dataclass(frozen=True)
class FlowState:
    t: float
    u: np.ndarray
    step_count: int = 0
    dt: float = 0.0


class PotentialTriple:
    """``u`` together with ``f = -ln u``, ``F = sqrt(u)`` and ``w = 2 Delta f - |grad f|^2``.

    ``F`` and ``w`` are evaluated on first access.
    """

    def __init__(self, model, u: np.ndarray):
        u = np.ascontiguousarray(u, dtype=float)
        if not np.all(np.isfinite(u)) or float(np.min(u)) <= 0.0:
            raise NotPositive("u must be finite and strictly positive")
        self.model = model
        self.u = u
        self.f = -np.log(u)
        self._F = None
        self._w = None

    @property
    def F(self) -> np.ndarray:
        if self._F is None:
            self._F = np.sqrt(self.u)
        return self._F

    @property
    def w(self) -> np.ndarray:
        if self._w is None:
            ops = frame_operators(self.model)
            w = ops.sub_laplacian(self.f)
            w *= 2.0
            for g in ops.derivatives(self.f, range(self.model.spec.m)):
                add_product(w, -1.0, g, g)
            self._w = w
        return self._w

    def consistency_gap(self) -> float:
        """Largest relative deviation of ``F^2`` and ``e^{-f}`` from ``u``."""
        g1 = np.max(np.abs(self.F * self.F - self.u) / self.u)
        g2 = np.max(np.abs(np.exp(-self.f) - self.u) / self.u)
        return float(max(g1, g2))


def spectral_bound(model) -> float:
    return frame_operators(model).spectral_bound()


def stability_limit(model) -> float:
    """Largest admissible RK4 step."""
    return RK4_REAL_EXTENT / spectral_bound(model)


def default_dt(model, safety: float = DEFAULT_SAFETY) -> float:
    if not 0.0 < safety <= RK4_REAL_EXTENT:
        raise ValueError("safety factor must lie in (0, 2.785]")
    return safety / spectral_bound(model)


def mass(model, u: np.ndarray) -> float:
    return integrate(model, u)


def step(model, state: FlowState, dt: float) -> FlowState:
    """One classical RK4 step of the heat equation."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    limit = stability_limit(model)
    if dt > limit * (1.0 + 1e-12):
        raise StabilityViolated(f"dt = {dt:.3e} exceeds the RK4 limit {limit:.3e}")
    ops = frame_operators(model)
    u = state.u
    k = ops.sub_laplacian(u)
    acc = k.copy()
    stage = np.empty_like(u)
    for c_stage, c_acc in ((0.5, 2.0), (0.5, 2.0), (1.0, 1.0)):
        np.copyto(stage, u)
        add_scaled(stage, c_stage * dt, k)
        k = ops.sub_laplacian(stage)
        add_scaled(acc, c_acc, k)
    del k, stage
    new = u.copy()
    add_scaled(new, dt / 6.0, acc)
    if not np.all(np.isfinite(new)) or float(np.min(new)) <= 0.0:
        raise PositivityLost(
            f"u lost positivity at t = {state.t + dt:.6g}; use a smaller dt or smoother data")
    return FlowState(t=state.t + dt, u=new, step_count=state.step_count + 1, dt=dt)


Observer = Callable[..., dict]


def run_flow(model, u0: np.ndarray, t_final: float, sample_every: int = 10,
             observers: Iterable[Observer] | None = None, dt: float | None = None,
             safety: float = DEFAULT_SAFETY, t0: float = 0.0):
    """Advance ``u0`` to ``t_final`` and sample the trace every ``sample_every`` steps.

    The step is ``safety / Lambda`` shrunk so that ``t_final`` is a whole
    number of sampling intervals; samples are therefore uniform in time.
    Each observer is called as ``obs(model, state, pt)`` and returns a dict of
    values stored with the sample.
    """
    from nilheat.functionals import FlowTrace, basic_observer

    if t_final < 0:
        raise ValueError("t_final must be nonnegative")
    if sample_every < 1:
        raise ValueError("sample_every must be at least 1")
    observers = list(observers) if observers is not None else [basic_observer]
    u0 = np.ascontiguousarray(u0, dtype=float)
    if not np.all(np.isfinite(u0)) or float(np.min(u0)) <= 0.0:
        raise NotPositive("initial density must be strictly positive")
    base = dt if dt is not None else default_dt(model, safety)
    n_samples = math.ceil(t_final / (base * sample_every) - 1e-12) if t_final > 0 else 0
    n_steps = n_samples * sample_every
    dt = t_final / n_steps if n_steps else base
    trace = FlowTrace(model_label=model.spec.label, grid=tuple(model.grid.sizes), dt=dt,
                      sample_every=sample_every)
    state = FlowState(t=t0, u=u0, step_count=0, dt=dt)
    trace.record(model, state, observers)
    for j in range(1, n_steps + 1):
        state = step(model, state, dt)
        # avoid drift of the clock from repeated addition
        state = replace(state, t=t0 + j * dt)
        if j % sample_every == 0:
            trace.record(model, state, observers)
    trace.final_state = state
    return trace
