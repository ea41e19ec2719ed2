"""Entropy, energy, the energy-derivative formulas and flow-level checks.

With ``f = -ln u = -2 ln F`` on a flat model, the derivative of
``E = int |grad f|^2 u`` along the heat flow is predicted by

    CR:  (n+1)/(2n) E' = -int [|hess_0|^2 + (2n+1)/2 L + |grad f|^4/(8n)] u - (6/n) int F CF
    qc:  (2n+1)/(4n) E' = -int [|hess_0|^2 + (2n+1)/2 L + |grad f|^4/(16n)] u + (3/n) int P_F(grad F)

where ``hess_0`` is the traceless part of the horizontal Hessian.  In the
discrete setting ``int F CF = -int P_F(grad F)`` holds to rounding because the
frame operators are exactly antisymmetric, so the pairing is evaluated
through the cheaper streamed P-function.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from nilheat.calculus import (DerivativeBundle, ResidualReport, hessian_sq, integral_of_product,
                              make_report, p_function, r_function)
from nilheat.discretization.fields import integrate
from nilheat.errors import InsufficientSamples, NotPositive, UTermAtN1
from nilheat.geometry import GeometricTensors, ModelKind, bilinear, lichnerowicz
from nilheat.heat import FlowState, PotentialTriple

MONOTONE_MARGIN = 1e-10


def _positive(u):
    if not np.all(np.isfinite(u)) or float(np.min(u)) <= 0.0:
        raise NotPositive("u must be strictly positive")


def entropy(model, u: np.ndarray) -> float:
    """``N = int u ln u``."""
    _positive(u)
    return integrate(model, u * np.log(u))


def energy(model, pt: PotentialTriple) -> float:
    """``E = int |grad f|^2 u``."""
    db = DerivativeBundle(model, pt.f, order=1)
    return integral_of_product(model, db.grad_sq(), pt.u)


def _flat(tensors: GeometricTensors | None) -> bool:
    return tensors is None or tensors.flat


def _lichnerowicz_integral(model, db: DerivativeBundle, u, tensors) -> float:
    if _flat(tensors):
        return 0.0
    g = np.stack(db.grad)
    return integral_of_product(model, lichnerowicz(model.spec, tensors, g, model.structures), u)


def energy_terms(model, pt: PotentialTriple, tensors: GeometricTensors | None = None) -> dict:
    """The integrals entering the energy formulas at one instant.

    Keys: ``traceless`` (``int |hess_0|^2 u``), ``lichnerowicz``, ``quartic``
    (``int |grad f|^4 u``), ``lap_sq`` (``int (Delta f)^2 u``), ``grad_lap``
    (``int |grad f|^2 Delta f u``) and ``pf`` (``int P_F(grad F)``).
    """
    spec = model.spec
    if (tensors is not None and spec.kind is ModelKind.QC and spec.n == 1
            and tensors.U is not None):
        raise UTermAtN1("U vanishes on seven-dimensional qc manifolds; pass U=None")
    u = pt.u
    db = DerivativeBundle(model, pt.f)
    m = db.m
    db.grad
    hsq = hessian_sq(db)
    hess_int = integral_of_product(model, hsq, u)
    del hsq
    lap = db.lap
    lap_sq = integral_of_product(model, lap * lap, u)
    pair_sq = 0.0
    for s in range(db.k):
        q = db.pairing(s)
        pair_sq += integral_of_product(model, q * q, u)
        del q
    gsq = db.grad_sq()
    quartic = integral_of_product(model, gsq * gsq, u)
    work = gsq * lap
    grad_lap = integral_of_product(model, work, u)
    del work, gsq
    lich = _lichnerowicz_integral(model, db, u, tensors)
    del db
    dbF = DerivativeBundle(model, pt.F)
    pf = integrate(model, p_function(dbF, None if _flat(tensors) else tensors))
    del dbF
    return {
        "traceless": hess_int - (lap_sq + pair_sq) / m,
        "lichnerowicz": lich,
        "quartic": quartic,
        "lap_sq": lap_sq,
        "grad_lap": grad_lap,
        "pf": pf,
    }


def energy_prime_from_terms(model, terms: dict) -> float:
    n = model.spec.n
    if model.spec.kind is ModelKind.CR:
        inner = terms["traceless"] + (2 * n + 1) / 2 * terms["lichnerowicz"] + terms["quartic"] / (8 * n)
        # -(6/n) int F CF = (6/n) int P_F(grad F)
        return (2 * n / (n + 1)) * (-inner + (6.0 / n) * terms["pf"])
    inner = terms["traceless"] + (2 * n + 1) / 2 * terms["lichnerowicz"] + terms["quartic"] / (16 * n)
    return (4 * n / (2 * n + 1)) * (-inner + (3.0 / n) * terms["pf"])


def energy_prime_rhs(model, pt: PotentialTriple, tensors: GeometricTensors | None = None) -> float:
    """Predicted ``dE/dt`` from the energy formula of the model."""
    return energy_prime_from_terms(model, energy_terms(model, pt, tensors))


def paneitz_pairing(model, F: np.ndarray, tensors: GeometricTensors | None = None) -> float:
    """``int F CF``, evaluated as ``-int P_F(grad F)``."""
    dbF = DerivativeBundle(model, F)
    return -integrate(model, p_function(dbF, None if _flat(tensors) else tensors))


def paneitz_identity_residual(model, pt: PotentialTriple,
                              tensors: GeometricTensors | None = None) -> ResidualReport:
    """``int P_f(grad f) u`` against ``1/4 int |grad f|^4 u + 4 int P_F(grad F)``.

    The left side uses the P-function of ``f``, the right side that of ``F``.
    """
    tens = None if _flat(tensors) else tensors
    db = DerivativeBundle(model, pt.f)
    pfun = p_function(db, tens)
    lhs = integral_of_product(model, pfun, pt.u)
    del pfun
    gsq = db.grad_sq()
    quartic = integral_of_product(model, gsq * gsq, pt.u)
    del gsq, db
    dbF = DerivativeBundle(model, pt.F)
    pf = integrate(model, p_function(dbF, tens))
    del dbF
    rhs = 0.25 * quartic + 4.0 * pf
    scale = max(abs(lhs), abs(rhs), 0.25 * abs(quartic))
    return make_report("paneitz_identity", model, abs(lhs - rhs), scale, lhs=lhs, rhs=rhs)


def rf_integral_gap(model, pt: PotentialTriple, tensors: GeometricTensors | None = None
                    ) -> tuple[ResidualReport, ResidualReport]:
    """Two evaluations of ``int R_f(grad f) u`` compared with the direct one.

    ``rhs1`` goes through the P-function and one integration by parts,
    ``rhs2`` through the ``omega`` pairings of the Hessian.
    """
    spec = model.spec
    n, u = spec.n, pt.u
    tens = None if _flat(tensors) else tensors
    if tens is not None and spec.kind is ModelKind.QC and n == 1 and tens.U is not None:
        raise UTermAtN1("U vanishes on seven-dimensional qc manifolds; pass U=None")
    db = DerivativeBundle(model, pt.f)
    m = db.m
    db.grad
    direct = integral_of_product(model, r_function(db), u)
    pfun = p_function(db, tens)
    pf_u = integral_of_product(model, pfun, u)
    del pfun
    lap = db.lap
    lap_sq = integral_of_product(model, lap * lap, u)
    gsq = db.grad_sq()
    grad_lap = integral_of_product(model, gsq * lap, u)
    pair_sq = 0.0
    for s in range(db.k):
        q = db.pairing(s)
        pair_sq += integral_of_product(model, q * q, u)
        del q
    rhs1 = -pf_u / m - lap_sq / m + grad_lap / m
    rhs2 = -pair_sq / m
    if tens is not None:
        g = np.stack(db.grad)
        if spec.kind is ModelKind.QC:
            if tens.S is not None:
                rhs1 -= float(tens.S) * integral_of_product(model, gsq, u)
            if tens.U is not None:
                uu = integral_of_product(model, bilinear(tens.U, g, g), u)
                rhs1 += (n + 1) / (n - 1) * uu
                rhs2 += 3.0 * uu
            if tens.T0 is not None:
                rhs2 -= integral_of_product(model, bilinear(tens.T0, g, g), u)
        elif tens.A is not None:
            jg = np.stack(db.structure_grad(0))
            aj = integral_of_product(model, bilinear(tens.A, jg, g), u)
            rhs1 += aj
            rhs2 -= aj
    scale = max(abs(direct), abs(rhs1), abs(rhs2))
    r1 = make_report("rf_integral_u1", model, abs(direct - rhs1), scale, direct=direct, rhs=rhs1)
    r2 = make_report("rf_integral_u2", model, abs(direct - rhs2), scale, direct=direct, rhs=rhs2)
    return r1, r2


# ---------------------------------------------------------------------------
# traces


@dataclass
class FlowSample:
    t: float
    mass: float
    min_u: float
    N: float | None = None
    E: float | None = None
    E_rhs: float | None = None
    paneitz_pairing: float | None = None
    extras: dict = field(default_factory=dict)


CSV_COLUMNS = ("t", "N", "E", "E_rhs", "paneitz_pairing", "mass", "min_u")


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


@dataclass
class FlowTrace:
    model_label: str = ""
    grid: tuple = ()
    dt: float = 0.0
    sample_every: int = 1
    samples: list = field(default_factory=list)
    final_state: FlowState | None = None

    def record(self, model, state: FlowState, observers):
        u = state.u
        smp = FlowSample(t=float(state.t), mass=integrate(model, u), min_u=float(np.min(u)))
        if self.samples:
            if smp.t <= self.samples[-1].t:
                raise ValueError("sample times must increase")
        pt = PotentialTriple(model, u) if observers else None
        for obs in observers:
            for key, val in obs(model, state, pt).items():
                if key in ("N", "E", "E_rhs", "paneitz_pairing"):
                    setattr(smp, key, val)
                else:
                    smp.extras[key] = val
        self.samples.append(smp)
        return smp

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(s, name) is None else getattr(s, name)
                         for s in self.samples], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.column("t")

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for s in self.samples:
            w.writerow([_fmt(getattr(s, c)) for c in CSV_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def basic_observer(model, state, pt) -> dict:
    """Entropy and energy."""
    return {"N": entropy(model, pt.u), "E": energy(model, pt)}


def identity_observer(tensors: GeometricTensors | None = None, when=None):
    """Observer recording everything the flow identity checks need.

    ``when(state) -> bool`` restricts the expensive energy terms to selected
    samples; entropy and energy are always recorded.
    """

    def observe(model, state, pt) -> dict:
        out = {"N": entropy(model, pt.u), "E": energy(model, pt)}
        if when is not None and not when(state):
            return out
        terms = energy_terms(model, pt, tensors)
        out["E_rhs"] = energy_prime_from_terms(model, terms)
        out["paneitz_pairing"] = -terms["pf"]
        # right side of dE/dt = int (-2 (Delta f)^2 + 3 |grad f|^2 Delta f - |grad f|^4) u
        out["E_prime_formula2"] = -2.0 * terms["lap_sq"] + 3.0 * terms["grad_lap"] - terms["quartic"]
        return out

    return observe


def _central(values: np.ndarray, spacing: float) -> np.ndarray:
    return (values[2:] - values[:-2]) / (2.0 * spacing)


def _report(name, model, abs_val: float, rel: float, **details) -> ResidualReport:
    rep = make_report(name, model, abs_val, 1.0, **details)
    rep.rel = float(rel)
    return rep


def _rel_gap(gap: np.ndarray, ref: np.ndarray) -> tuple[float, float]:
    """Largest absolute gap and largest gap relative to ``|ref|`` (pointwise)."""
    absmax = float(np.max(np.abs(gap))) if gap.size else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(np.abs(gap) == 0.0, 0.0, np.abs(gap) / np.abs(ref))
    return absmax, float(np.max(rel)) if rel.size else 0.0


def flow_identity_checks(trace: FlowTrace, model, tensors: GeometricTensors | None = None
                         ) -> list[ResidualReport]:
    """Time-differenced identities and monotonicity along a sampled flow.

    Relative values are the largest pointwise ratios over interior samples.

    Returns reports ``dN_dt`` (``dN/dt + E``), ``dE_dt`` (against the
    predicted derivative), ``E_formula2``, ``monotone_N``, ``monotone_E`` and
    the diagnostic ``paneitz_sign``.  Central differences use the uniform
    sampling interval; at least three samples are required.
    """
    if len(trace.samples) < 3:
        raise InsufficientSamples("central differences need at least three samples")
    t = trace.times
    spacing = np.diff(t)
    dt = float(spacing[0])
    if not np.allclose(spacing, dt, rtol=1e-9, atol=0.0):
        raise InsufficientSamples("samples must be uniformly spaced in time")
    N = trace.column("N")
    E = trace.column("E")
    reports = []
    dN = _central(N, dt)
    gap_a = dN + E[1:-1]
    a_abs, a_rel = _rel_gap(gap_a, E[1:-1])
    reports.append(_report("dN_dt", model, a_abs, a_rel, spacing=dt))
    dE = _central(E, dt)
    # predicted derivatives are compared wherever an interior sample carries them
    E_rhs = trace.column("E_rhs")[1:-1]
    f2 = np.array([s.extras.get("E_prime_formula2", np.nan) for s in trace.samples])[1:-1]
    for name, pred in (("dE_dt", E_rhs), ("E_formula2", f2)):
        have = ~np.isnan(pred)
        if np.any(have):
            g_abs, g_rel = _rel_gap(dE[have] - pred[have], dE[have])
            reports.append(_report(name, model, g_abs, g_rel, samples=int(np.sum(have))))
    pairing = trace.column("paneitz_pairing")
    sign_scale = float(np.nanmax(np.abs(pairing))) if not np.all(np.isnan(pairing)) else 0.0
    sign_min = float(np.nanmin(pairing)) if not np.all(np.isnan(pairing)) else float("nan")
    # an unrecorded pairing never counts as satisfying the hypothesis
    hypothesis = bool(not np.isnan(sign_min) and sign_min >= -MONOTONE_MARGIN * sign_scale)
    for name, vals in (("monotone_N", N), ("monotone_E", E)):
        incr = float(np.max(np.diff(vals)))
        scale = abs(float(vals[0]))
        rep = make_report(name, model, max(incr, 0.0), scale, max_increase=incr,
                          margin=MONOTONE_MARGIN * scale, hypothesis_holds=hypothesis,
                          monotone=bool(incr <= MONOTONE_MARGIN * scale))
        reports.append(rep)
    negative_part = 0.0 if np.isnan(sign_min) else abs(min(sign_min, 0.0))
    reports.append(make_report("paneitz_sign", model, negative_part, sign_scale,
                               min_pairing=sign_min, nonnegative=hypothesis, diagnostic=True))
    return reports
