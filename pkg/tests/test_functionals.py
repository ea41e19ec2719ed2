import math

import numpy as np
import pytest

from nilheat import functionals as FN
from nilheat.calculus import c_operator, integral_of_product
from nilheat.discretization.fields import integrate
from nilheat.discretization.initial import InitialDataSpec, make_initial_density
from nilheat.errors import InsufficientSamples, NotPositive, UTermAtN1
from nilheat.geometry import GeometricTensors, build_model
from nilheat.heat import FlowState, PotentialTriple, run_flow


def _pt(N, seed=3, band=1):
    model = build_model("CR", 1, (N, N, N))
    return model, PotentialTriple(model, make_initial_density(InitialDataSpec(band_limit=band,
                                                                              seed=seed), model))


def test_entropy_and_energy_of_constant(cr16):
    u = np.full(cr16.grid.shape, 2.0)
    assert FN.entropy(cr16, u) == pytest.approx(2.0 * math.log(2.0), rel=1e-14)
    assert FN.energy(cr16, PotentialTriple(cr16, u)) == 0.0
    with pytest.raises(NotPositive):
        FN.entropy(cr16, -u)


def test_energy_is_weighted_fisher_information(cr16, density16):
    pt = PotentialTriple(cr16, density16)
    e = FN.energy(cr16, pt)
    # int w u = int (2 Delta f - |grad f|^2) u equals E in the continuum
    alt = integral_of_product(cr16, pt.w, pt.u)
    assert e > 0
    assert abs(alt - e) < 1e-2 * e


@pytest.mark.parametrize("fn", ["paneitz", "rf"])
def test_static_identities_converge(fn):
    reps = []
    for N in (16, 32):
        model, pt = _pt(N)
        if fn == "paneitz":
            reps.append(FN.paneitz_identity_residual(model, pt))
        else:
            reps.append(FN.rf_integral_gap(model, pt))
    if fn == "paneitz":
        order = math.log2(reps[0].rel / reps[1].rel)
        assert 3.3 <= order <= 4.7
    else:
        for i in range(2):
            order = math.log2(reps[0][i].rel / reps[1][i].rel)
            assert 3.5 <= order <= 4.7


def test_energy_formulas_agree_statically():
    """Both expressions for E' are identities at a fixed time; their gap shrinks at order p."""
    gaps = []
    for N in (16, 32):
        model, pt = _pt(N)
        terms = FN.energy_terms(model, pt)
        e1 = FN.energy_prime_from_terms(model, terms)
        e2 = -2.0 * terms["lap_sq"] + 3.0 * terms["grad_lap"] - terms["quartic"]
        gaps.append(abs(e1 - e2) / abs(e2))
    assert gaps[1] < gaps[0] / 10


def test_paneitz_pairing_matches_c_operator(cr16, density16):
    F = np.sqrt(density16)
    direct = integrate(cr16, F * c_operator(cr16, F))
    assert FN.paneitz_pairing(cr16, F) == pytest.approx(direct, rel=1e-12)


def test_u_term_rejected_for_seven_dim(qc8):
    u = np.ones(qc8.grid.shape)
    t = GeometricTensors(S=0.0, T0=np.zeros((4, 4)), U=np.zeros((4, 4)))
    with pytest.raises(UTermAtN1):
        FN.energy_terms(qc8, PotentialTriple(qc8, u), t)


# ---------------------------------------------------------------------------
# traces and flow checks


def test_trace_csv_layout(cr16, density16, tmp_path):
    trace = run_flow(cr16, density16, 6e-4, sample_every=2, observers=[FN.identity_observer()])
    text = trace.to_csv(tmp_path / "t.csv")
    lines = text.splitlines()
    assert lines[0] == ",".join(FN.CSV_COLUMNS)
    assert len(lines) == len(trace.samples) + 1
    assert (tmp_path / "t.csv").read_text() == text
    again = run_flow(cr16, density16, 6e-4, sample_every=2, observers=[FN.identity_observer()])
    assert again.to_csv() == text


def test_trace_rejects_non_increasing_times(cr16, density16):
    trace = FN.FlowTrace()
    trace.record(cr16, FlowState(0.0, density16), [])
    with pytest.raises(ValueError):
        trace.record(cr16, FlowState(0.0, density16), [])


def test_flow_checks_need_three_samples(cr16, density16):
    trace = run_flow(cr16, density16, 2e-4, sample_every=100)
    with pytest.raises(InsufficientSamples):
        FN.flow_identity_checks(trace, cr16)


def test_flow_checks_on_constant_trace(cr16):
    u = np.full(cr16.grid.shape, 1.0)
    trace = run_flow(cr16, u, 1e-3, sample_every=2, observers=[FN.identity_observer()])
    reps = {r.name: r for r in FN.flow_identity_checks(trace, cr16)}
    assert reps["dN_dt"].abs == 0.0
    for name in ("monotone_N", "monotone_E"):
        assert reps[name].details["monotone"] and reps[name].details["hypothesis_holds"]


def test_flow_checks_without_pairing_do_not_claim_hypothesis(cr16, density16):
    trace = run_flow(cr16, density16, 6e-4, sample_every=2)
    reps = {r.name: r for r in FN.flow_identity_checks(trace, cr16)}
    assert "dE_dt" not in reps
    assert not reps["monotone_E"].details["hypothesis_holds"]


def test_identity_observer_selective(cr16, density16):
    obs = FN.identity_observer(when=lambda s: s.step_count == 2)
    trace = run_flow(cr16, density16, 6e-4, sample_every=2, observers=[obs])
    have = [s.E_rhs is not None for s in trace.samples]
    assert have == [False, True, False, False][:len(have)]


def test_entropy_identity_along_flow():
    model = build_model("CR", 1, (32, 32, 32))
    u0 = make_initial_density(InitialDataSpec(band_limit=1, seed=1), model)
    trace = run_flow(model, u0, 4e-4, sample_every=4, observers=[FN.identity_observer()])
    reps = {r.name: r for r in FN.flow_identity_checks(trace, model)}
    assert reps["dN_dt"].rel < 1e-3
    assert reps["dE_dt"].rel < 1e-2
    assert reps["monotone_N"].details["monotone"]
