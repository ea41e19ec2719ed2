import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nilheat.discretization.fields import (field_inner, frame_derivative, frame_operators,
                                           integrate)
from nilheat.discretization.initial import (InitialDataSpec, InitialShape, _theta_factor,
                                            make_initial_density, planar_potential, torus_mode,
                                            twisted_mode, twisted_sup_bound,
                                            wrap_consistency_residual)
from nilheat.discretization.io import (load_checkpoint, read_field, save_checkpoint,
                                       write_csv_slice, write_field)
from nilheat.errors import IndexOutOfRange, NotPositive, ShapeMismatch
from nilheat.geometry import build_model
from nilheat.heat import FlowState


def _lattice_function(model, rng):
    return planar_potential(model.grid, model.structures, 2, rng)


@pytest.mark.parametrize("axis,direction", [(0, 1), (1, -1), (2, 1)])
def test_wrap_permutation_is_bijection(cr16, axis, direction):
    perm = cr16.grid.wrap_permutation(axis, direction)
    assert np.array_equal(np.sort(perm.ravel()), np.arange(cr16.grid.npoints))
    back = cr16.grid.wrap_permutation(axis, -direction)
    assert np.array_equal(back.ravel()[perm.ravel()], np.arange(cr16.grid.npoints))


def test_spectral_bound_values():
    # sum over horizontal axes of (2 * (2/3 + 1/12) / h)^2
    assert frame_operators(build_model("CR", 1, (32, 32, 32))).spectral_bound() == 4608.0
    assert frame_operators(build_model("QC", 1, (8,) * 7)).spectral_bound() == 576.0


def test_frame_derivative_index_check(cr16):
    with pytest.raises(IndexOutOfRange):
        frame_derivative(cr16, np.zeros(cr16.grid.shape), 3)


def test_frame_derivative_of_twisted_mode(cr16):
    """xi f = 2 pi nu i f for a twisted mode, so xi applied twice gives -(2 pi nu)^2 f."""
    f = twisted_mode(cr16.grid, cr16.structures, 0, 1, np.zeros(2), 0.0, 0.3)
    g = frame_derivative(cr16, frame_derivative(cr16, f, 2), 2)
    rel = np.max(np.abs(g + (2 * math.pi) ** 2 * f)) / ((2 * math.pi) ** 2 * np.max(np.abs(f)))
    assert rel < 2e-3


@pytest.mark.parametrize("model_name", ["cr16", "cr2_small"])
def test_frame_operators_exactly_skew(model_name, request, rng):
    model = request.getfixturevalue(model_name)
    f = _lattice_function(model, rng)
    g = _lattice_function(model, rng)
    for idx in range(model.spec.dim):
        a = field_inner(model, f, frame_derivative(model, g, idx))
        b = field_inner(model, frame_derivative(model, f, idx), g)
        assert abs(a + b) <= 1e-13 * (abs(a) + 1.0)


def test_integral_of_derivative_vanishes(cr16, rng):
    f = np.exp(_lattice_function(cr16, rng))
    for idx in range(3):
        assert abs(integrate(cr16, frame_derivative(cr16, f, idx))) <= 1e-14


def test_commutator_is_vertical_field(cr16):
    """[e_1, e_2] f - c xi f converges under refinement (frame convention check)."""
    errs = []
    for N in (16, 32):
        model = build_model("CR", 1, (N, N, N))
        f = twisted_mode(model.grid, model.structures, 0, 1, np.array([0.1, -0.2]), 0.2, 0.4)
        e = lambda g, i: frame_derivative(model, g, i)
        comm = e(e(f, 1), 0) - e(e(f, 0), 1)
        c = model.frame.structure_constants[0, 0, 1]
        errs.append(np.max(np.abs(comm - c * e(f, 2))) / np.max(np.abs(f)))
    assert errs[1] < errs[0] / 8


def test_sub_laplacian_oracle_order():
    errs = []
    for N in (16, 32):
        model = build_model("CR", 1, (N, N, N))
        f = torus_mode(model.grid, [1, 0], 0.2)
        lap = frame_operators(model).sub_laplacian(f)
        errs.append(np.max(np.abs(lap + 4 * math.pi ** 2 * f)))
    order = math.log2(errs[0] / errs[1])
    assert 3.7 <= order <= 4.5


def test_coordinate_scheme_agrees_with_invariant():
    model = build_model("CR", 1, (32, 32, 32))
    f = twisted_mode(model.grid, model.structures, 0, 1, np.array([0.05, 0.1]), 0.1, 0.0)
    a = frame_operators(model, "invariant").apply(f, 0)
    b = frame_operators(model, "coordinate").apply(f, 0)
    assert np.max(np.abs(a - b)) / np.max(np.abs(a)) < 5e-3


def test_integrate_constant(cr16):
    assert integrate(cr16, np.full(cr16.grid.shape, 2.5)) == pytest.approx(2.5, abs=1e-15)


# ---------------------------------------------------------------------------
# initial data


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10 ** 6), band=st.integers(1, 2))
def test_planar_potential_bounded(cr16, seed, band):
    psi = planar_potential(cr16.grid, cr16.structures, band, np.random.default_rng(seed))
    assert np.max(np.abs(psi)) <= 1.0 + 1e-12


def test_twisted_mode_bounded(cr16):
    f = twisted_mode(cr16.grid, cr16.structures, 0, 2, np.array([0.3, -0.1]), 0.5, 1.0)
    assert np.max(np.abs(f)) <= twisted_sup_bound(2, 2)


def test_initial_density_deterministic(cr16):
    spec = InitialDataSpec(seed=7)
    a = make_initial_density(spec, cr16)
    b = make_initial_density(spec, cr16)
    assert np.array_equal(a, b) and np.min(a) > 0


def test_initial_density_constant(cr16):
    u = make_initial_density(InitialDataSpec(shape="constant", amplitude=1.5), cr16)
    assert np.all(u == 1.5)


def test_initial_density_rejects_nonpositive(cr16):
    with pytest.raises(NotPositive):
        make_initial_density(InitialDataSpec(shape="constant", amplitude=-1.0), cr16)


def test_periodized_bump_is_lattice_invariant(cr16):
    spec = InitialDataSpec(shape=InitialShape.PERIODIZED_BUMP, seed=1)
    u = make_initial_density(spec, cr16)
    assert np.min(u) > 0


def test_twisted_mode_closed_form_is_lattice_invariant(cr16):
    m = cr16.structures.matrices[0]
    q0 = np.array([0.1, -0.2])

    def closed_form(q, tau):
        lin = sum(float(q0 @ m[:, b]) * q[b] for b in range(2))
        val = np.exp(2j * np.pi * (tau[0] + 0.3 + lin))
        for b in range(2):
            w = sum(m[b, c] * (q[c] - q0[c]) for c in range(2) if m[b, c] != 0)
            val = val * _theta_factor(1, q[b] + q0[b], np.asarray(w))
        return val.real

    assert wrap_consistency_residual(cr16.grid, closed_form) < 1e-13


def test_wrap_consistency_detects_plain_periodic(cr16):
    # an ordinary torus function in tau is not invariant under the sheared wrap
    bad = lambda q, tau: np.cos(2 * np.pi * tau[0]) * np.cos(2 * np.pi * q[0])
    assert wrap_consistency_residual(cr16.grid, bad) > 1e-3


# ---------------------------------------------------------------------------
# serialisation


def test_field_roundtrip(tmp_path, rng):
    values = rng.standard_normal((8, 8, 16))
    path = tmp_path / "f.bin"
    write_field(path, values, order=4)
    back, order = read_field(path)
    assert order == 4 and np.array_equal(back, values)
    raw = path.read_bytes()
    assert raw[:4] == b"NHF1" and len(raw) == 4 + 8 + 3 * 8 + values.size * 8


def test_checkpoint_roundtrip(tmp_path, cr16, density16):
    state = FlowState(t=0.125, u=density16, step_count=9, dt=1e-4)
    path = tmp_path / "c.bin"
    save_checkpoint(path, state, cr16)
    back = load_checkpoint(path, cr16)
    assert back.t == 0.125 and back.step_count == 9 and back.dt == 1e-4
    assert np.array_equal(back.u, density16)
    with pytest.raises(ShapeMismatch):
        load_checkpoint(path, build_model("CR", 1, (8, 8, 8)))


def test_csv_slice(tmp_path, cr16, density16):
    path = tmp_path / "s.csv"
    write_csv_slice(path, cr16.grid, density16, axes=(0, 2))
    lines = path.read_text().splitlines()
    assert lines[0] == "x0,x2,value"
    assert len(lines) == 1 + 16 * 16
    with pytest.raises(ShapeMismatch):
        write_csv_slice(path, cr16.grid, density16[:-1])
