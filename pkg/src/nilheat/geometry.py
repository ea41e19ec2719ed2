"""Flat model CR and quaternionic-contact nilmanifolds.

Conventions (fixed once, audited by the Ricci-identity residuals):

* Group law in exponential coordinates ``(q, tau)``, ``q`` horizontal in R^m,
  ``tau`` vertical in R^k::

      (q, tau) . (q', tau') = (q + q', tau + tau' + B(q, q')),
      B_s(q, q') = q^T I_s q',

  where ``I_s`` are the complex structures as matrices acting on column
  vectors of frame components (``J`` for CR, left multiplication by
  ``i, j, k`` for qc).
* Left-invariant frame ``e_a = d_{x_a} + sum_s (sum_b x_b (I_s)_{ba}) d_{tau_s}``
  and Reeb fields ``xi_s = d_{tau_s}``; then
  ``[e_a, e_b] = 2 (I_s)_{ab} xi_s = -2 omega_s(e_a, e_b) xi_s`` with
  ``omega_s(X, Y) = g(I_s X, Y)``.
* The integer points form a cocompact lattice; its identifications are
  realised by :class:`~nilheat.discretization.grid.Grid`.
* Haar measure is Lebesgue measure in these coordinates and the fundamental
  domain has unit volume, so the volume density is 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from nilheat.discretization.grid import Grid
from nilheat.errors import IndexOutOfRange, UnsupportedModel, UTermAtN1

SUPPORTED = {("CR", 1), ("CR", 2), ("QC", 1)}


class ModelKind(str, Enum):
    CR = "CR"
    QC = "QC"


def alpha_n(n: int) -> Fraction:
    return Fraction(2 * (2 * n + 3), 2 * n + 1)


def beta_n(n: int) -> Fraction | None:
    """``4(2n-1)(n+2) / ((2n+1)(n-1))``; undefined (``None``) at ``n = 1``."""
    if n == 1:
        return None
    return Fraction(4 * (2 * n - 1) * (n + 2), (2 * n + 1) * (n - 1))


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    n: int
    m: int
    k: int
    grid_sizes: tuple[int, ...]
    lattice_id: str
    alpha_n: Fraction
    beta_n: Fraction | None

    @property
    def dim(self) -> int:
        return self.m + self.k

    @property
    def label(self) -> str:
        return f"{self.kind.value}{self.n}"


@dataclass(frozen=True)
class ComplexStructures:
    """``k`` orthogonal ``m x m`` matrices with ``M^2 = -Id``."""

    matrices: np.ndarray  # (k, m, m)

    @property
    def k(self) -> int:
        return self.matrices.shape[0]

    @property
    def m(self) -> int:
        return self.matrices.shape[1]

    def __getitem__(self, s: int) -> np.ndarray:
        """``I_s`` indexed ``s = 1..k``; ``s = 0`` is the identity."""
        if s == 0:
            return np.eye(self.m)
        if not 1 <= s <= self.k:
            raise IndexOutOfRange(f"complex structure index {s} outside 1..{self.k}")
        return self.matrices[s - 1]


@dataclass(frozen=True)
class Frame:
    m: int
    k: int
    # tau_s coefficient of e_a is sum_b coeff[a, s, b] * x_b
    coeff: np.ndarray  # (m, k, m)
    # [e_a, e_b] = sum_s structure_constants[s, a, b] xi_s
    structure_constants: np.ndarray  # (k, m, m)
    kappa: float = 1.0
    vol_density: float = 1.0

    def omega(self, s: int) -> np.ndarray:
        """Fundamental 2-form ``omega_s(e_a, e_b)`` (0-based ``s``)."""
        return -self.structure_constants[s] / (2.0 * self.kappa)

    @property
    def metric(self) -> np.ndarray:
        return np.eye(self.m)


@dataclass(frozen=True)
class GeometricTensors:
    """Curvature and torsion data in frame components.

    Fields are ``(m, m)`` constant matrices or ``(m, m, *grid)`` fields, ``S``
    a scalar or scalar field.  ``None`` marks a tensor that does not exist
    for the model (``U`` on seven-dimensional qc and CR; ``A``/``rho`` on qc).
    """

    S: float | np.ndarray | None = None
    T0: np.ndarray | None = None
    U: np.ndarray | None = None
    A: np.ndarray | None = None
    rho: np.ndarray | None = None
    flat: bool = False


class Model(NamedTuple):
    spec: ModelSpec
    frame: Frame
    structures: ComplexStructures
    tensors: GeometricTensors
    grid: Grid


# ---------------------------------------------------------------------------
# complex structures


def _cr_structure(n: int) -> np.ndarray:
    """``J`` on ``(x_1, y_1, ..., x_n, y_n)`` with ``J e_{x_j} = e_{y_j}``."""
    J = np.zeros((2 * n, 2 * n))
    for j in range(n):
        J[2 * j + 1, 2 * j] = 1.0
        J[2 * j, 2 * j + 1] = -1.0
    return J


def _quaternion_left(n: int) -> np.ndarray:
    """Left multiplication by ``i, j, k`` on ``H^n`` with real basis
    ``(1, i, j, k)`` per quaternionic coordinate."""
    # columns are images of 1, i, j, k
    Li = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]], dtype=float)
    Lj = np.array([[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]], dtype=float)
    Lk = np.array([[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]], dtype=float)
    eye = np.eye(n)
    return np.stack([np.kron(eye, L) for L in (Li, Lj, Lk)])


def complex_structures(kind: ModelKind | str, n: int) -> ComplexStructures:
    kind = ModelKind(kind)
    if n < 1:
        raise UnsupportedModel(f"n must be positive, got {n}")
    if kind is ModelKind.CR:
        return ComplexStructures(_cr_structure(n)[None])
    return ComplexStructures(_quaternion_left(n))


def complex_action(cs: ComplexStructures, s: int, v) -> np.ndarray:
    """``I_s v`` for frame components ``v`` (leading axis of length ``m``)."""
    mat = cs[s] if s != 0 else None
    if mat is None:
        raise IndexOutOfRange("complex structure index must be in 1..k")
    v = np.asarray(v, dtype=float)
    if v.shape[0] != cs.m:
        raise IndexOutOfRange(f"vector has {v.shape[0]} components, expected {cs.m}")
    return np.tensordot(mat, v, axes=(1, 0))


def make_frame(cs: ComplexStructures) -> Frame:
    I = cs.matrices
    k, m, _ = I.shape
    coeff = np.transpose(I, (2, 0, 1)).copy()  # coeff[a, s, b] = I[s, b, a]
    sc = 2.0 * I  # c^s_{ab} = 2 (I_s)_{ab}
    return Frame(m=m, k=k, coeff=coeff, structure_constants=sc)


def flat_tensors(kind: ModelKind, n: int, m: int) -> GeometricTensors:
    z = np.zeros((m, m))
    if kind is ModelKind.CR:
        return GeometricTensors(S=0.0, T0=None, U=None, A=z, rho=z.copy(), flat=True)
    U = None if n == 1 else z.copy()
    return GeometricTensors(S=0.0, T0=z, U=U, A=None, rho=None, flat=True)


def model_dims(kind: ModelKind, n: int) -> tuple[int, int]:
    return (2 * n, 1) if kind is ModelKind.CR else (4 * n, 3)


def build_model(kind, n: int, grid_sizes, order: int = 4, scheme: str = "invariant") -> Model:
    """Instantiate a flat model nilmanifold with its grid.

    Raises :class:`UnsupportedModel` outside CR n=1,2 and qc n=1 and
    :class:`GridIncompatible` when the lattice shear is not grid exact.
    """
    try:
        kind = ModelKind(kind)
    except ValueError:
        raise UnsupportedModel(f"unknown model kind {kind!r}") from None
    if (kind.value, n) not in SUPPORTED:
        raise UnsupportedModel(
            f"{kind.value} n={n} is not supported; choose CR n=1, CR n=2 or QC n=1")
    m, k = model_dims(kind, n)
    sizes = tuple(int(s) for s in grid_sizes)
    if len(sizes) != m + k:
        from nilheat.errors import GridIncompatible
        raise GridIncompatible(f"{kind.value}{n} needs {m + k} grid sizes, got {len(sizes)}")
    if min(sizes) < 8:
        from nilheat.errors import GridIncompatible
        raise GridIncompatible("every axis needs at least 8 points")
    cs = complex_structures(kind, n)
    frame = make_frame(cs)
    grid = Grid(sizes=sizes, m=m, k=k, shear=cs.matrices.astype(np.int64), stencil_order=order,
                scheme=scheme)
    spec = ModelSpec(kind=kind, n=n, m=m, k=k, grid_sizes=sizes,
                     lattice_id=f"{kind.value.lower()}-heisenberg-integer-v1",
                     alpha_n=alpha_n(n), beta_n=None if kind is ModelKind.CR else beta_n(n))
    return Model(spec, frame, cs, flat_tensors(kind, n, m), grid)


def algebraic_model(kind, n: int) -> tuple[ModelSpec, ComplexStructures]:
    """Model data without a grid, for the pure tensor algebra (any ``n``)."""
    kind = ModelKind(kind)
    m, k = model_dims(kind, n)
    spec = ModelSpec(kind=kind, n=n, m=m, k=k, grid_sizes=(), lattice_id="algebraic",
                     alpha_n=alpha_n(n), beta_n=None if kind is ModelKind.CR else beta_n(n))
    return spec, complex_structures(kind, n)


# ---------------------------------------------------------------------------
# tensor algebra


def bilinear(T, X, Y) -> np.ndarray:
    """``T(X, Y) = sum_ab T_ab X_a Y_b`` for constant or field-valued ``T``."""
    T = np.asarray(T, dtype=float)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if T.ndim == 2:
        return np.einsum("ab,a...,b...->...", T, X, Y)
    return np.einsum("ab...,a...,b...->...", T, X, Y)


def _transform(I, X):
    return np.tensordot(I, np.asarray(X, dtype=float), axes=(1, 0))


def lichnerowicz(model: ModelSpec, tensors: GeometricTensors, X, cs: ComplexStructures | None = None):
    """The Ricci-type tensor ``L(X, X)``.

    qc: ``2 S g(X,X) + alpha_n T0(X,X) + beta_n U(X,X)`` (no U term at n=1);
    CR: ``rho(JX, X) + 2n A(JX, X)``.
    """
    X = np.asarray(X, dtype=float)
    if model.kind is ModelKind.QC:
        out = 2.0 * _scalar(tensors.S) * np.einsum("a...,a...->...", X, X)
        if tensors.T0 is not None:
            out = out + float(model.alpha_n) * bilinear(tensors.T0, X, X)
        if model.n == 1:
            if tensors.U is not None:
                raise UTermAtN1("U vanishes on seven-dimensional qc manifolds; pass U=None")
        elif tensors.U is not None:
            out = out + float(model.beta_n) * bilinear(tensors.U, X, X)
        return out
    if cs is None:
        cs = complex_structures(model.kind, model.n)
    JX = _transform(cs[1], X)
    out = np.zeros(X.shape[1:])
    if tensors.rho is not None:
        out = out + bilinear(tensors.rho, JX, X)
    if tensors.A is not None:
        out = out + 2 * model.n * bilinear(tensors.A, JX, X)
    return out


def ricci_from_torsion(model: ModelSpec, tensors: GeometricTensors, X, Y,
                       cs: ComplexStructures | None = None):
    """Horizontal Ricci tensor assembled from torsion (and curvature)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if model.kind is ModelKind.QC:
        n = model.n
        out = _scalar(tensors.S) / (4 * n) * np.einsum("a...,a...->...", X, Y)
        if tensors.T0 is not None:
            out = out + (2 * n + 2) * bilinear(tensors.T0, X, Y)
        if tensors.U is not None:
            if n == 1:
                raise UTermAtN1("U vanishes on seven-dimensional qc manifolds; pass U=None")
            out = out + (4 * n + 10) * bilinear(tensors.U, X, Y)
        return out
    if cs is None:
        cs = complex_structures(model.kind, model.n)
    JX = _transform(cs[1], X)
    out = np.zeros(np.broadcast_shapes(X.shape[1:], Y.shape[1:]))
    if tensors.rho is not None:
        out = out + bilinear(tensors.rho, JX, Y)
    if tensors.A is not None:
        out = out + 2 * (model.n - 1) * bilinear(tensors.A, JX, Y)
    return out


def _scalar(S):
    return 0.0 if S is None else S


def sp1_average(T, cs: ComplexStructures) -> np.ndarray:
    """``1/4 sum_{s=0..3} I_s^T T I_s``: the Sp(1)-invariant part of ``T``."""
    return 0.25 * sum(cs[s].T @ T @ cs[s] for s in range(cs.k + 1))


def synthetic_qc_tensors(n: int, rng: np.random.Generator, S: float = 0.0) -> GeometricTensors:
    """Random constant ``T0`` and ``U`` obeying the qc symmetry relations.

    ``T0`` is symmetric trace-free with ``sum_{s=0..3} T0(I_s., I_s.) = 0``;
    ``U`` is symmetric trace-free and ``I_s``-invariant (absent at n=1).
    """
    _, cs = algebraic_model("QC", n)
    m = 4 * n
    R = rng.standard_normal((m, m))
    R = R + R.T
    R -= np.trace(R) / m * np.eye(m)
    T0 = R - sp1_average(R, cs)
    U = None
    if n > 1:
        R2 = rng.standard_normal((m, m))
        R2 = R2 + R2.T
        U = sp1_average(R2, cs)
        U -= np.trace(U) / m * np.eye(m)
    return GeometricTensors(S=S, T0=T0, U=U)


def synthetic_cr_tensors(n: int, rng: np.random.Generator) -> GeometricTensors:
    """Random ``rho`` (J-invariant 2-form) and Webster torsion ``A``
    (symmetric, J-anti-invariant)."""
    J = _cr_structure(n)
    m = 2 * n
    R = rng.standard_normal((m, m))
    R = R - R.T
    rho = 0.5 * (R + J.T @ R @ J)
    A = rng.standard_normal((m, m))
    A = A + A.T
    A = 0.5 * (A - J.T @ A @ J)
    return GeometricTensors(S=0.0, A=A, rho=rho)


def torsion_form(cs: ComplexStructures, tensors: GeometricTensors, s: int) -> np.ndarray:
    """Matrix of ``T(xi_s, Z, Y)`` rebuilt from its ``T0`` and ``U`` parts.

    ``T(xi_s, Z, Y) = -1/4 [T0(I_s Z, Y) + T0(Z, I_s Y)] + g(I_s u Z, Y)``
    with ``U(X, Y) = g(uX, Y)``; returned as ``W`` with ``T(xi_s,Z,Y) = Z^T W Y``.
    """
    I = cs[s]
    W = np.zeros((cs.m, cs.m))
    if tensors.T0 is not None:
        T0 = tensors.T0
        W += -0.25 * (I.T @ T0 + T0 @ I)
    if tensors.U is not None:
        W += (I @ tensors.U).T
    return W


def torsion_trace_gap(cs: ComplexStructures, tensors: GeometricTensors) -> float:
    """Max entrywise gap of ``sum_s T(xi_s, I_s X, Y) = T0(X,Y) - 3U(X,Y)``."""
    lhs = sum(cs[s].T @ torsion_form(cs, tensors, s) for s in range(1, cs.k + 1))
    rhs = np.zeros((cs.m, cs.m))
    if tensors.T0 is not None:
        rhs += tensors.T0
    if tensors.U is not None:
        rhs -= 3 * tensors.U
    return float(np.max(np.abs(lhs - rhs)))


def torsion_symmetry_gaps(cs: ComplexStructures, tensors: GeometricTensors) -> dict[str, float]:
    """Residuals of the ``T0``/``U`` symmetry relations (and their traces)."""
    gaps = {}
    if tensors.T0 is not None:
        T0 = tensors.T0
        gaps["T0_sp1_sum"] = float(np.max(np.abs(sum(cs[s].T @ T0 @ cs[s] for s in range(cs.k + 1)))))
        gaps["T0_trace"] = abs(float(np.trace(T0)))
    if tensors.U is not None:
        U = tensors.U
        gaps["U_invariance"] = max(float(np.max(np.abs(cs[s].T @ U @ cs[s] - U)))
                                   for s in range(1, cs.k + 1))
        gaps["U_trace"] = abs(float(np.trace(U)))
    return gaps


def decompose_ricci(ric: np.ndarray, spec: ModelSpec, cs: ComplexStructures) -> GeometricTensors:
    """Invert :func:`ricci_from_torsion` on constant qc data.

    The Sp(1)-anti-invariant part carries ``(2n+2) T0``, the invariant
    trace-free part ``(4n+10) U`` and the trace ``S`` (normalisation
    ``Ric = ... + S/(4n) g``).
    """
    n, m = spec.n, spec.m
    inv = sp1_average(ric, cs)
    tr = np.trace(ric)
    T0 = (ric - inv) / (2 * n + 2)
    U = None
    if n > 1:
        U = (inv - tr / m * np.eye(m)) / (4 * n + 10)
    return GeometricTensors(S=float(tr), T0=T0, U=U)


# ---------------------------------------------------------------------------
# documentation


def convention_sheet(model: Model) -> str:
    """Markdown description of the group law, frame and lattice of ``model``."""
    spec, frame, cs, _, grid = model
    m, k = spec.m, spec.k
    hnames = _horizontal_names(spec)
    vnames = ["t"] if k == 1 else [f"t{s + 1}" for s in range(k)]
    lines = [
        f"# Model {spec.label}: {spec.kind.value} Heisenberg nilmanifold, n = {spec.n}",
        "",
        f"* coordinates: ({', '.join(hnames + vnames)}); horizontal dimension m = {m}, "
        f"vertical dimension k = {k}",
        "* group law: (q, t) . (q', t') = (q + q', t + t' + B(q, q')), "
        "B_s(q, q') = q^T I_s q'",
        f"* lattice `{spec.lattice_id}`: integer points; fundamental domain "
        "[-1/2, 1/2)^m x [0, 1)^k, unit Haar volume",
        "* identification: f(q + e_a, t) = f(q, t - B(e_a, q))",
        f"* alpha_n = {spec.alpha_n}, beta_n = {spec.beta_n}",
        f"* grid sizes: {'x'.join(map(str, grid.sizes))}, stencil order {grid.stencil_order}",
        "",
        "## Horizontal frame",
        "",
    ]
    for a in range(m):
        terms = [f"d/d{hnames[a]}"]
        for s in range(k):
            coeff = frame.coeff[a, s]
            poly = " ".join(f"{'+' if c > 0 else '-'} {hnames[b]}"
                            for b, c in enumerate(coeff) if c != 0)
            if poly:
                terms.append(f"({poly.lstrip('+ ').strip()}) d/d{vnames[s]}")
        lines.append(f"* e_{a + 1} = " + " + ".join(terms))
    lines += ["", "## Reeb fields", ""]
    lines += [f"* xi_{s + 1} = d/d{vnames[s]}" for s in range(k)]
    lines += ["", "## Brackets [e_a, e_b] = sum_s c^s_ab xi_s (nonzero, a < b)", ""]
    for s in range(k):
        for a in range(m):
            for b in range(a + 1, m):
                c = frame.structure_constants[s, a, b]
                if c:
                    lines.append(f"* c^{s + 1}_({a + 1},{b + 1}) = {c:+g}")
    lines += ["", "## Fundamental forms and complex structures", "",
              "omega_s(X, Y) = g(I_s X, Y) = -c^s(X, Y) / 2", ""]
    for s in range(k):
        lines.append(f"I_{s + 1} =")
        lines.append("```")
        lines.append(np.array2string(cs.matrices[s].astype(int)))
        lines.append("```")
    return "\n".join(lines) + "\n"


def _horizontal_names(spec: ModelSpec) -> list[str]:
    if spec.kind is ModelKind.CR:
        names = []
        for j in range(spec.n):
            names += [f"x{j + 1}", f"y{j + 1}"] if spec.n > 1 else ["x", "y"]
        return names
    return [f"q{a}" for a in range(spec.m)]
