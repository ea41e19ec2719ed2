"""Horizontal calculus on flat models and the pointwise identities built on it.

In a left-invariant frame of a flat model every connection coefficient
vanishes, so covariant derivatives are iterated frame derivatives::

    hess(a, b)     = e_a (e_b f)
    third(a, b, c) = e_a (e_b (e_c f))

Argument order matches the Ricci identity
``hess(a,b) - hess(b,a) = -2 sum_s omega_s(e_a, e_b) xi_s f``.

Several quantities are assembled through linearity instead of full
third-derivative tensors.  With ``Q_s = g(hess, omega_s)``:

    P_f(e_a)  = e_a(Delta f) + sum_s (I_s e_a)(Q_s)
    P_f(grad) = <grad f, grad Delta f> + sum_s <grad Q_s, I_s grad f>
    R_f(e_a)  = sum_s xi_s((I_s e_a) f)

Fields are dense numpy arrays over the grid.  Work on the largest grids is
streamed: Hessian entries are produced on demand and freed, so only a
handful of fields are alive at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from nilheat.discretization.fields import (add_product, add_scaled, frame_operators,
                                           integrate)
from nilheat.errors import NotPositive, UTermAtN1
from nilheat.geometry import GeometricTensors, ModelKind

# Hessians are cached when all m^2 entries fit in this many bytes.
HESS_CACHE_BYTES = 600 * 2 ** 20
_CHUNK = 1 << 20


@dataclass
class ResidualReport:
    name: str
    abs: float
    rel: float
    h: float
    order_vs_prev: float | None = None
    model: str = ""
    grid: str = ""
    details: dict = field(default_factory=dict)

    def row(self) -> list:
        order = "" if self.order_vs_prev is None else f"{self.order_vs_prev:.6g}"
        return [self.name, self.model, self.grid, f"{self.h:.10g}", f"{self.abs:.10e}",
                f"{self.rel:.10e}", order]


# ---------------------------------------------------------------------------
# deterministic reductions


def sum_product(x: np.ndarray, y: np.ndarray | None = None) -> float:
    """``sum(x * y)`` (or ``sum(x * x)``) in fixed-size chunks, pairwise within
    each chunk; the reduction order depends only on the array size."""
    xf = x.reshape(-1)
    yf = xf if y is None else y.reshape(-1)
    total = 0.0
    for i in range(0, xf.size, _CHUNK):
        a = xf[i:i + _CHUNK]
        b = yf[i:i + _CHUNK]
        total += float(np.sum(a * b))
    return total


def integral_of_product(model, x, y=None) -> float:
    return sum_product(x, y) * model.grid.cell_volume * model.frame.vol_density


def l2_norm(model, x) -> float:
    return float(np.sqrt(max(integral_of_product(model, x), 0.0)))


def make_report(name: str, model, abs_val: float, scale: float, **details) -> ResidualReport:
    rel = 0.0 if abs_val == 0.0 else abs_val / max(scale, 1e-300)
    return ResidualReport(name=name, abs=float(abs_val), rel=float(rel),
                          h=float(model.grid.spacings[0]), model=model.spec.label,
                          grid="x".join(map(str, model.grid.sizes)), details=details)


def _residual_report(name, model, diff, *sides, **details) -> ResidualReport:
    scale = max((l2_norm(model, s) for s in sides), default=0.0)
    return make_report(name, model, l2_norm(model, diff), scale, **details)


# ---------------------------------------------------------------------------
# derivative bundle


class DerivativeBundle:
    """Lazily evaluated frame derivatives of one scalar field.

    ``grad``, ``vert``, the sub-Laplacian and the ``omega`` pairings are
    computed on first access.  Hessian entries are cached only when
    the whole tensor is small enough, otherwise rows are streamed.
    """

    def __init__(self, model, f: np.ndarray, order: int = 3, cache: bool | None = None):
        if order not in (1, 2, 3):
            raise ValueError("order must be 1, 2 or 3")
        self.model = model
        self.ops = frame_operators(model)
        self.f = np.ascontiguousarray(f, dtype=float)
        self.order = order
        m = model.spec.m
        if cache is None:
            cache = model.grid.npoints * m * m * 8 <= HESS_CACHE_BYTES
        self.cache = cache
        self._hess: dict = {}
        self._lap = None
        self._pairing = None
        self._grad = None
        self._vert = None

    @property
    def m(self) -> int:
        return self.model.spec.m

    @property
    def k(self) -> int:
        return self.model.spec.k

    @property
    def grad(self) -> list:
        if self._grad is None:
            self._grad = self.ops.derivatives(self.f, range(self.m))
        return self._grad

    @property
    def vert(self) -> list:
        if self._vert is None:
            self._vert = self.ops.derivatives(self.f, range(self.m, self.m + self.k))
        return self._vert

    def hess(self, a: int, b: int) -> np.ndarray:
        key = (a, b)
        if key not in self._hess:
            if not self.cache:
                return self.ops.apply(self.grad[b], a)
            for c, h in self.ops.iter_derivatives(self.grad[b], range(self.m)):
                self._hess[(c, b)] = h
        return self._hess[key]

    def hess_column(self, b: int):
        """Yield ``(a, hess(a, b))`` for all ``a``, sharing one transform."""
        if self.cache:
            for a in range(self.m):
                yield a, self.hess(a, b)
        else:
            yield from self.ops.iter_derivatives(self.grad[b], range(self.m))

    def third(self, a: int, b: int, c: int) -> np.ndarray:
        return self.ops.apply(self.hess(b, c), a)

    def mixed(self, s: int, b: int) -> np.ndarray:
        """``xi_s (e_b f)``."""
        return self.ops.apply(self.grad[b], self.m + s)

    def mixed_column(self, b: int):
        """Yield ``(s, xi_s e_b f)`` for all ``s``."""
        for i, g in self.ops.iter_derivatives(self.grad[b], range(self.m, self.m + self.k)):
            yield i - self.m, g

    @property
    def lap(self) -> np.ndarray:
        if self._lap is None:
            # identical to sum_a e_a(grad[a]), evaluated in one spectral pass
            self._lap = self.ops.sub_laplacian(self.f)
        return self._lap

    def pairing(self, s: int) -> np.ndarray:
        """``Q_s = g(hess, omega_s) = sum_{a,b} hess(a, b) omega_s(e_a, e_b)``.

        All pairings are computed together and kept when the bundle caches,
        otherwise each call recomputes the one requested.
        """
        # omega_s(e_a, e_b) = (I_s)_{ba}: column b contributes sum_a (I_s)_{ba} e_a
        mats = self.model.structures.matrices
        if not self.cache:
            return self.ops.combinations(self.grad, mats[s][None])[0]
        if self._pairing is None:
            self._pairing = self.ops.combinations(self.grad, np.stack(list(mats[:self.k])))
        return self._pairing[s]

    def grad_sq(self) -> np.ndarray:
        out = np.zeros_like(self.f)
        for g in self.grad:
            add_product(out, 1.0, g, g)
        return out

    def structure_grad(self, s: int) -> list:
        """Components of ``I_s grad f``."""
        I = self.model.structures.matrices[s]
        return [sum(I[c, a] * self.grad[a] for a in range(self.m) if I[c, a] != 0)
                for c in range(self.m)]

    def release(self):
        self._hess.clear()
        self._pairing = None

    def trim(self):
        """Drop recomputable first derivatives when the bundle is not caching."""
        if not self.cache:
            self._grad = None
            self._vert = None
            self._pairing = None


def covariant_derivatives(model, f: np.ndarray, order: int = 3) -> DerivativeBundle:
    return DerivativeBundle(model, f, order=order)


def sub_laplacian(model, f: np.ndarray) -> np.ndarray:
    return frame_operators(model).sub_laplacian(np.ascontiguousarray(f, dtype=float))


# ---------------------------------------------------------------------------
# operators


def hessian_sq(db: DerivativeBundle, out: np.ndarray | None = None) -> np.ndarray:
    """Full Frobenius norm ``sum_{a,b} hess(a,b)^2`` (antisymmetric part included),
    added to ``out`` when given."""
    if out is None:
        out = np.zeros_like(db.f)
    for b in range(db.m):
        for _, h in db.hess_column(b):
            add_product(out, 1.0, h, h)
            del h
    return out


def traceless_hessian_sq(db: DerivativeBundle) -> np.ndarray:
    """``|hess|^2 - (1/m) [(Delta f)^2 + sum_s Q_s^2]``."""
    out = hessian_sq(db)
    c = -1.0 / db.m
    add_product(out, c, db.lap, db.lap)
    for s in range(db.k):
        q = db.pairing(s)
        add_product(out, c, q, q)
    return out


def _check_u(spec, tensors: GeometricTensors | None):
    if tensors is not None and spec.kind is ModelKind.QC and spec.n == 1 and tensors.U is not None:
        raise UTermAtN1("U vanishes on seven-dimensional qc manifolds; pass U=None")


def _tensor_apply(T, vec: list, a: int) -> np.ndarray:
    """``T(e_a, V) = sum_b T_ab V_b`` for constant or field ``T``."""
    T = np.asarray(T)
    if T.ndim == 2:
        return sum(T[a, b] * vec[b] for b in range(len(vec)) if T[a, b] != 0)
    return sum(T[a, b] * vec[b] for b in range(len(vec)))


def _tensor_terms(db: DerivativeBundle, tensors: GeometricTensors | None) -> list | None:
    """Curvature/torsion part of ``P_f`` as components, or None when zero."""
    spec = db.model.spec
    _check_u(spec, tensors)
    if tensors is None or tensors.flat:
        return None
    m, n = db.m, spec.n
    out = [np.zeros_like(db.f) for _ in range(m)]
    if spec.kind is ModelKind.QC:
        for a in range(m):
            if tensors.S is not None:
                out[a] += -4 * n * tensors.S * db.grad[a]
            if tensors.T0 is not None:
                out[a] += 4 * n * _tensor_apply(tensors.T0, db.grad, a)
            if tensors.U is not None:
                out[a] += -(8 * n * (n - 2) / (n - 1)) * _tensor_apply(tensors.U, db.grad, a)
    elif tensors.A is not None:
        jg = db.structure_grad(0)
        for a in range(m):
            out[a] += 4 * n * _tensor_apply(tensors.A, jg, a)
    return out


def _p_coefficients(db: DerivativeBundle) -> np.ndarray:
    """Coefficients of ``P_f(e_a)`` on the inputs ``[Delta f, Q_1, ..., Q_k]``."""
    m, k = db.m, db.k
    coeffs = np.zeros((m, 1 + k, m))
    for a in range(m):
        coeffs[a, 0, a] = 1.0
        for s in range(k):
            # (I_s e_a) = sum_c (I_s)_{ca} e_c
            coeffs[a, 1 + s, :] = db.model.structures.matrices[s][:, a]
    return coeffs


def p_form(db: DerivativeBundle, tensors: GeometricTensors | None = None) -> np.ndarray:
    """Components ``P_f(e_a)``, shape ``(m, *grid)``."""
    m = db.m
    inputs = [db.lap] + [db.pairing(s) for s in range(db.k)]
    comps = db.ops.combinations(inputs, _p_coefficients(db))
    out = np.empty((m,) + db.f.shape)
    for a in range(m):
        out[a] = comps[a]
    del comps
    extra = _tensor_terms(db, tensors)
    if extra is not None:
        for a in range(m):
            out[a] += extra[a]
    return out


def p_function(db: DerivativeBundle, tensors: GeometricTensors | None = None) -> np.ndarray:
    """``P_f(grad f)`` streamed over the inputs."""
    m = db.m
    db.grad  # materialise before the streams below allocate transforms
    out = np.zeros_like(db.f)
    for a, g in db.ops.iter_derivatives(db.lap, range(m)):
        add_product(out, 1.0, g, db.grad[a])
        del g
    for s in range(db.k):
        I = db.model.structures.matrices[s]
        q = db.pairing(s)
        for c, g in db.ops.iter_derivatives(q, range(m)):
            for a in range(m):
                if I[c, a] != 0:
                    add_product(out, I[c, a], g, db.grad[a])
            del g
        del q
    extra = _tensor_terms(db, tensors)
    if extra is not None:
        for a in range(m):
            add_product(out, 1.0, extra[a], db.grad[a])
    return out


def c_operator(model, f: np.ndarray, tensors: GeometricTensors | None = None) -> np.ndarray:
    """``Cf = sum_a e_a(P_f(e_a))``: exact divergence form."""
    db = DerivativeBundle(model, f)
    P = p_form(db, tensors)
    db.release()
    coeffs = np.eye(db.m)[None, :, :]
    return db.ops.combinations(list(P), coeffs)[0]


def r_form(db: DerivativeBundle) -> np.ndarray:
    """Components ``R_f(e_a) = sum_s xi_s((I_s e_a) f)``, shape ``(m, *grid)``."""
    m = db.m
    out = np.zeros((m,) + db.f.shape)
    for c in range(m):
        for s, mixed in db.mixed_column(c):
            I = db.model.structures.matrices[s]
            for a in range(m):
                if I[c, a] != 0:
                    add_scaled(out[a], I[c, a], mixed)
    return out


def r_function(db: DerivativeBundle) -> np.ndarray:
    """``R_f(grad f) = sum_s <xi_s grad f, I_s grad f>``."""
    out = np.zeros_like(db.f)
    for c in range(db.m):
        for s, mixed in db.mixed_column(c):
            I = db.model.structures.matrices[s]
            for a in range(db.m):
                if I[c, a] != 0:
                    add_product(out, I[c, a], mixed, db.grad[a])
            del mixed
    return out


# ---------------------------------------------------------------------------
# residuals


def ricci_identity_residual(db: DerivativeBundle, flip_sign: bool = False) -> ResidualReport:
    """Antisymmetric Hessian and ``omega`` pairing against the Reeb derivatives.

    ``hess(a,b) - hess(b,a) + 2 sum_s omega_s(a,b) xi_s f`` over ``a < b`` and
    ``Q_s + m xi_s f``.  ``flip_sign`` reverses the ``omega`` convention and
    serves as a negative control.  Every residual is linear in ``f`` and is
    assembled from derivative words on one transform of ``f``.
    """
    model, ops, m, k = db.model, db.ops, db.m, db.k
    sign = -1.0 if flip_sign else 1.0
    fh = ops.forward(db.f) if ops.scheme == "invariant" else None
    anti = np.zeros_like(db.f)
    for a in range(m):
        for b in range(a + 1, m):
            terms = [(1.0, (a, b)), (-1.0, (b, a))]
            for s in range(k):
                terms.append((sign * 2.0 * model.frame.omega(s)[a, b], (m + s,)))
            g = ops.word_combination(db.f, terms, fh=fh)
            add_product(anti, 1.0, g, g)
            del g
    pair = np.zeros_like(db.f)
    for s in range(k):
        I = model.structures.matrices[s]
        terms = [(I[b, a], (a, b)) for a in range(m) for b in range(m)]
        terms.append((sign * m, (m + s,)))
        g = ops.word_combination(db.f, terms, fh=fh)
        add_product(pair, 1.0, g, g)
        del g
    hsq = np.zeros_like(db.f)
    for a in range(m):
        for b in range(m):
            g = ops.word_combination(db.f, [(1.0, (a, b))], fh=fh)
            add_product(hsq, 1.0, g, g)
            del g
    del fh
    scale = float(np.sqrt(integrate(model, hsq)))
    del hsq
    anti_abs = float(np.sqrt(integrate(model, anti)))
    pair_abs = float(np.sqrt(integrate(model, pair)))
    total = float(np.hypot(anti_abs, pair_abs))
    name = "ricci_identity_flipped" if flip_sign else "ricci_identity"
    return make_report(name, model, total, scale, antisymmetric=anti_abs, pairing=pair_abs)


def _curvature_bochner(db: DerivativeBundle, tensors: GeometricTensors | None):
    spec = db.model.spec
    _check_u(spec, tensors)
    if tensors is None or tensors.flat:
        return None
    from nilheat.geometry import ricci_from_torsion, bilinear
    n = spec.n
    g = np.stack(db.grad)
    if spec.kind is ModelKind.QC:
        out = 2 * (n + 2) * (tensors.S or 0.0) * db.grad_sq()
        if tensors.T0 is not None:
            out = out + 2 * (n + 2) * bilinear(tensors.T0, g, g)
        if tensors.U is not None:
            out = out + 4 * (n + 1) * bilinear(tensors.U, g, g)
        return out
    jg = np.stack(db.structure_grad(0))
    out = ricci_from_torsion(spec, tensors, g, g, db.model.structures)
    if tensors.A is not None:
        out = out + 2 * bilinear(tensors.A, jg, g)
    return out


def bochner_residual(db: DerivativeBundle, tensors: GeometricTensors | None = None) -> ResidualReport:
    """``1/2 Delta|grad f|^2 - |hess|^2 - <grad Delta f, grad f> - 4 R_f(grad f)``
    (minus curvature terms when tensors are supplied)."""
    model, ops = db.model, db.ops
    db.grad
    rhs = r_function(db)
    rhs *= 4.0
    hessian_sq(db, out=rhs)
    for a, g in ops.iter_derivatives(db.lap, range(db.m)):
        add_product(rhs, 1.0, g, db.grad[a])
        del g
    curv = _curvature_bochner(db, tensors)
    if curv is not None:
        rhs += curv
    del curv
    gsq = db.grad_sq()
    db.trim()
    lhs = ops.sub_laplacian(gsq)
    del gsq
    lhs *= 0.5
    diff = np.subtract(lhs, rhs, out=lhs)
    scale = l2_norm(model, rhs)
    return make_report("bochner", model, l2_norm(model, diff), scale)


def r_form_identity_residual(db: DerivativeBundle, tensors: GeometricTensors | None = None
                             ) -> ResidualReport:
    """``R_f(Z) + (1/m) sum_s (I_s Z)(Q_s) + [torsion]``, i.e. the mixed second
    derivative rewritten through third horizontal derivatives."""
    model, ops, m = db.model, db.ops, db.m
    R = r_form(db)
    scale = l2_norm(model, np.sqrt(np.sum(R * R, axis=0)))
    for s in range(db.k):
        I = model.structures.matrices[s]
        q = db.pairing(s)
        for a in range(m):
            ops.horizontal_combination(q, I[:, a] / m, out=R[a], accumulate=True)
    spec = model.spec
    if tensors is not None and not tensors.flat:
        _check_u(spec, tensors)
        if spec.kind is ModelKind.CR and tensors.A is not None:
            # + A(JZ, grad f)
            J = model.structures.matrices[0]
            AJ = J.T @ np.asarray(tensors.A)
            for a in range(m):
                R[a] += _tensor_apply(AJ, db.grad, a)
        elif spec.kind is ModelKind.QC:
            for a in range(m):
                if tensors.T0 is not None:
                    R[a] -= _tensor_apply(tensors.T0, db.grad, a)
                if tensors.U is not None:
                    R[a] += 3 * _tensor_apply(tensors.U, db.grad, a)
    total = np.zeros_like(db.f)
    for a in range(m):
        add_product(total, 1.0, R[a], R[a])
    return make_report("r_form_identity", model, float(np.sqrt(integrate(model, total))), scale)


def _require_positive(x: np.ndarray, what: str):
    if not np.all(np.isfinite(x)) or float(np.min(x)) <= 0.0:
        raise NotPositive(f"{what} must be strictly positive")


def change_of_variable_residual(model, F: np.ndarray, mode: str = "sqrt_u",
                                tensors: GeometricTensors | None = None,
                                phi: str = "log", c: float = 2.0) -> ResidualReport:
    """Transformation rule of ``P`` under ``f = phi(F)``.

    ``mode="general_phi"`` checks the one-form rule for ``phi(F) = c F``
    (``phi="linear"``) or ``phi(F) = -2 ln F`` (``phi="log"``);
    ``mode="sqrt_u"`` checks ``u P_f(grad f) = 4 P_F(grad F) +
    [-|grad f|^4/4 + |grad f|^2 Delta f / 2 + hess f(grad f, grad f)] u``
    with ``u = F^2`` and ``f = -2 ln F``.
    """
    F = np.ascontiguousarray(F, dtype=float)
    if mode == "general_phi" and phi == "linear":
        dbF = DerivativeBundle(model, F)
        PF = p_form(dbF, tensors)
        del dbF
        dbf = DerivativeBundle(model, c * F)
        Pf = p_form(dbf, tensors)
        diff = Pf - c * PF
        return _residual_report("change_of_variable_linear", model,
                                np.sqrt(np.sum(diff * diff, axis=0)),
                                np.sqrt(np.sum(Pf * Pf, axis=0)))
    _require_positive(F, "F")
    f = -2.0 * np.log(F)
    if mode == "general_phi":
        d1, d2, d3 = -2.0 / F, 2.0 / F ** 2, -4.0 / F ** 3
        dbf = DerivativeBundle(model, f)
        lhs = p_form(dbf, tensors)
        del dbf
        dbF = DerivativeBundle(model, F)
        rhs = p_form(dbF, tensors)
        rhs *= d1
        gF = dbF.grad
        gsq = dbF.grad_sq()
        lapF = dbF.lap
        for a in range(model.spec.m):
            rhs[a] += d3 * gsq * gF[a] + d2 * lapF * gF[a]
        for b in range(model.spec.m):
            for a, h in dbF.hess_column(b):
                rhs[a] += 2.0 * d2 * h * gF[b]
        for s in range(model.spec.k):
            IgF = dbF.structure_grad(s)
            q = dbF.pairing(s)
            for a in range(model.spec.m):
                # dF(I_s e_a) = <grad F, I_s e_a> = -(I_s grad F)_a
                rhs[a] -= d2 * q * IgF[a]
        diff = lhs - rhs
        return _residual_report("change_of_variable_phi", model,
                                np.sqrt(np.sum(diff * diff, axis=0)),
                                np.sqrt(np.sum(lhs * lhs, axis=0)))
    if mode != "sqrt_u":
        raise ValueError(f"unknown mode {mode!r}")
    u = F * F
    dbf = DerivativeBundle(model, f)
    lhs = p_function(dbf, tensors)
    lhs *= u
    extra = np.zeros_like(F)
    gsq = dbf.grad_sq()
    add_product(extra, -0.25, gsq, gsq)
    add_product(extra, 0.5, gsq, dbf.lap)
    del gsq
    work = np.empty_like(F)
    for b in range(model.spec.m):
        for a, h in dbf.hess_column(b):
            np.multiply(h, dbf.grad[a], out=work)
            add_product(extra, 1.0, work, dbf.grad[b])
    del work
    extra *= u
    del dbf
    dbF = DerivativeBundle(model, F)
    pF = p_function(dbF, tensors)
    del dbF
    rhs = np.multiply(pF, 4.0, out=pF)
    rhs += extra
    del extra
    diff = np.subtract(lhs, rhs, out=rhs)
    return _residual_report("change_of_variable_sqrt_u", model, diff, lhs)


def dt_lap_residual(model, pt, variant: str = "key") -> ResidualReport:
    """Heat-flow identity for ``u w`` with time derivatives eliminated.

    ``(d_t - Delta)(u w)`` is built from ``u_t = Delta u`` and
    ``f_t = Delta f - |grad f|^2``.  ``variant="key"`` compares with
    ``[2 <grad Delta f, grad f> - Delta |grad f|^2] u``; ``variant="bochner"``
    with ``-2 [|hess f|^2 + 4 R_f(grad f)] u`` (flat models).
    """
    _require_positive(pt.u, "u")
    ops = frame_operators(model)
    db = DerivativeBundle(model, pt.f)
    u = pt.u
    w = pt.w
    gsq = db.grad_sq()
    ft = db.lap - gsq
    lhs = ops.sub_laplacian(u) * w
    dbt = DerivativeBundle(model, ft, order=1)
    inner = np.zeros_like(u)
    for a in range(model.spec.m):
        add_product(inner, 1.0, db.grad[a], dbt.grad[a])
    wt = 2.0 * dbt.lap - 2.0 * inner
    del dbt, inner
    lhs += u * wt
    lhs -= ops.sub_laplacian(u * w)
    if variant == "key":
        rhs = np.zeros_like(u)
        for a, g in ops.iter_derivatives(db.lap, range(model.spec.m)):
            add_product(rhs, 2.0, g, db.grad[a])
        rhs -= ops.sub_laplacian(gsq)
    elif variant == "bochner":
        rhs = hessian_sq(db)
        add_scaled(rhs, 4.0, r_function(db))
        rhs *= -2.0
    else:
        raise ValueError(f"unknown variant {variant!r}")
    rhs *= u
    diff = lhs - rhs
    return _residual_report(f"dt_lap_{variant}", model, diff, lhs, rhs)


def divergence_residual(model, sigma) -> ResidualReport:
    """``|integral of sum_a e_a sigma_a|`` relative to ``max |sigma|``."""
    ops = frame_operators(model)
    comps = [np.ascontiguousarray(c, dtype=float) for c in sigma]
    div = ops.combinations(comps, np.eye(len(comps))[None, :, :])[0]
    scale = max(float(np.max(np.abs(c))) for c in sigma)
    return make_report("divergence", model, abs(integrate(model, div)), scale)
