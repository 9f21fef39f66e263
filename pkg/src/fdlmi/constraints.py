"""Convexified frequency-domain LMI blocks.

With ``P = Y + G X`` the closed-loop maps are ``S = Y P^-1``,
``K S = X P^-1`` and ``T = G X P^-1``.  Norm bounds on them are quadratic
in ``P`` and become linear after replacing ``P^H P`` by its tangent at the
current point ``P_c``::

    P^H P  >=  P^H P_c + P_c^H P - P_c^H P_c

Every block is batched over frequencies (`AffineForm`), exactly Hermitian,
and optionally normalized by a congruence ``diag(I / rho, I, ...)`` with
``rho = sigma_max(P_c)`` so that its entries are of order one.  The
normalization does not change the feasible set.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .controller import ControllerStructure
from .exceptions import EvaluationError, InputError
from .freqdata import evaluate_weight
from .sdp import AffineForm, BlockFamily, DecisionLayout, hermitian_block

__all__ = [
    'DesignSpec', 'FrequencyProblem', 'LinearizationPoint', 'OBJECTIVES',
    'linearize_quadratic', 'build_mixed_sens_block', 'build_h2_block',
    'build_loopshape_hinf_block', 'build_loopshape_h2_block',
    'build_stability_block', 'build_detY_block',
    'build_robust_additive_block', 'build_bound_block',
    'replicate_multimodel',
]

OBJECTIVES = ('hinf-mixed', 'h2', 'ls-hinf', 'ls-h2')


def _ct(a):
    return np.conj(np.swapaxes(a, -1, -2))


def _const(values, n_global):
    return AffineForm.constant(values, n_global)


def _form(x, n_global=0):
    return x if isinstance(x, AffineForm) else _const(x, n_global)


def _sigma_max(a):
    return np.linalg.norm(a, 2, axis=(-2, -1))


def _gamma_eye(gamma, size, n_freq):
    """``gamma I`` from a ``(K, 1, 1)`` form or a positive scalar."""
    if isinstance(gamma, AffineForm):
        eye = np.eye(size)
        return AffineForm(gamma.const * eye, gamma.lin * eye,
                          None if gamma.loc is None else gamma.loc * eye,
                          gamma.loc_start)
    return np.broadcast_to(gamma * np.eye(size), (n_freq, size, size))


def _scales(ref, normalize):
    if normalize is True:
        rho = _sigma_max(ref)
        return np.where(rho > 0, rho, 1.0)
    if normalize is False or normalize is None:
        return np.ones(ref.shape[0])
    return np.asarray(normalize, dtype=float)


def linearize_quadratic(P, Pc):
    """Tangent ``P^H Pc + Pc^H P - Pc^H Pc`` of ``P^H P`` at ``Pc``.

    `P` is an `AffineForm` (or numeric array); the result is an exactly
    Hermitian `AffineForm` and never exceeds ``P^H P``.
    """
    P = _form(P)
    PcH = _ct(Pc)
    A = P.lmul(PcH)
    C = PcH @ Pc
    return A + A.H - (C + _ct(C)) / 2


def _block2(diag0, off, diag1):
    return hermitian_block([[diag0, None], [off, diag1]])


def build_mixed_sens_block(G, W1, W2, X, Y, gamma, Pc, normalize=True):
    """``[[Lin(P), (W1 Y)^H, (W2 X)^H], [W1 Y, g I, 0], [W2 X, 0, g I]]``.

    Positive definiteness bounds ``sigma_max([W1 S; W2 K S])^2`` by ``g``.
    `W2` may be None to drop the control-effort channel.
    """
    X, Y = _form(X), _form(Y)
    nv = X.n_global
    rho = _scales(Pc, normalize)
    P = Y + X.lmul(G)
    lin = linearize_quadratic(P, Pc).scale(rho ** -2)
    e1 = Y.lmul(W1).scale(1 / rho)
    g1 = _form(_gamma_eye(gamma, e1.shape[0], e1.n_freq), nv)
    if W2 is None:
        return hermitian_block([[lin, None], [e1, g1]])
    e2 = X.lmul(W2).scale(1 / rho)
    g2 = _form(_gamma_eye(gamma, e2.shape[0], e2.n_freq), nv)
    return hermitian_block([[lin, None, None], [e1, g1, None],
                            [e2, None, g2]])


def build_h2_block(G, W1, X, Y, Gamma, Pc, normalize=True):
    """``[[Gamma, W1 Y], [(W1 Y)^H, Lin(P)]]``; bounds ``W1 S S^H W1^H``."""
    X, Y = _form(X), _form(Y)
    nv = X.n_global
    rho = _scales(Pc, normalize)
    P = Y + X.lmul(G)
    lin = linearize_quadratic(P, Pc).scale(rho ** -2)
    e = Y.lmul(W1).scale(1 / rho)
    return hermitian_block([[_form(Gamma, nv), None], [e.H, lin]])


def _loopshape(G, Ld, X, Y, bound, Yc, normalize):
    X, Y = _form(X), _form(Y)
    nv = X.n_global
    rho = _scales(Yc, normalize)
    lin = linearize_quadratic(Y, Yc).scale(rho ** -2)
    e = (X.lmul(G) - Y.lmul(Ld)).scale(1 / rho)
    return hermitian_block([[lin, None], [e, _form(bound, nv)]])


def build_loopshape_hinf_block(G, Ld, X, Y, gamma, Yc, normalize=True):
    """``[[Lin_Y, (G X - Ld Y)^H], [G X - Ld Y, g I]]``."""
    return _loopshape(G, Ld, X, Y, _gamma_eye(gamma, G.shape[-2], len(G)), Yc,
                      normalize)


def build_loopshape_h2_block(G, Ld, X, Y, Gamma, Yc, normalize=True):
    """``[[Lin_Y, (G X - Ld Y)^H], [G X - Ld Y, Gamma]]``."""
    return _loopshape(G, Ld, X, Y, Gamma, Yc, normalize)


def build_stability_block(G, X, Y, Pc, normalize=True):
    """``P^H Pc + Pc^H P``, whose positivity keeps the Nyquist winding."""
    X, Y = _form(X), _form(Y)
    rho = _scales(Pc, normalize)
    A = (Y + X.lmul(G)).lmul(_ct(Pc))
    return hermitian_block([[(A + A.H).scale(rho ** -2)]])


def build_detY_block(Y, Yc, normalize=True):
    """``Y^H Yc + Yc^H Y - Yc^H Yc``; positivity implies ``det Y != 0``."""
    rho = _scales(Yc, normalize)
    return hermitian_block([[linearize_quadratic(Y, Yc).scale(rho ** -2)]])


def build_robust_additive_block(G, W1u, W2u, X, Y, Pc, normalize=True):
    """Robust stability block for additive uncertainty ``G + W1u D W2u``.

    With ``P = W1u^-1 (Y + G X)``: ``[[Lin(P), (W2u X)^H], [W2u X, I]]``,
    which bounds ``sigma_max(W2u K S W1u)`` by one.
    """
    X, Y = _form(X), _form(Y)
    cond = np.linalg.cond(W1u)
    bad = np.flatnonzero(~(cond < 1e12))
    if bad.size:
        raise EvaluationError(
            f"uncertainty weight is singular at frequency index {bad[0]}")
    inv = np.linalg.inv(W1u)
    Pw = inv @ Pc
    rho = _scales(Pw, normalize)
    P = (Y + X.lmul(G)).lmul(inv)
    lin = linearize_quadratic(P, Pw).scale(rho ** -2)
    e = X.lmul(W2u).scale(1 / rho)
    eye = _const(np.broadcast_to(np.eye(e.shape[0]),
                                 (e.n_freq,) + (e.shape[0],) * 2), X.n_global)
    return _block2(lin, e, eye)


def build_bound_block(kind, G, W, X, Y, Pc, normalize=True):
    """Hard bound ``sigma_max(W M) < 1`` for ``M`` in ``S``, ``T``, ``U``.

    ``S = Y P^-1``, ``T = G X P^-1`` and ``U = K S = X P^-1``.
    """
    X, Y = _form(X), _form(Y)
    rho = _scales(Pc, normalize)
    P = Y + X.lmul(G)
    lin = linearize_quadratic(P, Pc).scale(rho ** -2)
    if kind == 'S':
        f = Y.lmul(W)
    elif kind == 'T':
        f = X.lmul(G).lmul(W)
    elif kind == 'U':
        f = X.lmul(W)
    else:
        raise InputError(f"unknown bound kind {kind!r}")
    f = f.scale(1 / rho)
    eye = _const(np.broadcast_to(np.eye(f.shape[0]),
                                 (f.n_freq,) + (f.shape[0],) * 2), X.n_global)
    return _block2(lin, f, eye)


# ----------------------------------------------------------------------------
# Problem-level assembly

@dataclass(frozen=True, eq=False)
class DesignSpec:
    """What to minimize and which constraints to impose.

    Parameters
    ----------
    objective : {'hinf-mixed', 'h2', 'ls-hinf', 'ls-h2'}
    w1 : weight, optional
        Performance weight on ``S`` (identity when None).
    w2 : weight, optional
        Weight on ``K S`` for the mixed objective.
    target : weight, optional
        Desired loop ``L_d`` (``n x n``) for loop shaping.
    uncertainty : (weight, weight), optional
        Additive uncertainty filters ``(W1, W2)``; adds robust-stability
        blocks ``sigma_max(W2 K S W1) < 1``.
    bounds : sequence of (kind, weight)
        Hard bounds ``sigma_max(W M) < 1`` with ``kind`` in 'S', 'T', 'U'.
    stability_block : bool
        Add ``P^H Pc + Pc^H P > 0`` (implied by the mixed and H2 blocks).
    det_y_block : bool
        Add the tangent bound that keeps ``det Y`` nonzero on the grid.
    """
    objective: str = 'hinf-mixed'
    w1: object = None
    w2: object = None
    target: object = None
    uncertainty: tuple = None
    bounds: tuple = ()
    stability_block: bool = True
    det_y_block: bool = True

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise InputError(f"unknown objective {self.objective!r}; choose "
                             f"from {', '.join(OBJECTIVES)}")
        if self.objective.startswith('ls') and self.target is None:
            raise InputError("loop shaping needs a target loop")
        object.__setattr__(self, 'bounds', tuple(tuple(b) for b in
                                                 self.bounds))
        for kind, _ in self.bounds:
            if kind not in ('S', 'T', 'U'):
                raise InputError(f"unknown bound kind {kind!r}")

    @property
    def uses_gamma(self):
        return self.objective in ('hinf-mixed', 'ls-hinf')

    @property
    def uses_local(self):
        return self.objective in ('h2', 'ls-h2')


@dataclass(eq=False)
class LinearizationPoint:
    """Numeric data of the current iterate on the full grid.

    ``pc`` has shape ``(q, K, n, n)`` and ``yc`` shape ``(K, n, n)``.
    """
    pc: np.ndarray
    yc: np.ndarray
    xc: np.ndarray


class _Source:
    """Variable source: yields X, Y, gamma and Gamma forms per frequency."""

    def __init__(self, problem, z=None):
        self.problem = problem
        self.z = None if z is None else np.asarray(z, dtype=float)
        if self.z is not None:
            pr = problem
            lay = pr.layout
            params, self.g = lay.split(self.z)
            zx = params[:lay.n_x]
            zy = params[lay.n_x:]
            self.xv = np.einsum('kvrc,v->krc', pr.basis_x, zx)
            self.yv = pr.y_fixed + np.einsum('kvrc,v->krc', pr.basis_y, zy)

    def _glin(self, idx, part, basis):
        lay = self.problem.layout
        K = idx.size
        lin = np.zeros((K, lay.n_global) + basis.shape[2:], complex)
        sl = slice(0, lay.n_x) if part == 'x' else \
            slice(lay.n_x, lay.n_x + lay.n_y)
        lin[:, sl] = basis[idx]
        return lin

    def X(self, idx):
        pr = self.problem
        if self.z is not None:
            return _const(self.xv[idx], 0)
        return AffineForm(np.zeros((idx.size, pr.m, pr.n), complex),
                          self._glin(idx, 'x', pr.basis_x))

    def Y(self, idx):
        pr = self.problem
        if self.z is not None:
            return _const(self.yv[idx], 0)
        return AffineForm(pr.y_fixed[idx].astype(complex),
                          self._glin(idx, 'y', pr.basis_y))

    def gamma(self, idx):
        lay = self.problem.layout
        if self.z is not None:
            return _const(np.full((idx.size, 1, 1), self.g), 0)
        lin = np.zeros((idx.size, lay.n_global, 1, 1), complex)
        lin[:, lay.gamma_index] = 1.0
        return AffineForm(np.zeros((idx.size, 1, 1), complex), lin)

    def Gamma(self, model, idx):
        lay = self.problem.layout
        d = lay.local_dim
        if self.z is not None:
            vals = lay.local_values(self.z, model)[idx]
            return _const(vals, 0)
        basis = np.zeros((lay.n_local, d, d))
        for j, (r, c) in enumerate(lay.tri):
            basis[j, r, c] = basis[j, c, r] = 1.0
        loc = np.broadcast_to(basis, (idx.size,) + basis.shape).astype(complex)
        return AffineForm(np.zeros((idx.size, d, d), complex),
                          np.zeros((idx.size, lay.n_global, d, d), complex),
                          loc, lay.local_start(model, idx))


class FrequencyProblem:
    """All frequency data of one design problem.

    Weights, plant responses and the controller basis are evaluated once on
    the grid.  `families` then produces the LMI block families for a given
    linearization point.

    Parameters
    ----------
    spec : DesignSpec
    frs : FrequencyResponseSet
    structure : ControllerStructure
    weight_scale : float
        Factor applied to the performance weight and to every hard
        constraint weight (used by the relaxation fallback).
    normalize : bool
        Apply the per-frequency congruence scaling.
    """

    def __init__(self, spec, frs, structure, weight_scale=1.0, normalize=True):
        self.spec, self.frs, self.structure = spec, frs, structure
        self.weight_scale = float(weight_scale)
        self.normalize = normalize
        self.grid = grid = frs.grid
        st = structure
        self.n, self.m, self.q = frs.n, frs.m, frs.q
        if (st.m, st.n) != (frs.m, frs.n):
            raise InputError(f"controller is {st.m}x{st.n} but the plant is "
                             f"{frs.n}x{frs.m}")
        if (st.variable == 'z') != grid.discrete:
            raise InputError("controller and grid use different time domains")
        if st.ts is not None and grid.ts is not None and \
                not np.isclose(st.ts, grid.ts, rtol=1e-12):
            raise InputError("controller and grid sampling periods differ")
        K = len(grid)
        self.K = K
        pts = grid.points()
        self.basis_x = st.basis_x(pts)
        self.basis_y, self.y_fixed = st.basis_y(pts)
        self.G = np.asarray(frs.responses)
        n, m = self.n, self.m
        ws = self.weight_scale

        def ev(w, default_size):
            if w is None:
                return np.broadcast_to(np.eye(default_size),
                                       (K, default_size, default_size)
                                       ).astype(complex)
            return evaluate_weight(w, grid, size=default_size)

        self.W1 = ev(spec.w1, n) * ws
        self.W2 = None if spec.w2 is None else ev(spec.w2, m)
        if self.W1.shape[-1] != n:
            raise InputError("performance weight must have n columns")
        if self.W2 is not None and self.W2.shape[-1] != m:
            raise InputError("control weight must have m columns")
        self.Ld = None
        if spec.target is not None:
            self.Ld = ev(spec.target, n)
            if self.Ld.shape[1:] != (n, n):
                raise InputError("target loop must be n x n")
        self.Wu = None
        if spec.uncertainty is not None:
            wu1 = ev(spec.uncertainty[0], n)
            wu2 = ev(spec.uncertainty[1], m) * ws
            if wu1.shape[1:] != (n, n) or wu2.shape[-1] != m:
                raise InputError("uncertainty filters must be n x n and "
                                 "r x m")
            self.Wu = (wu1, wu2)
        self.bounds = []
        for kind, w in spec.bounds:
            cols = m if kind == 'U' else n
            wv = ev(w, cols) * ws
            if wv.shape[-1] != cols:
                raise InputError(f"bound weight on {kind} must have {cols} "
                                 "columns")
            self.bounds.append((kind, wv))
        local_dim = 0
        if spec.objective == 'h2':
            local_dim = self.W1.shape[1]
        elif spec.objective == 'ls-h2':
            local_dim = n
        self.layout = DecisionLayout(st.x_keys, st.y_keys, spec.uses_gamma,
                                     frs.q, K, local_dim)

    def symbolic(self):
        return _Source(self)

    def numeric(self, z):
        return _Source(self, z)

    def linearization(self, ctrl):
        """Evaluate the iterate and build ``P_c`` for every model."""
        xc, yc = ctrl.evaluate(self.grid.points())
        pc = yc[None] + self.G @ xc[None]
        return LinearizationPoint(pc, yc, xc)

    def objective_vector(self, weights=None):
        """Linear objective: ``gamma`` or the weighted sum of traces."""
        lay = self.layout
        c = np.zeros(lay.size)
        if self.spec.uses_gamma:
            c[lay.gamma_index] = 1.0
            return c
        w = np.ones(self.K) if weights is None else np.asarray(weights)
        diag = [j for j, (r, cc) in enumerate(lay.tri) if r == cc]
        for i in range(self.q):
            start = lay.local_start(i, np.arange(self.K))
            for j in diag:
                c[start + j] = w
        return c

    def families(self, lp):
        """Block families of the problem linearized at `lp`."""
        spec, nrm = self.spec, self.normalize
        fams = []
        for i in range(self.q):
            G = self.G[i]
            pc = lp.pc[i]
            if spec.objective == 'hinf-mixed':
                def build(src, idx, G=G, pc=pc):
                    return build_mixed_sens_block(
                        G[idx], self.W1[idx],
                        None if self.W2 is None else self.W2[idx],
                        src.X(idx), src.Y(idx), src.gamma(idx), pc[idx], nrm)
                fams.append(BlockFamily(('mixed', i), self.K, build))
            elif spec.objective == 'h2':
                def build(src, idx, G=G, pc=pc, i=i):
                    return build_h2_block(G[idx], self.W1[idx], src.X(idx),
                                          src.Y(idx), src.Gamma(i, idx),
                                          pc[idx], nrm)
                fams.append(BlockFamily(('h2', i), self.K, build, local=True))
            elif spec.objective == 'ls-hinf':
                def build(src, idx, G=G):
                    g = src.gamma(idx)
                    return build_loopshape_hinf_block(
                        G[idx], self.Ld[idx], src.X(idx), src.Y(idx), g,
                        lp.yc[idx], nrm)
                fams.append(BlockFamily(('ls-hinf', i), self.K, build))
            else:
                def build(src, idx, G=G, i=i):
                    return build_loopshape_h2_block(
                        G[idx], self.Ld[idx], src.X(idx), src.Y(idx),
                        src.Gamma(i, idx), lp.yc[idx], nrm)
                fams.append(BlockFamily(('ls-h2', i), self.K, build,
                                        local=True))
            if spec.stability_block:
                def build(src, idx, G=G, pc=pc):
                    return build_stability_block(G[idx], src.X(idx),
                                                 src.Y(idx), pc[idx], nrm)
                fams.append(BlockFamily(('stability', i), self.K, build))
            if self.Wu is not None:
                def build(src, idx, G=G, pc=pc):
                    return build_robust_additive_block(
                        G[idx], self.Wu[0][idx], self.Wu[1][idx], src.X(idx),
                        src.Y(idx), pc[idx], nrm)
                fams.append(BlockFamily(('robust', i), self.K, build))
            for j, (kind, W) in enumerate(self.bounds):
                def build(src, idx, G=G, pc=pc, kind=kind, W=W):
                    return build_bound_block(kind, G[idx], W[idx], src.X(idx),
                                             src.Y(idx), pc[idx], nrm)
                fams.append(BlockFamily(('bound', i, j), self.K, build))
        if spec.det_y_block:
            def build(src, idx):
                return build_detY_block(src.Y(idx), lp.yc[idx], nrm)
            fams.append(BlockFamily(('detY',), self.K, build))
        return fams


def replicate_multimodel(spec, frs, structure, ctrl, **kw):
    """Block families for every model of `frs`, linearized at `ctrl`."""
    pr = FrequencyProblem(spec, frs, structure, **kw)
    return pr, pr.families(pr.linearization(ctrl))
