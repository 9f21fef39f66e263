"""Affine matrix forms, real embedding of Hermitian LMIs and the SDP backend.

Constraint blocks are complex Hermitian matrices that depend affinely on a
real decision vector.  They are stored batched over frequencies as
`AffineForm` objects, embedded into real symmetric matrices of twice the
size, and handed to CVXOPT's primal-dual interior-point SDP solver as one
PSD cone per block.

The solver only ever sees a subset of the frequency-dependent blocks.
`solve_generated` adds the most violated blocks of every family until the
relaxed optimum satisfies all of them, which makes it an optimum of the
full problem.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import AssemblyError

__all__ = [
    'AffineForm', 'DecisionLayout', 'BlockFamily', 'RealBlock',
    'RealLmiSystem', 'SdpSettings', 'SdpSolution', 'assemble',
    'hermitian_block', 'hermitian_to_real', 'solve', 'solve_generated',
    'write_sdpa',
]

log = logging.getLogger(__name__)


def _ct(a):
    return np.conj(np.swapaxes(a, -1, -2))


class AffineForm:
    """Matrix-valued affine function of the decision vector, per frequency.

    The value at frequency ``k`` is::

        const[k] + sum_v z[v] lin[k, v] + sum_j z[loc_start[k] + j] loc[k, j]

    where ``lin`` covers the global variables ``z[:n_global]`` and ``loc``
    the variables private to frequency ``k`` (absent when None).
    """
    __slots__ = ('const', 'lin', 'loc', 'loc_start')

    def __init__(self, const, lin, loc=None, loc_start=None):
        self.const = const
        self.lin = lin
        self.loc = loc
        self.loc_start = loc_start

    @classmethod
    def constant(cls, values, n_global):
        values = np.asarray(values, dtype=complex)
        K = values.shape[0]
        return cls(values, np.zeros((K, n_global) + values.shape[1:], complex))

    @property
    def n_freq(self):
        return self.const.shape[0]

    @property
    def shape(self):
        return self.const.shape[1:]

    @property
    def n_global(self):
        return self.lin.shape[1]

    def _combine_loc(self, other, sign):
        if other.loc is None:
            return self.loc, self.loc_start
        if self.loc is None:
            return sign * other.loc, other.loc_start
        if not np.array_equal(self.loc_start, other.loc_start):
            raise AssemblyError("cannot add forms with different local "
                                "variables")
        return self.loc + sign * other.loc, self.loc_start

    def __add__(self, other):
        if not isinstance(other, AffineForm):
            return AffineForm(self.const + other, self.lin, self.loc,
                              self.loc_start)
        loc, start = self._combine_loc(other, 1)
        return AffineForm(self.const + other.const, self.lin + other.lin,
                          loc, start)

    def __sub__(self, other):
        if not isinstance(other, AffineForm):
            return AffineForm(self.const - other, self.lin, self.loc,
                              self.loc_start)
        loc, start = self._combine_loc(other, -1)
        return AffineForm(self.const - other.const, self.lin - other.lin,
                          loc, start)

    def __neg__(self):
        return AffineForm(-self.const, -self.lin,
                          None if self.loc is None else -self.loc,
                          self.loc_start)

    def _map(self, fn, fn_b):
        return AffineForm(fn(self.const), fn_b(self.lin),
                          None if self.loc is None else fn_b(self.loc),
                          self.loc_start)

    def lmul(self, a):
        """``A @ form`` for a numeric ``A`` of shape ``(K, r', r)``."""
        a = np.asarray(a)
        if a.ndim == 2:
            a = np.broadcast_to(a, (self.n_freq,) + a.shape)
        ab = a[:, None]
        return self._map(lambda c: a @ c, lambda v: ab @ v)

    def rmul(self, b):
        """``form @ B`` for a numeric ``B`` of shape ``(K, c, c')``."""
        b = np.asarray(b)
        if b.ndim == 2:
            b = np.broadcast_to(b, (self.n_freq,) + b.shape)
        bb = b[:, None]
        return self._map(lambda c: c @ b, lambda v: v @ bb)

    def scale(self, s):
        """Multiply by a real scalar per frequency (shape ``(K,)``)."""
        s = np.asarray(s, dtype=float)
        if s.ndim == 0:
            s = np.full(self.n_freq, float(s))
        return self._map(lambda c: c * s[:, None, None],
                         lambda v: v * s[:, None, None, None])

    @property
    def H(self):
        """Conjugate transpose (exact)."""
        return self._map(_ct, _ct)

    def herm(self):
        """Hermitian part ``(F + F^H) / 2``; exactly Hermitian."""
        return self._map(lambda c: (c + _ct(c)) / 2, lambda v: (v + _ct(v)) / 2)

    def take(self, idx):
        idx = np.asarray(idx)
        return AffineForm(self.const[idx], self.lin[idx],
                          None if self.loc is None else self.loc[idx],
                          None if self.loc_start is None else
                          self.loc_start[idx])

    def evaluate(self, z):
        """Numeric value for a full decision vector `z`; ``(K, r, c)``."""
        z = np.asarray(z, dtype=float)
        out = self.const + np.einsum('kvrc,v->krc', self.lin,
                                     z[:self.n_global])
        if self.loc is not None:
            nl = self.loc.shape[1]
            zl = z[self.loc_start[:, None] + np.arange(nl)]
            out = out + np.einsum('kvrc,kv->krc', self.loc, zl)
        return out


def hermitian_block(lower):
    """Assemble a Hermitian block matrix from its lower triangle.

    `lower[i][j]` (``j <= i``) is an `AffineForm` or None for a zero block;
    diagonal entries are made exactly Hermitian and the strict upper
    triangle is the exact conjugate transpose of the lower one.
    """
    nb = len(lower)
    sizes = [None] * nb
    ref = None
    for i in range(nb):
        for j in range(i + 1):
            f = lower[i][j]
            if f is None:
                continue
            ref = ref or f
            r, c = f.shape
            for k, s in ((i, r), (j, c)):
                if sizes[k] is not None and sizes[k] != s:
                    raise AssemblyError("inconsistent block sizes")
                sizes[k] = s
    if ref is None or None in sizes:
        raise AssemblyError("cannot infer block sizes")
    off = np.concatenate([[0], np.cumsum(sizes)])
    D = int(off[-1])
    K, nv = ref.n_freq, ref.n_global
    const = np.zeros((K, D, D), complex)
    lin = np.zeros((K, nv, D, D), complex)
    loc, start = None, None
    for i in range(nb):
        for j in range(i + 1):
            f = lower[i][j]
            if f is None:
                continue
            if i == j:
                f = f.herm()
            parts = [(f, slice(off[i], off[i + 1]), slice(off[j], off[j + 1]))]
            if i != j:
                parts.append((f.H, slice(off[j], off[j + 1]),
                              slice(off[i], off[i + 1])))
            for g, rs, cs in parts:
                const[:, rs, cs] = g.const
                lin[:, :, rs, cs] = g.lin
                if g.loc is not None:
                    if loc is None:
                        loc = np.zeros((K, g.loc.shape[1], D, D), complex)
                        start = g.loc_start
                    elif not np.array_equal(start, g.loc_start):
                        raise AssemblyError("block mixes local variables of "
                                            "different frequencies")
                    loc[:, :, rs, cs] = g.loc
    return AffineForm(const, lin, loc, start)


def _embed(m):
    a, b = m.real, m.imag
    top = np.concatenate([a, -b], axis=-1)
    bot = np.concatenate([b, a], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def hermitian_to_real(h, rtol=1e-10):
    """Real symmetric embedding ``[[A, -B], [B, A]]`` of ``H = A + jB``.

    Works on numeric arrays (last two axes) and on `AffineForm` objects.
    Raises `AssemblyError` when the input is not Hermitian to `rtol`.
    """
    if isinstance(h, AffineForm):
        arrays = [h.const, h.lin] + ([] if h.loc is None else [h.loc])
    else:
        arrays = [np.asarray(h, dtype=complex)]
    for a in arrays:
        scale = max(1.0, float(np.abs(a).max(initial=0.0)))
        if np.abs(a - _ct(a)).max(initial=0.0) > rtol * scale:
            raise AssemblyError("matrix is not Hermitian")
    if isinstance(h, AffineForm):
        sym = h.herm()
        return AffineForm(_embed(sym.const), _embed(sym.lin),
                          None if h.loc is None else _embed(sym.loc),
                          h.loc_start)
    a = arrays[0]
    return _embed((a + _ct(a)) / 2)


# ----------------------------------------------------------------------------
# Decision vector

class DecisionLayout:
    """Index map of the decision vector.

    Order: free X coefficients, free Y coefficients, the scalar bound (if
    any), then per-model, per-frequency symmetric matrices (upper-triangle
    entries, row-major) when the objective uses them.
    """

    def __init__(self, x_keys, y_keys, gamma=True, n_models=0, n_freq=0,
                 local_dim=0):
        self.x_keys = list(x_keys)
        self.y_keys = list(y_keys)
        self.has_gamma = bool(gamma)
        self.n_models = int(n_models) if local_dim else 0
        self.n_freq = int(n_freq)
        self.local_dim = int(local_dim)
        self.tri = [(r, c) for r in range(self.local_dim)
                    for c in range(r, self.local_dim)]
        self.n_x = len(self.x_keys)
        self.n_y = len(self.y_keys)
        self.n_global = self.n_x + self.n_y + self.has_gamma
        self.n_local = len(self.tri)
        self.size = self.n_global + self.n_models * self.n_freq * self.n_local
        keys = [('X',) + k for k in self.x_keys] + \
            [('Y',) + k for k in self.y_keys]
        if self.has_gamma:
            keys.append(('gamma',))
        for i in range(self.n_models):
            for k in range(self.n_freq):
                keys += [('Gamma', i, k, r, c) for r, c in self.tri]
        self.keys = keys
        self.index = {key: v for v, key in enumerate(keys)}

    @property
    def gamma_index(self):
        return self.n_x + self.n_y if self.has_gamma else None

    def local_start(self, model, k):
        return self.n_global + (model * self.n_freq + np.asarray(k)) \
            * self.n_local

    def split(self, z):
        """``(controller parameters, gamma or None)``."""
        z = np.asarray(z, dtype=float)
        g = z[self.gamma_index] if self.has_gamma else None
        return z[:self.n_x + self.n_y], g

    def local_values(self, z, model):
        """Symmetric matrices of one model, shape ``(n_freq, d, d)``."""
        d = self.local_dim
        start = self.local_start(model, 0)
        flat = np.asarray(z)[start:start + self.n_freq * self.n_local]
        flat = flat.reshape(self.n_freq, self.n_local)
        out = np.zeros((self.n_freq, d, d))
        for j, (r, c) in enumerate(self.tri):
            out[:, r, c] = flat[:, j]
            out[:, c, r] = flat[:, j]
        return out


# ----------------------------------------------------------------------------
# Real LMI system

@dataclass(eq=False)
class RealBlock:
    """``const + sum_v z[v] F_v >= delta I`` in lower-triangle triplets.

    ``entry`` holds column-major positions ``i + j*dim`` (``i >= j``) and
    ``var`` the decision index of each coefficient ``value``.
    """
    tag: tuple
    dim: int
    const: np.ndarray
    entry: np.ndarray
    var: np.ndarray
    value: np.ndarray


@dataclass(eq=False)
class RealLmiSystem:
    """Real block-diagonal LMI with a linear objective.

    Variables with index ``>= n_global`` are local: each appears in a
    single block.
    """
    blocks: list
    objective: np.ndarray
    n_global: int = None

    def __post_init__(self):
        if self.n_global is None:
            self.n_global = self.objective.size

    @property
    def n_var(self):
        return self.objective.size

    def evaluate(self, z):
        """Dense value of every block at `z` (lower triangle mirrored)."""
        out = []
        for b in self.blocks:
            flat = np.zeros(b.dim * b.dim)
            np.add.at(flat, b.entry, b.value * np.asarray(z)[b.var])
            m = b.const + flat.reshape(b.dim, b.dim, order='F')
            out.append(np.tril(m) + np.tril(m, -1).T)
        return out


def _tril_positions(dim):
    j, i = np.triu_indices(dim)      # i >= j after the swap
    return i, j, i + j * dim


def assemble(forms, objective):
    """Build a `RealLmiSystem` from tagged Hermitian `AffineForm` batches.

    `forms` is a list of ``(tag, frequency_indices, form)``; every frequency
    of every form becomes one real block with tag ``tag + (k,)``.
    """
    objective = np.asarray(objective, dtype=float)
    blocks = []
    n_global = objective.size
    for tag, idx, form in forms:
        if form.loc is not None:
            n_global = min(n_global, form.n_global)
        real = hermitian_to_real(form)
        dim = real.shape[0]
        ii, jj, pos = _tril_positions(dim)
        glin = real.lin[:, :, ii, jj]             # (K, nv, T)
        if form.n_global > objective.size:
            raise AssemblyError("form refers to variables beyond the layout")
        for k in range(real.n_freq):
            vv, tt = np.nonzero(glin[k])
            entry, var, val = [pos[tt]], [vv], [glin[k, vv, tt]]
            if real.loc is not None:
                ll = real.loc[k][:, ii, jj]
                lv, lt = np.nonzero(ll)
                entry.append(pos[lt])
                var.append(real.loc_start[k] + lv)
                val.append(ll[lv, lt])
            entry = np.concatenate(entry)
            order = np.lexsort((np.concatenate(var), entry))
            blocks.append(RealBlock(
                tuple(tag) + (int(idx[k]),), dim, real.const[k],
                entry[order], np.concatenate(var)[order],
                np.concatenate(val)[order]))
    return RealLmiSystem(blocks, objective, n_global)


def write_sdpa(path, system, delta=0.0):
    """Dump a system in SDPA sparse format (``sum x_i F_i - F_0 >= 0``)."""
    lines = [f"* {len(system.blocks)} blocks", str(system.n_var),
             str(len(system.blocks)),
             " ".join(str(b.dim) for b in system.blocks),
             " ".join(repr(float(c)) for c in system.objective)]
    for nb, b in enumerate(system.blocks, start=1):
        f0 = -(b.const - delta * np.eye(b.dim))
        i, j = np.nonzero(np.triu(f0))
        for r, c in zip(i, j):
            lines.append(f"0 {nb} {r + 1} {c + 1} {float(f0[r, c])!r}")
        # stored lower (i >= j) triplets map to upper entries (j, i)
        for e, v, val in zip(b.entry, b.var, b.value):
            r, c = int(e % b.dim), int(e // b.dim)
            lines.append(f"{v + 1} {nb} {c + 1} {r + 1} {float(val)!r}")
    with open(path, 'w') as f:
        f.write("\n".join(lines) + "\n")


# ----------------------------------------------------------------------------
# Solving

@dataclass
class SdpSettings:
    """Backend options.

    ``delta`` is the strictness margin (blocks must be ``>= delta I``) and
    ``tol`` the solver's absolute/relative/feasibility tolerance.
    """
    delta: float = 1e-8
    tol: float = 1e-8
    max_iters: int = 60
    refinement: int = 2
    backend: str = 'cvxopt'
    audit_tol: float = 1e-8
    seed_points: int = 40
    add_per_round: int = 20
    max_rounds: int = 40


@dataclass(eq=False)
class SdpSolution:
    """Outcome of one SDP solve.

    ``status`` is 'optimal', 'infeasible' or 'numerical_failure';
    ``worst_eig`` is the smallest eigenvalue over all audited blocks (the
    margin ``delta`` is not subtracted).
    """
    status: str
    x: np.ndarray = None
    objective: float = None
    worst_eig: float = None
    inaccurate: bool = False
    info: dict = field(default_factory=dict)


class _BlockKkt:
    """KKT solver for CVXOPT's cone LP exploiting the block structure.

    Every PSD block depends on the global variables and on local variables
    of its own.  The normal matrix ``sum_b G_b' W_b^-1 W_b^-T G_b`` is built
    with batched numpy products and the local variables are eliminated
    block by block before a dense Cholesky factorization of the global
    Schur complement.
    """

    def __init__(self, blocks, remap, n_glob):
        locs = [np.unique(c[c >= n_glob]) for c in (remap[b.var]
                                                    for b in blocks)]
        flat = np.concatenate(locs) if locs else np.array([], dtype=int)
        if np.unique(flat).size != flat.size:
            # shared local variables: treat everything as global
            n_glob = int(remap.max()) + 1
        self.ng = n_glob
        groups = {}
        off = 0
        for pos, b in enumerate(blocks):
            cols = remap[b.var]
            loc = np.unique(cols[cols >= n_glob])
            key = (b.dim, loc.size)
            groups.setdefault(key, []).append((pos, off, b, cols, loc))
            off += b.dim * b.dim
        self.groups = []
        for (D, nl), items in sorted(groups.items()):
            B = len(items)
            gg = np.zeros((B, self.ng, D, D))
            gl = np.zeros((B, nl, D, D))
            lidx = np.zeros((B, nl), dtype=int)
            for t, (_, _, b, cols, loc) in enumerate(items):
                r, c = b.entry % D, b.entry // D
                glob = cols < n_glob
                v = -b.value
                gg[t, cols[glob], r[glob], c[glob]] = v[glob]
                gg[t, cols[glob], c[glob], r[glob]] = v[glob]
                if nl:
                    lc = np.searchsorted(loc, cols[~glob])
                    gl[t, lc, r[~glob], c[~glob]] = v[~glob]
                    gl[t, lc, c[~glob], r[~glob]] = v[~glob]
                    lidx[t] = loc
            pos = np.array([it[0] for it in items])
            zoff = np.array([it[1] for it in items])
            zidx = zoff[:, None] + np.arange(D * D)
            self.groups.append(dict(D=D, nl=nl, gg=gg, gl=gl, lidx=lidx,
                                    pos=pos, zidx=zidx))

    def __call__(self, W):
        rti = W['rti']
        ng = self.ng
        S = np.zeros((ng, ng))
        facts = []
        for g in self.groups:
            R = np.stack([np.array(rti[p]) for p in g['pos']])
            RT = np.swapaxes(R, 1, 2)[:, None]
            hg = RT @ g['gg'] @ R[:, None]              # (B, ng, D, D)
            hg = 0.5 * (hg + np.swapaxes(hg, 2, 3))
            B, D = R.shape[0], g['D']
            fg = hg.reshape(B, ng, D * D)
            F = np.swapaxes(fg, 0, 1).reshape(ng, -1)
            S += F @ F.T
            entry = {'R': R, 'fg': fg, 'fl': None}
            if g['nl']:
                hl = RT @ g['gl'] @ R[:, None]
                hl = 0.5 * (hl + np.swapaxes(hl, 2, 3))
                fl = hl.reshape(B, g['nl'], D * D)
                hgl = fg @ np.swapaxes(fl, 1, 2)            # (B, ng, nl)
                hll = fl @ np.swapaxes(fl, 1, 2)
                try:
                    np.linalg.cholesky(hll)
                except np.linalg.LinAlgError:
                    raise ArithmeticError("singular local KKT block") from None
                t = np.linalg.solve(hll, np.swapaxes(hgl, 1, 2))
                S -= np.einsum('bgl,blh->gh', hgl, t)
                entry.update(fl=fl, hll=hll, hgl=hgl)
            facts.append(entry)
        if ng:
            try:
                L = scipy.linalg.cho_factor(S, lower=True)
            except np.linalg.LinAlgError:
                raise ArithmeticError("singular KKT system") from None

        def solve(x, y, z):
            xv = np.asarray(memoryview(x)).ravel()
            zv = np.asarray(memoryview(z)).ravel()
            rhs = xv.copy()
            scaled = []
            for g, f in zip(self.groups, facts):
                D = g['D']
                Z = zv[g['zidx']].reshape(-1, D, D).swapaxes(1, 2)
                Z = np.tril(Z) + np.swapaxes(np.tril(Z, -1), 1, 2)
                bz = np.swapaxes(f['R'], 1, 2) @ Z @ f['R']
                bz = (0.5 * (bz + np.swapaxes(bz, 1, 2))).reshape(-1, D * D)
                scaled.append(bz)
                rhs[:ng] += (f['fg'] @ bz[..., None]).sum(axis=0)[:, 0]
                if f['fl'] is not None:
                    np.add.at(rhs, g['lidx'],
                              (f['fl'] @ bz[..., None])[..., 0])
            # eliminate local variables
            red = rhs[:ng].copy()
            sol_loc = []
            for g, f in zip(self.groups, facts):
                if f['fl'] is None:
                    sol_loc.append(None)
                    continue
                xl = rhs[g['lidx']]
                w = np.linalg.solve(f['hll'], xl[..., None])[..., 0]
                red -= (f['hgl'] @ w[..., None]).sum(axis=0)[:, 0]
                sol_loc.append(xl)
            ug = scipy.linalg.cho_solve(L, red) if ng else red
            out = np.zeros_like(xv)
            out[:ng] = ug
            for g, f, xl in zip(self.groups, facts, sol_loc):
                if xl is None:
                    continue
                r = xl - ug @ f['hgl']
                out[g['lidx']] = np.linalg.solve(f['hll'], r[..., None])[..., 0]
            xv[:] = out
            for g, f, bz in zip(self.groups, facts, scaled):
                uz = out[:ng] @ f['fg'] - bz
                if f['fl'] is not None:
                    uz += (out[g['lidx']][:, None, :] @ f['fl'])[:, 0]
                D = g['D']
                M = uz.reshape(-1, D, D)
                M = 0.5 * (M + np.swapaxes(M, 1, 2))
                zv[g['zidx']] = M.reshape(-1, D * D)
        return solve


def _cvxopt_solve(system, settings):
    import cvxopt
    from cvxopt import matrix, solvers, spmatrix

    n = system.n_var
    used = np.zeros(n, dtype=bool)
    for b in system.blocks:
        used[b.var] = True
    # variables absent from every block are fixed at zero
    cols = np.flatnonzero(used)
    remap = -np.ones(n, dtype=int)
    remap[cols] = np.arange(cols.size)
    if np.any(system.objective[~used] != 0):
        return SdpSolution('numerical_failure',
                           info={'reason': 'objective variable unconstrained'})
    # equilibrate the variable columns (an exact change of variables)
    colnorm = np.zeros(n)
    for b in system.blocks:
        np.add.at(colnorm, b.var, b.value ** 2)
    scale = np.sqrt(colnorm[cols])
    scale[scale == 0] = 1.0
    c = system.objective[cols] / scale
    blocks = []
    for b in system.blocks:
        blocks.append(RealBlock(b.tag, b.dim, b.const, b.entry, b.var,
                                b.value / scale[remap[b.var]]))
    Gs, hs = [], []
    for b in blocks:
        Gs.append(spmatrix((-b.value).tolist(), b.entry.tolist(),
                           remap[b.var].tolist(), (b.dim * b.dim, cols.size)))
        hs.append(matrix(b.const - settings.delta * np.eye(b.dim)))
    opts = {'show_progress': False, 'abstol': settings.tol,
            'reltol': settings.tol, 'feastol': settings.tol,
            'maxiters': settings.max_iters, 'refinement': settings.refinement}
    kw = {'options': opts}
    if settings.backend == 'dsdp':
        kw['solver'] = 'dsdp'
        cvxopt.solvers.options['dsdp'] = {'DSDP_Monitor': 0}
    elif settings.backend == 'cvxopt-chol':
        kw['kktsolver'] = 'chol'
    else:
        n_glob = int(np.count_nonzero(used[:system.n_global]))
        kw['kktsolver'] = _BlockKkt(blocks, remap, n_glob)
    try:
        sol = solvers.sdp(matrix(c), Gs=Gs, hs=hs, **kw)
    except (ValueError, ArithmeticError) as exc:
        return SdpSolution('numerical_failure', info={'reason': str(exc)})
    status = sol['status']
    x = np.zeros(n)
    if sol['x'] is not None:
        x[cols] = np.array(sol['x']).ravel() / scale
    info = {k: sol.get(k) for k in ('status', 'gap', 'relative gap',
                                     'primal infeasibility',
                                     'dual infeasibility', 'iterations')}
    if status == 'optimal':
        return SdpSolution('optimal', x, float(system.objective @ x), info=info)
    if status == 'primal infeasible':
        return SdpSolution('infeasible', info=info)
    if status == 'unknown' and sol['x'] is not None:
        # accepted only if the caller's eigenvalue audit passes
        rgap = sol.get('relative gap')
        gap = sol.get('gap')
        if (rgap is not None and rgap < 1e-6) or (gap is not None and
                                                   gap < 1e-7):
            return SdpSolution('unknown', x, float(system.objective @ x),
                               inaccurate=True, info=info)
    return SdpSolution('numerical_failure', info=info)


def solve(system, settings=None):
    """Solve a `RealLmiSystem`; audit the result against every block."""
    settings = settings or SdpSettings()
    if settings.backend not in ('cvxopt', 'cvxopt-chol', 'dsdp'):
        raise ValueError(f"unknown backend {settings.backend!r}")
    if not system.blocks:
        raise AssemblyError("empty LMI system")
    sol = _cvxopt_solve(system, settings)
    if sol.status in ('optimal', 'unknown'):
        sol.worst_eig = min(float(np.linalg.eigvalsh(m)[0])
                            for m in system.evaluate(sol.x))
        if sol.worst_eig < -10 * settings.tol:
            sol.status = 'numerical_failure'
            sol.info['reason'] = f"audit failed ({sol.worst_eig:.3g})"
        else:
            sol.status = 'optimal'
    return sol


@dataclass(eq=False)
class BlockFamily:
    """A frequency-indexed family of Hermitian blocks.

    ``build(source, idx)`` returns an `AffineForm` over the frequencies
    `idx`; `source` is either a symbolic variable source or a numeric one.
    Families with ``local=True`` carry per-frequency variables and are
    always included in full.
    """
    tag: tuple
    n_freq: int
    build: object
    local: bool = False


def _seed_indices(K, count):
    if K <= count:
        return np.arange(K)
    return np.unique(np.round(np.linspace(0, K - 1, count)).astype(int))


def _worst_points(eigs, threshold, limit):
    """Indices of violated local minima of a per-frequency eigenvalue curve."""
    bad = eigs < threshold
    if not bad.any():
        return np.array([], dtype=int)
    left = np.concatenate([[np.inf], eigs[:-1]])
    right = np.concatenate([eigs[1:], [np.inf]])
    cand = np.flatnonzero(bad & (eigs <= left) & (eigs <= right))
    if cand.size == 0:
        cand = np.flatnonzero(bad)
    return cand[np.argsort(eigs[cand], kind='stable')][:limit]


def solve_generated(families, objective, symbolic, numeric, settings=None,
                    active=None):
    """Solve an LMI problem over frequency families by constraint generation.

    Parameters
    ----------
    families : list of BlockFamily
    objective : ndarray
        Linear objective over the full decision vector.
    symbolic : object
        Variable source for building affine blocks.
    numeric : callable
        ``numeric(z)`` returns a numeric variable source for auditing.
    active : dict, optional
        Initial frequency subsets per family tag (e.g. from the previous
        iteration); updated in place with the final active sets.

    Returns
    -------
    SdpSolution
        ``info['active']`` holds the final subsets and ``info['rounds']``
        the number of solver calls.
    """
    settings = settings or SdpSettings()
    active = {} if active is None else active
    sets = {}
    for fam in families:
        if fam.local:
            sets[fam.tag] = np.arange(fam.n_freq)
        else:
            seed = _seed_indices(fam.n_freq, settings.seed_points)
            prev = active.get(fam.tag, np.array([], dtype=int))
            sets[fam.tag] = np.union1d(seed, prev).astype(int)
    cache = {}
    rounds = 0
    while True:
        rounds += 1
        forms = []
        for fam in families:
            idx = sets[fam.tag]
            have = cache.get(fam.tag)
            if have is None or not np.array_equal(have[0], idx):
                cache[fam.tag] = (idx, fam.build(symbolic, idx))
            forms.append((fam.tag, idx, cache[fam.tag][1]))
        system = assemble(forms, objective)
        sol = _cvxopt_solve(system, settings)
        sol.info['rounds'] = rounds
        if sol.status not in ('optimal', 'unknown'):
            return sol
        src = numeric(sol.x)
        worst = np.inf
        grew = False
        for fam in families:
            idx_all = np.arange(fam.n_freq)
            vals = fam.build(src, idx_all).const
            eigs = np.linalg.eigvalsh(vals)[:, 0]
            worst = min(worst, float(eigs.min()))
            if fam.local:
                continue
            add = _worst_points(eigs, -settings.audit_tol,
                                settings.add_per_round)
            add = np.setdiff1d(add, sets[fam.tag])
            if rounds >= settings.max_rounds:
                add = np.setdiff1d(np.flatnonzero(eigs < -settings.audit_tol),
                                   sets[fam.tag])
            if add.size:
                sets[fam.tag] = np.union1d(sets[fam.tag], add)
                grew = True
        sol.worst_eig = worst
        log.debug("round %d: objective %.10g, worst eigenvalue %.3g",
                  rounds, sol.objective, worst)
        if not grew:
            if worst < -10 * settings.tol:
                sol.status = 'numerical_failure'
                sol.info['reason'] = f"audit failed ({worst:.3g})"
            else:
                sol.status = 'optimal'
            active.update(sets)
            sol.info['active'] = {k: v.copy() for k, v in sets.items()}
            return sol
