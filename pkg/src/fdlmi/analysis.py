"""Independent verification of designed controllers.

The stability certificate counts encirclements of the origin by
``F = det(I + G K)`` along the Nyquist contour and compares the count with
the number of unstable open-loop poles.  Writing ``F = det P / det Y`` with
``P = Y + G X``, the phase of ``det Y`` is computed exactly from its roots
(including detours around roots on the stability boundary) and only the
phase of the smooth function ``det P`` is tracked numerically on a dense
frequency grid.  Between measured frequencies the plant response is
linearly interpolated, so the verdict is certified on the grid, not on the
continuum.  Where a cubic-spline interpolant of the same data could give a
different winding, the data are too sparse and the verdict is
inconclusive.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .controller import poly_det_coeffs
from .exceptions import WindingError
from .freqdata import FrequencyGrid, evaluate_weight, interpolate_complex

__all__ = [
    'ClosedLoopEval', 'ModelCertificate', 'StabilityCertificate',
    'achieved_h2', 'achieved_hinf', 'certify_stability', 'closed_loop',
    'dense_omega', 'det_roots', 'format_report', 'winding_number',
]

TWO_PI = 2 * np.pi


def _wrap(a):
    """Map angles to ``[-pi, pi)``."""
    return (np.asarray(a) + np.pi) % TWO_PI - np.pi


def winding_number(values, max_step=np.pi / 2, clearance=1e-12):
    """Encirclements of the origin by a closed sampled curve.

    `values` are samples of a closed curve (the last point is joined to
    the first).  Raises `WindingError` when the curve passes within
    `clearance` of the origin or when a phase step reaches `max_step`.
    """
    v = np.asarray(values, dtype=complex).ravel()
    if v.size == 0:
        raise WindingError("empty curve")
    mag = np.abs(v)
    if mag.min() <= clearance:
        raise WindingError(f"curve passes through the origin "
                           f"(|F| = {mag.min():.3g})")
    steps = _wrap(np.diff(np.angle(np.append(v, v[0]))))
    if np.abs(steps).max() >= max_step:
        raise WindingError("phase step too large; refine the sampling")
    return int(np.round(steps.sum() / TWO_PI))


def dense_omega(omega, factor):
    """Insert ``factor - 1`` geometric points into every grid interval."""
    omega = np.asarray(omega, dtype=float)
    factor = int(factor)
    if factor <= 1 or omega.size < 2:
        return omega.copy()
    t = np.arange(factor) / factor
    lo, hi = omega[:-1, None], omega[1:, None]
    inner = lo * (hi / lo) ** t
    return np.append(inner.ravel(), omega[-1])


def _refine(omega, bad):
    """Insert midpoints into the intervals ``[omega[i], omega[i+1]]``."""
    mids = np.sqrt(omega[bad] * omega[bad + 1])
    return np.sort(np.concatenate([omega, mids]))


# ----------------------------------------------------------------------------
# Roots of det Y and their exact phase contributions

def det_roots(ctrl, rtol=1e-9):
    """Roots of ``det Y`` for the full denominator ``Y~ o F_y``."""
    Y = ctrl.Y
    c = poly_det_coeffs(Y)
    scale = np.abs(c).max()
    if scale == 0:
        raise WindingError("det Y vanishes identically")
    nz = np.flatnonzero(np.abs(c) > rtol * scale)
    c = c[:nz[-1] + 1]
    return np.roots(c[::-1]), c.size - 1


def _classify_roots(roots, discrete, ts, boundary, btol=1e-3, ntol=1e-6):
    """Split roots into inside, outside and boundary (mapped to exact points).

    Returns ``(inside, outside, boundary_points, ambiguous)`` where the
    boundary points are exact points on the stability boundary.
    """
    inside, outside, bnd = [], [], []
    ambiguous = False
    if discrete:
        targets = np.exp(1j * np.concatenate([boundary, -np.asarray(boundary)])
                         * ts) if len(boundary) else np.array([])
    else:
        targets = 1j * np.concatenate([boundary, -np.asarray(boundary)]) \
            if len(boundary) else np.array([])
    for r in roots:
        if targets.size:
            d = np.abs(targets - r)
            j = int(np.argmin(d))
            if d[j] < btol * max(1.0, abs(targets[j])):
                bnd.append(targets[j])
                continue
        dist = abs(abs(r) - 1) if discrete else abs(r.real)
        if dist < ntol * max(1.0, abs(r)):
            ambiguous = True
        if (abs(r) < 1) if discrete else (r.real < 0):
            inside.append(r)
        else:
            outside.append(r)
    return (np.array(inside, complex), np.array(outside, complex),
            np.array(bnd, complex), ambiguous)


def _crossings(phi, a, b):
    """Number of angles ``phi + 2 pi k`` inside the open interval (a, b)."""
    k_lo = np.floor((a - phi) / TWO_PI) + 1
    k_hi = np.ceil((b - phi) / TWO_PI) - 1
    return np.maximum(k_hi - k_lo + 1, 0)


def _phase_change_disc(inside, outside, bnd, ta, tb):
    """Exact phase change of ``prod (z - r)`` along the arc ``ta -> tb``."""
    total = 0.0
    if inside.size:
        fa = np.angle(1 - inside * np.exp(-1j * ta))
        fb = np.angle(1 - inside * np.exp(-1j * tb))
        total += inside.size * (tb - ta) + _wrap(fb - fa).sum()
    if outside.size:
        fa = np.angle(1 - np.exp(1j * ta) / outside)
        fb = np.angle(1 - np.exp(1j * tb) / outside)
        total += _wrap(fb - fa).sum()
    if bnd.size:
        phi = np.angle(bnd)
        total += bnd.size * (tb - ta) / 2 + np.pi * _crossings(phi, ta, tb).sum()
    return float(total)


def _phase_change_cont(inside, outside, bnd, wa, wb):
    """Exact phase change of ``prod (s - r)`` along ``j wa -> j wb``."""
    roots = np.concatenate([inside, outside])
    total = 0.0
    if roots.size:
        total += _wrap(np.angle(1j * wb - roots) -
                       np.angle(1j * wa - roots)).sum()
    if bnd.size:
        w0 = bnd.imag
        total += np.pi * np.count_nonzero((w0 > wa) & (w0 < wb))
    return float(total)


# ----------------------------------------------------------------------------
# Certificate

@dataclass
class ModelCertificate:
    """Certificate of one plant model.

    ``verdict`` is 'stable', 'unstable' or 'inconclusive'.
    """
    model: int
    verdict: str
    winding: int = None
    required: int = None
    clearance: float = None
    unstable_plant_poles: int = 0
    note: str = ''
    min_re_eig: float = None


@dataclass
class StabilityCertificate:
    """Nyquist certificate for every model plus structural diagnostics."""
    models: list
    det_degree: int
    unstable_controller_poles: int
    dense_points: int
    conditions: dict = field(default_factory=dict)

    @property
    def stable(self):
        return all(m.verdict == 'stable' for m in self.models)

    @property
    def verdict(self):
        verdicts = {m.verdict for m in self.models}
        if verdicts == {'stable'}:
            return 'stable'
        if 'unstable' in verdicts:
            return 'unstable'
        return 'inconclusive'


def _gap_change(dp_turn, dy_turn, f_turn):
    """Phase change of F across a frequency gap, or None if unresolved.

    The change is known only modulo 2 pi from the conjugate symmetry of
    the end values.  It is taken as the wrapped value of either ``det P``
    (corrected by the exact change of ``det Y``) or ``F`` itself, whichever
    turns by less than pi/2; both must agree when both qualify.  `f_turn`
    is None when F has a pole inside the gap.
    """
    cands = []
    if dp_turn is not None:
        w = float(_wrap(dp_turn))
        if abs(w) < np.pi / 2:
            cands.append(w - dy_turn)
    if f_turn is not None and np.isfinite(f_turn):
        w = float(_wrap(f_turn))
        if abs(w) < np.pi / 2:
            cands.append(w)
    if not cands:
        return None
    if len(cands) == 2 and abs(cands[0] - cands[1]) > 1e-6:
        return None
    return cands[0]


def _plant_on(frs, i, omega):
    g = frs.grid.omega
    if omega.shape == g.shape and np.array_equal(omega, g):
        return np.array(frs.responses[i])
    return interpolate_complex(g, frs.responses[i], omega)


def _sample_margin_violation(frs, i, omega, P, xv):
    """First data interval where the choice of interpolant matters.

    The plant between samples is taken from two interpolants, linear and
    cubic spline.  With ``D`` their difference, every plant on the segment
    between them gives the same winding of ``det(Y + G X)`` when
    ``||(Y + G X)^-1 D X|| < 1`` at every evaluated frequency.  Returns the
    index of the first interval that fails, or None.
    """
    g = frs.grid.omega
    if g.size < 3:
        return None
    spline = CubicSpline(g, frs.responses[i], axis=0)(omega)
    lin = _plant_on(frs, i, omega)
    M = np.linalg.solve(P, (spline - lin) @ xv)
    bad = np.linalg.norm(M, ord=2, axis=(1, 2)) >= 1
    if not bad.any():
        return None
    j = np.searchsorted(g, omega[np.argmax(bad)], side='right') - 1
    return int(np.clip(j, 0, g.size - 2))


def _model_certificate(frs, i, ctrl, omega0, roots, n_k, ambiguous, grid,
                       max_refine, clearance_tol, reference):
    st = ctrl.structure
    discrete = grid.discrete
    ts = grid.ts
    n_g = frs.unstable_poles[i]
    required = n_g + n_k
    cert = ModelCertificate(i, 'inconclusive', required=required,
                            unstable_plant_poles=n_g)
    if ambiguous:
        cert.note = "det Y has an undeclared root on the stability boundary"
        return cert
    plant_boundary = [e for e in grid.excluded
                      if not np.any(np.isclose(e, st.boundary, rtol=1e-9))]
    if plant_boundary:
        cert.note = (f"inconclusive near B_g: plant boundary poles at "
                     f"{plant_boundary}")
        return cert
    omega = omega0
    for _ in range(max_refine + 1):
        pts = grid.points(omega)
        xv, yv = ctrl.evaluate(pts)
        G = _plant_on(frs, i, omega)
        P = yv + G @ xv
        dp = np.linalg.det(P)
        if np.abs(dp).min() == 0:
            cert.note = "det(Y + G X) vanishes on the grid"
            return cert
        steps = _wrap(np.diff(np.angle(dp)))
        bad = np.flatnonzero(np.abs(steps) >= np.pi / 2)
        if bad.size == 0:
            break
        omega = _refine(omega, bad)
    else:
        cert.note = "phase of det(Y + G X) not resolved after refinement"
        return cert
    j = _sample_margin_violation(frs, i, omega, P, xv)
    if j is not None:
        g = frs.grid.omega
        cert.note = (f"plant data too sparse to fix the winding between "
                     f"omega {g[j]:.6g} and {g[j + 1]:.6g}; add frequencies "
                     f"there")
        return cert
    dy = np.linalg.det(yv)
    with np.errstate(divide='ignore', invalid='ignore'):
        F = dp / dy
    finite = np.isfinite(F)
    cert.clearance = float(np.abs(F[finite]).min()) if finite.any() else 0.0
    inside, outside, bnd = roots
    w1, wm = omega[0], omega[-1]
    d_pos = steps.sum()
    bnd_w = np.abs(np.angle(bnd)) / ts if discrete else np.abs(bnd.imag)
    f_lo = None if np.any(bnd_w < w1) else 2 * np.angle(F[0])
    if discrete:
        t1, tm = w1 * ts, wm * ts
        f_hi = None if np.any(bnd_w > wm) else -2 * np.angle(F[-1])
        dy_pos = _phase_change_disc(inside, outside, bnd, t1, tm)
        dy_lo = _phase_change_disc(inside, outside, bnd, -t1, t1)
        dy_hi = _phase_change_disc(inside, outside, bnd, tm, TWO_PI - tm)
        gap_hi = _gap_change(-2 * np.angle(dp[-1]), dy_hi, f_hi)
    else:
        dy_pos = _phase_change_cont(inside, outside, bnd, w1, wm)
        dy_lo = _phase_change_cont(inside, outside, bnd, -w1, w1)
        # det P grows like an unknown power of s; only F is tracked at infinity
        gap_hi = _gap_change(None, None, -2 * np.angle(F[-1]))
    gap_lo = _gap_change(2 * np.angle(dp[0]), dy_lo, f_lo)
    if gap_lo is None or gap_hi is None:
        cert.note = ("phase at the ends of the frequency range is not "
                     "resolved; extend the grid")
        return cert
    total = 2 * (d_pos - dy_pos) + gap_lo + gap_hi
    turns = total / TWO_PI
    if abs(turns - np.round(turns)) > 0.1:
        cert.note = f"non-integer winding {turns:.3f}"
        return cert
    cert.winding = int(np.round(turns))
    if reference is not None:
        xr, yr = reference.evaluate(pts)
        pc = yr + G @ xr
        M = np.conj(np.swapaxes(P, 1, 2)) @ pc
        cert.min_re_eig = float(np.linalg.eigvals(M).real.min())
    ok = cert.winding == required and cert.clearance > clearance_tol
    cert.verdict = 'stable' if ok else 'unstable'
    if cert.winding != required:
        cert.note = f"winding {cert.winding} != required {required}"
    elif not ok:
        cert.note = f"clearance {cert.clearance:.3g} too small"
    return cert


def certify_stability(frs, ctrl, dense_factor=10, reference=None,
                      max_refine=8, clearance_tol=1e-9):
    """Grid-certified Nyquist stability test of ``K = X Y^-1`` on `frs`.

    Parameters
    ----------
    frs : FrequencyResponseSet
        Plant data with declared unstable-pole counts.
    ctrl : Controller
    dense_factor : int
        Density of the evaluation grid relative to the data grid.
    reference : Controller, optional
        Initial controller; enables the structural diagnostics that
        compare ``det Y`` degrees and boundary poles.
    """
    grid = frs.grid
    st = ctrl.structure
    roots, degree = det_roots(ctrl)
    inside, outside, bnd, ambiguous = _classify_roots(
        roots, grid.discrete, grid.ts, st.boundary)
    n_k = outside.size
    omega = dense_omega(grid.omega, dense_factor)
    conditions = {}
    try:
        ctrl.response(grid.points(), grid.omega)
        conditions['det_y_nonzero'] = True
    except Exception:
        conditions['det_y_nonzero'] = False
    if reference is not None:
        conditions['boundary_match'] = tuple(reference.structure.boundary) \
            == tuple(st.boundary)
        conditions['degree_match'] = det_roots(reference)[1] == degree
    models = [_model_certificate(frs, i, ctrl, omega, (inside, outside, bnd),
                                 n_k, ambiguous, grid, max_refine,
                                 clearance_tol, reference)
              for i in range(frs.q)]
    return StabilityCertificate(models, degree, n_k, omega.size, conditions)


# ----------------------------------------------------------------------------
# Closed-loop responses and achieved norms

@dataclass(eq=False)
class ClosedLoopEval:
    """Closed-loop responses of one model on a dense grid."""
    omega: np.ndarray
    G: np.ndarray
    K: np.ndarray
    L: np.ndarray
    S: np.ndarray
    T: np.ndarray
    U: np.ndarray


def _sigma_max(a):
    return np.linalg.norm(a, 2, axis=(-2, -1))


def closed_loop(frs, ctrl, model=0, dense_factor=10, omega=None):
    """``L = G K``, ``S = (I + L)^-1``, ``T = L S`` and ``U = K S``."""
    w = dense_omega(frs.grid.omega, dense_factor) if omega is None else \
        np.asarray(omega, dtype=float)
    G = _plant_on(frs, model, w)
    K = ctrl.response(frs.grid.points(w), w)
    L = G @ K
    S = np.linalg.inv(np.eye(frs.n) + L)
    return ClosedLoopEval(w, G, K, L, S, L @ S, K @ S)


def _weight(w, grid, omega, size):
    if w is None:
        return np.broadcast_to(np.eye(size), (omega.size, size, size))
    return evaluate_weight(w, grid, omega, size)


def achieved_hinf(frs, ctrl, w1=None, w2=None, stack='mixed', dense_factor=10,
                  target=None):
    """Largest singular value of a weighted closed-loop map on a dense grid.

    `stack` selects ``[W1 S; W2 K S]`` ('mixed'), ``W1 S`` ('S'),
    ``W1 T`` ('T'), ``W1 K S`` ('U'), ``W2 K S W1`` ('robust') or
    ``G K - L_d`` ('loop', with `target`).  The maximum over models is
    returned.
    """
    worst = 0.0
    grid = frs.grid
    for i in range(frs.q):
        cl = closed_loop(frs, ctrl, i, dense_factor)
        w = cl.omega
        if stack == 'mixed':
            top = _weight(w1, grid, w, frs.n) @ cl.S
            if w2 is None:
                M = top
            else:
                M = np.concatenate([top, _weight(w2, grid, w, frs.m) @ cl.U],
                                   axis=1)
        elif stack in ('S', 'T'):
            M = _weight(w1, grid, w, frs.n) @ getattr(cl, stack)
        elif stack == 'U':
            M = _weight(w1, grid, w, frs.m) @ cl.U
        elif stack == 'robust':
            M = _weight(w2, grid, w, frs.m) @ cl.U @ \
                _weight(w1, grid, w, frs.n)
        elif stack == 'loop':
            M = cl.L - evaluate_weight(target, grid, w, frs.n)
        else:
            raise ValueError(f"unknown stack {stack!r}")
        worst = max(worst, float(_sigma_max(M).max()))
    return worst


def achieved_h2(frs, ctrl, w1=None, dense_factor=10, target=None):
    """Squared H2 norm of ``W1 S`` (or of ``G K - L_d``) summed over models.

    The integrand is integrated with the trapezoidal rule on the dense
    grid and held constant below the first grid frequency (and, for
    discrete time, above the last one up to the Nyquist frequency).  The
    result is normalized by ``1 / (2 pi)`` (continuous) or ``Ts / (2 pi)``
    (discrete) over the full symmetric frequency range.
    """
    grid = frs.grid
    total = 0.0
    for i in range(frs.q):
        cl = closed_loop(frs, ctrl, i, dense_factor)
        w = cl.omega
        if target is None:
            M = _weight(w1, grid, w, frs.n) @ cl.S
        else:
            M = cl.L - evaluate_weight(target, grid, w, frs.n)
        f = np.einsum('kij,kij->k', M, M.conj()).real
        integral = np.trapezoid(f, w) + f[0] * w[0]
        if grid.discrete:
            integral += f[-1] * (np.pi / grid.ts - w[-1])
            total += integral * grid.ts / np.pi
        else:
            total += integral / np.pi
    return float(total)


def format_report(cert, norms=None):
    """Plain-text report of a certificate and optional achieved norms."""
    lines = [f"verdict: {cert.verdict}",
             f"det Y degree: {cert.det_degree}",
             f"unstable controller poles: {cert.unstable_controller_poles}",
             f"dense points: {cert.dense_points} (grid-certified: checked "
             f"at these frequencies only)"]
    for key, val in cert.conditions.items():
        lines.append(f"condition {key}: {val}")
    for m in cert.models:
        clr = 'n/a' if m.clearance is None else f"{m.clearance:.6g}"
        lines.append(f"model {m.model}: {m.verdict} winding={m.winding} "
                     f"required={m.required} clearance={clr}"
                     + (f" note={m.note}" if m.note else ""))
        if m.min_re_eig is not None:
            lines.append(f"model {m.model}: min Re eig(P^H Pc) = "
                         f"{m.min_re_eig:.6g}")
    for key, val in (norms or {}).items():
        lines.append(f"{key}: {val:.10g}")
    return "\n".join(lines) + "\n"
