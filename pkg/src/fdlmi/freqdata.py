"""Frequency grids, frequency-response data and frequency-domain weights.

A frequency-response set holds ``q`` sampled complex ``n x m`` responses on
a shared grid of positive frequencies (rad/s).  Grids are either continuous
(evaluation at ``s = j w``) or discrete with sampling period ``ts``
(evaluation at ``z = exp(j w ts)``).  Negative frequencies are never stored;
conjugate symmetry of real systems makes them redundant.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import EvaluationError, IdentificationError, InputError

__all__ = [
    'ExperimentRecord', 'FrequencyGrid', 'FrequencyResponseSet',
    'RationalWeight', 'RationalMatrixWeight', 'TabulatedWeight',
    'build_log_grid', 'estimate_frequency_response', 'evaluate_weight',
    'evaluate_rational', 'frs_from_rational', 'interpolate_complex',
    'read_frs', 'write_frs', 'read_experiment', 'write_experiment',
]

# grid points closer than this (relative) to an excluded frequency are moved
EXCLUDE_RTOL = 1e-6
EXCLUDE_NUDGE = 1e-4


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Strictly increasing positive frequencies in rad/s.

    Parameters
    ----------
    omega : array_like
        Grid frequencies.
    ts : float or None
        Sampling period for discrete-time grids, None for continuous time.
    excluded : sequence of float
        Boundary frequencies (plant or controller poles on the stability
        boundary) that the grid must avoid.
    interval : (float, float), optional
        Integration interval used by quadrature rules.  Defaults to the
        first and last grid frequency.
    """
    omega: np.ndarray
    ts: float = None
    excluded: tuple = ()
    interval: tuple = None

    def __post_init__(self):
        omega = _frozen(np.atleast_1d(self.omega))
        object.__setattr__(self, 'omega', omega)
        object.__setattr__(self, 'excluded',
                           tuple(sorted(float(e) for e in self.excluded)))
        if omega.ndim != 1 or omega.size == 0:
            raise InputError("grid must be a non-empty 1-D array")
        if not np.all(np.isfinite(omega)) or omega[0] <= 0:
            raise InputError("grid frequencies must be finite and positive")
        if np.any(np.diff(omega) <= 0):
            raise InputError("grid frequencies must be strictly increasing")
        if self.ts is not None:
            if not self.ts > 0:
                raise InputError("sampling period must be positive")
            object.__setattr__(self, 'ts', float(self.ts))
            if omega[-1] > np.pi / self.ts * (1 + 1e-12):
                raise InputError(
                    f"grid frequency {omega[-1]:g} exceeds the Nyquist "
                    f"frequency {np.pi / self.ts:g}")
        for e in self.excluded:
            if np.any(omega == e):
                raise InputError(f"grid contains excluded frequency {e:g}")
        if self.interval is None:
            object.__setattr__(self, 'interval',
                               (float(omega[0]), float(omega[-1])))

    def __len__(self):
        return self.omega.size

    @property
    def discrete(self):
        return self.ts is not None

    @property
    def variable(self):
        return 'z' if self.discrete else 's'

    def points(self, omega=None):
        """Complex evaluation points ``j w`` or ``exp(j w ts)``."""
        w = self.omega if omega is None else np.asarray(omega, dtype=float)
        if self.discrete:
            return np.exp(1j * w * self.ts)
        return 1j * w

    def with_omega(self, omega):
        return FrequencyGrid(omega, self.ts, self.excluded, self.interval)

    def same_as(self, other):
        return (self.ts == other.ts and self.omega.shape == other.omega.shape
                and np.array_equal(self.omega, other.omega))


def build_log_grid(w_min, w_max, n_points, excluded=(), ts=None,
                   rtol=EXCLUDE_RTOL, nudge=EXCLUDE_NUDGE):
    """Logarithmically spaced grid on ``[w_min, w_max]``.

    Points within relative distance `rtol` of an excluded frequency are
    multiplied by ``1 + nudge`` (or ``1 - nudge`` when that would leave the
    interval or break monotonicity).
    """
    if not 0 < w_min < w_max:
        raise InputError("need 0 < w_min < w_max")
    n_points = int(n_points)
    if n_points < 2:
        raise InputError("need at least two grid points")
    if ts is not None and w_max > np.pi / ts * (1 + 1e-12):
        raise InputError(f"w_max = {w_max:g} exceeds the Nyquist frequency "
                         f"pi/ts = {np.pi / ts:g}")
    omega = np.logspace(np.log10(w_min), np.log10(w_max), n_points)
    omega[0], omega[-1] = w_min, w_max
    for e in excluded:
        if e <= 0:
            continue
        close = np.abs(omega - e) <= rtol * e
        for k in np.flatnonzero(close):
            up = omega[k] * (1 + nudge)
            upper = omega[k + 1] if k + 1 < n_points else w_max
            if up < upper or (k + 1 == n_points and up <= w_max):
                omega[k] = up
            else:
                omega[k] *= 1 - nudge
    return FrequencyGrid(omega, ts, excluded)


@dataclass(frozen=True, eq=False)
class FrequencyResponseSet:
    """Multimodel frequency-response data.

    ``responses`` has shape ``(q, K, n, m)``: model, frequency, output,
    input.  ``unstable_poles[i]`` is the number of poles of model ``i``
    outside the stability region (declared by the user).
    """
    responses: np.ndarray
    grid: FrequencyGrid
    unstable_poles: tuple = None

    def __post_init__(self):
        r = np.asarray(self.responses, dtype=complex)
        if r.ndim == 3:
            r = r[None]
        if r.ndim != 4:
            raise InputError("responses must have shape (q, K, n, m)")
        if r.shape[1] != len(self.grid):
            raise InputError(f"{r.shape[1]} responses for a grid of "
                             f"{len(self.grid)} points")
        if not np.all(np.isfinite(r)):
            raise InputError("frequency responses must be finite")
        object.__setattr__(self, 'responses', _frozen(r, complex))
        up = self.unstable_poles
        up = (0,) * r.shape[0] if up is None else tuple(int(u) for u in up)
        if len(up) != r.shape[0] or min(up) < 0:
            raise InputError("need one nonnegative unstable-pole count per "
                             "model")
        object.__setattr__(self, 'unstable_poles', up)

    @property
    def q(self):
        return self.responses.shape[0]

    @property
    def n(self):
        return self.responses.shape[2]

    @property
    def m(self):
        return self.responses.shape[3]

    def model(self, i):
        return self.responses[i]

    def select(self, indices):
        idx = list(indices)
        return FrequencyResponseSet(self.responses[idx], self.grid,
                                    [self.unstable_poles[i] for i in idx])


@dataclass(frozen=True, eq=False)
class ExperimentRecord:
    """``m`` sampled experiments stacked column-wise.

    ``u`` has shape ``(N, m, m)`` and ``y`` shape ``(N, n, m)``; column
    ``j`` of both holds experiment ``j``.
    """
    u: np.ndarray
    y: np.ndarray
    ts: float

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if u.ndim == 1:
            u = u[:, None, None]
        if y.ndim == 1:
            y = y[:, None, None]
        if u.ndim != 3 or y.ndim != 3 or u.shape[1] != u.shape[2]:
            raise InputError("u must be (N, m, m) and y must be (N, n, m)")
        if u.shape[0] != y.shape[0] or u.shape[2] != y.shape[2]:
            raise InputError(f"input record {u.shape} does not match output "
                             f"record {y.shape}")
        if u.shape[0] < 1:
            raise InputError("empty experiment")
        if not self.ts > 0:
            raise InputError("sampling period must be positive")
        object.__setattr__(self, 'u', _frozen(u))
        object.__setattr__(self, 'y', _frozen(y))
        object.__setattr__(self, 'ts', float(self.ts))

    @property
    def length(self):
        return self.u.shape[0]


def estimate_frequency_response(rec, grid, cond_limit=1e12):
    """Fourier-analysis estimate ``Y(w) U(w)^-1`` at every grid frequency.

    Returns an array of shape ``(K, n, m)``.  The exponent uses the
    record's own sampling period, so the grid may belong to a controller
    with a different period.
    """
    omega = grid.omega if isinstance(grid, FrequencyGrid) else np.asarray(grid)
    if omega.max() > np.pi / rec.ts * (1 + 1e-12):
        raise InputError("grid extends beyond the Nyquist frequency of the "
                         "experiment")
    k = np.arange(rec.length)
    E = np.exp(-1j * np.outer(omega, k) * rec.ts)
    U = np.einsum('wt,tij->wij', E, rec.u)
    Y = np.einsum('wt,tij->wij', E, rec.y)
    sv = np.linalg.svd(U, compute_uv=False)
    # |U(w)| can not exceed the summed input magnitudes
    scale = np.abs(rec.u).sum(axis=0).max()
    with np.errstate(divide='ignore'):
        cond = sv[:, 0] / sv[:, -1]
    bad = np.flatnonzero(~(cond < cond_limit) |
                         (sv[:, -1] <= scale / cond_limit))
    if bad.size:
        w = float(omega[bad[0]])
        raise IdentificationError(
            f"input spectrum is singular at w = {w!r} rad/s "
            f"(smallest singular value {sv[bad[0], -1]:.3g})", omega=w)
    # G U = Y  <=>  U^T G^T = Y^T
    return np.swapaxes(np.linalg.solve(np.swapaxes(U, 1, 2),
                                       np.swapaxes(Y, 1, 2)), 1, 2)


def interpolate_complex(omega_src, values, omega_dst):
    """Linear interpolation of complex samples along the first axis."""
    omega_src = np.asarray(omega_src, dtype=float)
    omega_dst = np.asarray(omega_dst, dtype=float)
    lo, hi = omega_src[0], omega_src[-1]
    if omega_dst.min() < lo * (1 - 1e-12) or omega_dst.max() > hi * (1 + 1e-12):
        raise InputError("cannot extrapolate tabulated data outside "
                         f"[{lo:g}, {hi:g}]")
    values = np.asarray(values)
    flat = values.reshape(values.shape[0], -1)
    idx = np.clip(np.searchsorted(omega_src, omega_dst) - 1, 0,
                  omega_src.size - 2) if omega_src.size > 1 else None
    if idx is None:
        out = np.repeat(flat[:1], omega_dst.size, axis=0)
    else:
        w0, w1 = omega_src[idx], omega_src[idx + 1]
        t = ((omega_dst - w0) / (w1 - w0))[:, None]
        out = (1 - t) * flat[idx] + t * flat[idx + 1]
        exact = np.searchsorted(omega_src, omega_dst)
        exact = np.minimum(exact, omega_src.size - 1)
        hit = omega_src[exact] == omega_dst
        out[hit] = flat[exact[hit]]
    return out.reshape((omega_dst.size,) + values.shape[1:])


# ----------------------------------------------------------------------------
# Weights

def _as_coeffs(c):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.ndim != 1 or c.size == 0:
        raise InputError("polynomial coefficients must be a non-empty list")
    return c


def _eval_points(grid, omega, variable, ts):
    if variable is None:
        return grid.points(omega)
    if variable == 's':
        return 1j * omega
    if variable == 'z':
        period = ts if ts is not None else grid.ts
        if period is None:
            raise InputError("discrete weight on a continuous grid needs ts")
        return np.exp(1j * omega * period)
    raise InputError(f"unknown variable {variable!r}")


def evaluate_rational(num, den, points, omega=None):
    """Evaluate ``num(v)/den(v)`` (descending coefficients) at `points`."""
    num, den = _as_coeffs(num), _as_coeffs(den)
    d = np.polyval(den, points)
    scale = np.abs(den).sum() * np.maximum(1.0, np.abs(points)) ** (den.size - 1)
    bad = np.flatnonzero(np.abs(d) <= 1e-14 * scale)
    if bad.size:
        w = None if omega is None else float(np.atleast_1d(omega)[bad[0]])
        raise EvaluationError(f"denominator vanishes at w = {w!r} rad/s",
                              omega=w)
    return np.polyval(num, points) / d


@dataclass(frozen=True, eq=False)
class RationalWeight:
    """Scalar rational function times the identity of size `size`.

    Coefficients are in descending powers, as in ``numpy.polyval``.
    ``variable`` is None to follow the grid, or ``'s'``/``'z'`` to force a
    domain (a continuous weight may be used with a discrete design).
    """
    num: tuple
    den: tuple = (1.0,)
    size: int = 1
    variable: str = None
    ts: float = None

    def __post_init__(self):
        object.__setattr__(self, 'num', tuple(_as_coeffs(self.num)))
        object.__setattr__(self, 'den', tuple(_as_coeffs(self.den)))

    def scaled(self, factor):
        return RationalWeight(tuple(factor * c for c in self.num), self.den,
                              self.size, self.variable, self.ts)


@dataclass(frozen=True, eq=False)
class RationalMatrixWeight:
    """Matrix whose entries are ``(num, den)`` pairs (descending order)."""
    entries: tuple
    variable: str = None
    ts: float = None

    def __post_init__(self):
        rows = tuple(tuple((tuple(_as_coeffs(nm)), tuple(_as_coeffs(dn)))
                           for nm, dn in row) for row in self.entries)
        if len({len(r) for r in rows}) != 1:
            raise InputError("ragged rational matrix")
        object.__setattr__(self, 'entries', rows)

    @property
    def shape(self):
        return len(self.entries), len(self.entries[0])

    def scaled(self, factor):
        return RationalMatrixWeight(
            tuple(tuple((tuple(factor * c for c in nm), dn) for nm, dn in row)
                  for row in self.entries), self.variable, self.ts)


@dataclass(frozen=True, eq=False)
class TabulatedWeight:
    """Complex matrices sampled at `omega` (shape ``(K, r, c)``)."""
    omega: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim == 1:
            v = v[:, None, None]
        object.__setattr__(self, 'omega', _frozen(self.omega))
        object.__setattr__(self, 'values', _frozen(v, complex))

    def scaled(self, factor):
        return TabulatedWeight(self.omega, factor * self.values)


def evaluate_weight(w, grid, omega=None, size=None):
    """Evaluate a weight on a grid; returns shape ``(K, r, c)``.

    `w` may be one of the weight classes, a scalar, or a constant matrix.
    `omega` overrides the grid frequencies (the grid still fixes the time
    domain).  With `size`, a ``1 x 1`` result is expanded to a scalar
    times the identity of that size.
    """
    v = _evaluate_weight(w, grid, omega)
    if size is not None and v.shape[1:] == (1, 1) and size != 1:
        v = v * np.eye(size)
    return v


def _evaluate_weight(w, grid, omega):
    omega = grid.omega if omega is None else np.asarray(omega, dtype=float)
    K = omega.size
    if isinstance(w, RationalWeight):
        v = evaluate_rational(w.num, w.den,
                              _eval_points(grid, omega, w.variable, w.ts),
                              omega)
        return v[:, None, None] * np.eye(w.size)
    if isinstance(w, RationalMatrixWeight):
        pts = _eval_points(grid, omega, w.variable, w.ts)
        r, c = w.shape
        out = np.empty((K, r, c), dtype=complex)
        for i, row in enumerate(w.entries):
            for j, (nm, dn) in enumerate(row):
                out[:, i, j] = evaluate_rational(nm, dn, pts, omega)
        return out
    if isinstance(w, TabulatedWeight):
        if w.omega.shape == omega.shape and np.array_equal(w.omega, omega):
            return np.array(w.values)
        return interpolate_complex(w.omega, w.values, omega)
    a = np.asarray(w, dtype=complex)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise InputError("constant weights must be scalars or matrices")
    return np.broadcast_to(a, (K,) + a.shape).copy()


def frs_from_rational(models, grid, unstable_poles=None):
    """Sample rational transfer matrices on `grid`.

    `models` is a list of entry tables ``[[(num, den), ...], ...]`` (one per
    operating point) or of `RationalMatrixWeight` objects.
    """
    out = []
    for mdl in models:
        if not isinstance(mdl, RationalMatrixWeight):
            mdl = RationalMatrixWeight(mdl)
        out.append(evaluate_weight(mdl, grid))
    return FrequencyResponseSet(np.stack(out), grid, unstable_poles)


# ----------------------------------------------------------------------------
# File formats

def _fmt(x):
    return repr(float(x))


def _data_lines(path):
    with open(path) as f:
        for raw in f:
            line = raw.split('#', 1)[0].strip()
            if line:
                yield line


def write_frs(path, frs):
    """Write the line-oriented FRS text format (lossless decimal)."""
    g = frs.grid
    domain = f"discrete {_fmt(g.ts)}" if g.discrete else "continuous"
    lines = [f"FRS {frs.n} {frs.m} {frs.q} {domain}"]
    lines.append("UNSTABLE " + " ".join(str(u) for u in frs.unstable_poles))
    if g.excluded:
        lines.append("EXCLUDE " + " ".join(_fmt(e) for e in g.excluded))
    for i in range(frs.q):
        for k, w in enumerate(g.omega):
            vals = frs.responses[i, k].reshape(-1)
            parts = [_fmt(w)]
            for v in vals:
                parts += [_fmt(v.real), _fmt(v.imag)]
            lines.append(" ".join(parts))
    with open(path, 'w') as f:
        f.write("\n".join(lines) + "\n")


def read_frs(path):
    lines = list(_data_lines(path))
    if not lines:
        raise InputError(f"{path}: empty file")
    head = lines[0].split()
    try:
        if head[0] != 'FRS':
            raise ValueError
        n, m, q = int(head[1]), int(head[2]), int(head[3])
        if head[4] == 'continuous' and len(head) == 5:
            ts = None
        elif head[4] == 'discrete' and len(head) == 6:
            ts = float(head[5])
        else:
            raise ValueError
    except (IndexError, ValueError):
        raise InputError(f"{path}: bad header {lines[0]!r}") from None
    unstable, excluded = None, ()
    body = lines[1:]
    while body and body[0].split()[0] in ('UNSTABLE', 'EXCLUDE'):
        key, *vals = body.pop(0).split()
        if key == 'UNSTABLE':
            unstable = [int(v) for v in vals]
        else:
            excluded = tuple(float(v) for v in vals)
    width = 1 + 2 * n * m
    try:
        data = np.array([[float(t) for t in ln.split()] for ln in body])
    except ValueError:
        raise InputError(f"{path}: non-numeric record") from None
    if data.ndim != 2 or data.shape[1] != width or len(body) % q:
        raise InputError(f"{path}: expected records of {width} numbers, "
                         f"a multiple of q = {q} lines")
    data = data.reshape(q, -1, width)
    omega = data[0, :, 0]
    if not all(np.array_equal(data[i, :, 0], omega) for i in range(q)):
        raise InputError(f"{path}: models do not share one grid")
    resp = (data[:, :, 1::2] + 1j * data[:, :, 2::2]).reshape(
        q, -1, n, m)
    return FrequencyResponseSet(resp, FrequencyGrid(omega, ts, excluded),
                                unstable)


def write_experiment(path, rec):
    n, m = rec.y.shape[1], rec.u.shape[1]
    lines = [f"EXP {n} {m} {rec.length} {_fmt(rec.ts)}"]
    for k in range(rec.length):
        vals = np.concatenate([rec.u[k].reshape(-1), rec.y[k].reshape(-1)])
        lines.append(" ".join(_fmt(v) for v in vals))
    with open(path, 'w') as f:
        f.write("\n".join(lines) + "\n")


def read_experiment(path):
    lines = list(_data_lines(path))
    try:
        tag, n, m, N, ts = lines[0].split()
        if tag != 'EXP':
            raise ValueError
        n, m, N, ts = int(n), int(m), int(N), float(ts)
    except (IndexError, ValueError):
        raise InputError(f"{path}: bad header") from None
    if len(lines) - 1 != N:
        raise InputError(f"{path}: header announces {N} samples, found "
                         f"{len(lines) - 1}")
    try:
        data = np.array([[float(t) for t in ln.split()] for ln in lines[1:]])
    except ValueError:
        raise InputError(f"{path}: non-numeric record") from None
    if data.shape != (N, m * m + n * m):
        raise InputError(f"{path}: each record needs {m * m + n * m} values")
    return ExperimentRecord(data[:, :m * m].reshape(N, m, m),
                            data[:, m * m:].reshape(N, n, m), ts)
