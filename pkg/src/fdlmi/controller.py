"""Matrix-polynomial controllers ``K = X Y^-1`` with fixed factors and masks.

The free parts are ``X~(v) = sum_d X_d v^d`` (degree ``p``, all coefficients
free) and the monic ``Y~(v) = I v^p + sum_{d<p} Y_d v^d``.  Fixed factors
enter element-wise::

    X = X~ o F_x,    Y = Y~ o F_y

where ``o`` is the entry-by-entry product of polynomial matrices.  Structural
masks mark the free entries; masked-out entries are zero in every
coefficient.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import EvaluationError, InputError

__all__ = [
    'MatrixPolynomial', 'ControllerStructure', 'Controller', 'make_mask',
    'augment_order', 'controller_frequency_response', 'evaluate_poly',
    'read_controller', 'write_controller', 'poly_det_coeffs',
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class MatrixPolynomial:
    """Real polynomial matrix with degree-ascending coefficients.

    ``coeffs`` has shape ``(degree + 1, rows, cols)``.
    """
    coeffs: np.ndarray
    variable: str = 'z'

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim == 2:
            c = c[None]
        if c.ndim != 3 or c.shape[0] == 0:
            raise InputError("coefficients must have shape (p+1, rows, cols)")
        if self.variable not in ('s', 'z'):
            raise InputError(f"variable must be 's' or 'z', not "
                             f"{self.variable!r}")
        object.__setattr__(self, 'coeffs', _frozen(c))

    @classmethod
    def constant(cls, matrix, variable='z'):
        return cls(np.asarray(matrix, dtype=float)[None], variable)

    @classmethod
    def ones(cls, shape, variable='z'):
        return cls(np.ones((1,) + tuple(shape)), variable)

    @classmethod
    def scalar_identity(cls, coeffs, size, variable='z'):
        """``c(v) I`` for an ascending scalar coefficient list."""
        c = np.asarray(coeffs, dtype=float)
        return cls(c[:, None, None] * np.eye(size), variable)

    @property
    def degree(self):
        return self.coeffs.shape[0] - 1

    @property
    def shape(self):
        return self.coeffs.shape[1:]

    def __call__(self, points):
        """Horner evaluation at complex points; returns ``(K, rows, cols)``."""
        pts = np.atleast_1d(np.asarray(points, dtype=complex))
        out = np.zeros((pts.size,) + self.shape, dtype=complex)
        for c in self.coeffs[::-1]:
            out = out * pts[:, None, None] + c
        return out

    def hadamard(self, other):
        """Entry-wise product of two polynomial matrices."""
        if self.shape != other.shape:
            raise InputError(f"shape mismatch {self.shape} vs {other.shape}")
        d = self.degree + other.degree
        out = np.zeros((d + 1,) + self.shape)
        for i, a in enumerate(self.coeffs):
            for j, b in enumerate(other.coeffs):
                out[i + j] += a * b
        return MatrixPolynomial(out, self.variable)

    def scale_poly(self, coeffs):
        """Multiply every entry by a scalar polynomial (ascending coeffs)."""
        c = np.asarray(coeffs, dtype=float)
        out = np.zeros((self.degree + c.size,) + self.shape)
        for i, a in enumerate(c):
            out[i:i + self.degree + 1] += a * self.coeffs
        return MatrixPolynomial(out, self.variable)

    def trimmed(self):
        """Drop vanishing leading coefficients (keeps at least one)."""
        nz = np.flatnonzero(np.any(self.coeffs != 0, axis=(1, 2)))
        top = nz[-1] if nz.size else 0
        return MatrixPolynomial(self.coeffs[:top + 1], self.variable)


def evaluate_poly(mp, grid, omega=None):
    """Evaluate a `MatrixPolynomial` on the points of a frequency grid."""
    return mp(grid.points(omega))


def make_mask(kind, shape):
    """Boolean structure mask: ``'full'``, ``'diag'`` or an explicit array."""
    if isinstance(kind, str):
        if kind == 'full':
            return np.ones(shape, dtype=bool)
        if kind in ('diag', 'diagonal'):
            return np.eye(*shape, dtype=bool)
        raise InputError(f"unknown mask {kind!r}")
    mask = np.asarray(kind, dtype=bool)
    if mask.shape != tuple(shape):
        raise InputError(f"mask shape {mask.shape} differs from {shape}")
    return mask


@dataclass(frozen=True, eq=False)
class ControllerStructure:
    """Shapes, degree, masks and fixed factors of a controller family.

    Parameters
    ----------
    m, n : int
        Number of plant inputs and outputs (``K`` is ``m x n``).
    degree : int
        Degree ``p`` of the free polynomials.
    variable : {'s', 'z'}
    mask_x, mask_y : array_like of bool, or 'full' / 'diag'
    fx, fy : MatrixPolynomial, optional
        Element-wise fixed factors, all-ones by default.
    boundary : sequence of float
        Frequencies (rad/s) of roots of ``det F_y`` on the stability
        boundary.
    ts : float, optional
        Sampling period of a discrete-time controller.
    """
    m: int
    n: int
    degree: int
    variable: str = 'z'
    mask_x: np.ndarray = 'full'
    mask_y: np.ndarray = 'full'
    fx: MatrixPolynomial = None
    fy: MatrixPolynomial = None
    boundary: tuple = ()
    ts: float = None

    def __post_init__(self):
        if self.variable not in ('s', 'z'):
            raise InputError("variable must be 's' or 'z'")
        if self.degree < 0 or self.m < 1 or self.n < 1:
            raise InputError("need m, n >= 1 and degree >= 0")
        mx = make_mask(self.mask_x, (self.m, self.n))
        my = make_mask(self.mask_y, (self.n, self.n))
        if not np.all(np.diag(my)):
            raise InputError("the diagonal of Y must be free (Y is monic)")
        object.__setattr__(self, 'mask_x', _frozen(mx, bool))
        object.__setattr__(self, 'mask_y', _frozen(my, bool))
        fx = self.fx or MatrixPolynomial.ones((self.m, self.n), self.variable)
        fy = self.fy or MatrixPolynomial.ones((self.n, self.n), self.variable)
        if fx.shape != (self.m, self.n) or fy.shape != (self.n, self.n):
            raise InputError("fixed factors have the wrong shape")
        if fx.variable != self.variable or fy.variable != self.variable:
            raise InputError("fixed factors use a different variable")
        object.__setattr__(self, 'fx', fx)
        object.__setattr__(self, 'fy', fy)
        object.__setattr__(self, 'boundary',
                           tuple(sorted(float(b) for b in self.boundary)))
        if self.ts is not None:
            object.__setattr__(self, 'ts', float(self.ts))

    @property
    def x_keys(self):
        """``(degree, row, col)`` of every free X coefficient, in order."""
        rows, cols = np.nonzero(self.mask_x)
        return [(d, int(r), int(c)) for d in range(self.degree + 1)
                for r, c in zip(rows, cols)]

    @property
    def y_keys(self):
        rows, cols = np.nonzero(self.mask_y)
        return [(d, int(r), int(c)) for d in range(self.degree)
                for r, c in zip(rows, cols)]

    @property
    def n_params(self):
        return len(self.x_keys) + len(self.y_keys)

    def with_degree(self, degree):
        return ControllerStructure(self.m, self.n, degree, self.variable,
                                   self.mask_x, self.mask_y, self.fx, self.fy,
                                   self.boundary, self.ts)

    def controller(self, params):
        """Controller from a flat vector ordered as ``x_keys + y_keys``."""
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise InputError(f"expected {self.n_params} parameters, got "
                             f"{params.shape}")
        p = self.degree
        x = np.zeros((p + 1, self.m, self.n))
        y = np.zeros((p + 1, self.n, self.n))
        y[p] = np.eye(self.n)
        nx = len(self.x_keys)
        if nx:
            d, r, c = np.array(self.x_keys).T
            x[d, r, c] = params[:nx]
        if self.y_keys:
            d, r, c = np.array(self.y_keys).T
            y[d, r, c] = params[nx:]
        return Controller(self, x, y)

    def initial(self, x_coeffs, y_coeffs):
        """Controller from explicit free-part coefficients (masks applied)."""
        return Controller(self, x_coeffs, y_coeffs)

    def basis_x(self, points):
        """Evaluated X basis: ``(K, n_x, m, n)`` with ``v^d F_x[r,c](v) E_rc``."""
        pts = np.asarray(points, dtype=complex)
        keys = self.x_keys
        out = np.zeros((pts.size, len(keys), self.m, self.n), dtype=complex)
        f = self.fx(pts)
        for i, (d, r, c) in enumerate(keys):
            out[:, i, r, c] = pts ** d * f[:, r, c]
        return out

    def basis_y(self, points):
        """Evaluated Y basis plus the fixed monic part ``v^p I o F_y``."""
        pts = np.asarray(points, dtype=complex)
        keys = self.y_keys
        out = np.zeros((pts.size, len(keys), self.n, self.n), dtype=complex)
        f = self.fy(pts)
        for i, (d, r, c) in enumerate(keys):
            out[:, i, r, c] = pts ** d * f[:, r, c]
        const = (pts ** self.degree)[:, None, None] * np.eye(self.n) * f
        return out, const


@dataclass(frozen=True, eq=False)
class Controller:
    """A point in a `ControllerStructure`: free parts of X and Y.

    ``x`` has shape ``(p+1, m, n)`` and ``y`` shape ``(p+1, n, n)`` with
    ``y[p] = I``.  Used both as a design result and as a linearization
    point.
    """
    structure: ControllerStructure
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        st = self.structure
        p = st.degree
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float)
        if x.shape != (p + 1, st.m, st.n) or y.shape != (p + 1, st.n, st.n):
            raise InputError(f"coefficient shapes {x.shape}, {y.shape} do not "
                             f"match degree {p} and size {st.m}x{st.n}")
        if not np.allclose(y[p], np.eye(st.n), rtol=0, atol=1e-12):
            raise InputError("leading coefficient of Y must be the identity")
        y[p] = np.eye(st.n)
        x[:, ~st.mask_x] = 0.0
        y[:, ~st.mask_y] = 0.0
        object.__setattr__(self, 'x', _frozen(x))
        object.__setattr__(self, 'y', _frozen(y))

    @property
    def params(self):
        st = self.structure
        px = [self.x[k] for k in st.x_keys]
        py = [self.y[k] for k in st.y_keys]
        return np.array(px + py, dtype=float)

    @property
    def X(self):
        """Full numerator polynomial ``X~ o F_x``."""
        st = self.structure
        return MatrixPolynomial(self.x, st.variable).hadamard(st.fx)

    @property
    def Y(self):
        st = self.structure
        return MatrixPolynomial(self.y, st.variable).hadamard(st.fy)

    def evaluate(self, points):
        """Return ``(X(v), Y(v))`` evaluated at complex points."""
        st = self.structure
        pts = np.atleast_1d(np.asarray(points, dtype=complex))
        xv = MatrixPolynomial(self.x, st.variable)(pts) * st.fx(pts)
        yv = MatrixPolynomial(self.y, st.variable)(pts) * st.fy(pts)
        return xv, yv

    def response(self, points, omega=None):
        """``K(v) = X(v) Y(v)^-1``; raises `EvaluationError` if Y is singular."""
        xv, yv = self.evaluate(points)
        scale = np.maximum(np.abs(yv).max(axis=(1, 2)), 1e-300)
        bad = np.flatnonzero(
            np.abs(np.linalg.det(yv / scale[:, None, None])) < 1e-13)
        if bad.size:
            w = None if omega is None else float(np.atleast_1d(omega)[bad[0]])
            raise EvaluationError(f"Y is singular at w = {w!r} rad/s", omega=w)
        # X Y^-1 = (Y^-T X^T)^T
        return np.swapaxes(np.linalg.solve(np.swapaxes(yv, 1, 2),
                                           np.swapaxes(xv, 1, 2)), 1, 2)

    def with_structure(self, structure):
        return Controller(structure, self.x, self.y)


def controller_frequency_response(ctrl, grid, omega=None):
    """``K`` on a grid, shape ``(K, m, n)``."""
    w = grid.omega if omega is None else np.asarray(omega, dtype=float)
    return ctrl.response(grid.points(w), w)


def augment_order(ctrl, target_degree):
    """Raise the degree of X and Y by a common monic scalar factor.

    The factor is ``z^d`` for discrete and ``(s+1)^d`` for continuous
    controllers, so ``K = X Y^-1`` is unchanged.
    """
    st = ctrl.structure
    d = int(target_degree) - st.degree
    if d < 0:
        raise InputError("target degree is below the current degree")
    if d == 0:
        return ctrl
    if st.variable == 'z':
        factor = np.zeros(d + 1)
        factor[d] = 1.0
    else:
        factor = np.array([1.0])
        for _ in range(d):
            factor = np.convolve(factor, [1.0, 1.0])
    x = MatrixPolynomial(ctrl.x, st.variable).scale_poly(factor).coeffs
    y = MatrixPolynomial(ctrl.y, st.variable).scale_poly(factor).coeffs
    return Controller(st.with_degree(st.degree + d), x, y)


def poly_det_coeffs(mp, degree_bound=None):
    """Ascending coefficients of ``det mp(v)`` for a square polynomial matrix.

    Evaluates the determinant at scaled roots of unity and interpolates
    with an inverse FFT.
    """
    n = mp.shape[0]
    if mp.shape != (n, n):
        raise InputError("determinant of a non-square polynomial matrix")
    bound = n * mp.degree if degree_bound is None else int(degree_bound)
    M = bound + 1
    # radius balancing the coefficient magnitudes keeps interpolation accurate
    norms = np.abs(mp.coeffs).max(axis=(1, 2))
    nz = np.flatnonzero(norms)
    if nz.size >= 2 and mp.degree > 0:
        radius = (norms[nz[0]] / norms[nz[-1]]) ** (1.0 / (nz[-1] - nz[0]))
        radius = float(np.clip(radius, 1e-3, 1e3))
    else:
        radius = 1.0
    pts = radius * np.exp(2j * np.pi * np.arange(M) / M)
    vals = np.linalg.det(mp(pts))
    coeffs = np.fft.fft(vals) / M
    coeffs = coeffs.real / radius ** np.arange(M)
    return coeffs


# ----------------------------------------------------------------------------
# Text serialization

def _fmt(x):
    return repr(float(x))


def write_controller(path, ctrl):
    """Write the CTRL text format (lossless decimal)."""
    st = ctrl.structure
    lines = [f"CTRL {st.m} {st.n} {st.degree} {st.variable}"]
    if st.ts is not None:
        lines.append(f"TS {_fmt(st.ts)}")
    if st.boundary:
        lines.append("BOUNDARY " + " ".join(_fmt(b) for b in st.boundary))
    lines.append("MASKX " + " ".join(str(int(b)) for b in st.mask_x.ravel()))
    lines.append("MASKY " + " ".join(str(int(b)) for b in st.mask_y.ravel()))
    for c in ctrl.x:
        lines.append(" ".join(_fmt(v) for v in c.ravel()))
    for c in ctrl.y:
        lines.append(" ".join(_fmt(v) for v in c.ravel()))
    for f in (st.fx, st.fy):
        r, cc = f.shape
        for i in range(r):
            for j in range(cc):
                lines.append(" ".join(_fmt(v) for v in f.coeffs[:, i, j]))
    with open(path, 'w') as fh:
        fh.write("\n".join(lines) + "\n")


def read_controller(path):
    with open(path) as fh:
        lines = [ln.split('#', 1)[0].strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    try:
        tag, m, n, p, var = lines[0].split()
        if tag != 'CTRL':
            raise ValueError
        m, n, p = int(m), int(n), int(p)
    except (IndexError, ValueError):
        raise InputError(f"{path}: bad header") from None
    ts, boundary, mask_x, mask_y = None, (), 'full', 'full'
    body = lines[1:]
    while body and body[0].split()[0] in ('TS', 'BOUNDARY', 'MASKX', 'MASKY'):
        key, *vals = body.pop(0).split()
        if key == 'TS':
            ts = float(vals[0])
        elif key == 'BOUNDARY':
            boundary = tuple(float(v) for v in vals)
        elif key == 'MASKX':
            mask_x = np.array([int(v) for v in vals], bool).reshape(m, n)
        else:
            mask_y = np.array([int(v) for v in vals], bool).reshape(n, n)
    try:
        rows = [[float(t) for t in ln.split()] for ln in body]
    except ValueError:
        raise InputError(f"{path}: non-numeric coefficient") from None
    need = 2 * (p + 1) + m * n + n * n
    if len(rows) != need:
        raise InputError(f"{path}: expected {need} coefficient lines, found "
                         f"{len(rows)}")
    try:
        x = np.array(rows[:p + 1]).reshape(p + 1, m, n)
        y = np.array(rows[p + 1:2 * p + 2]).reshape(p + 1, n, n)
    except ValueError:
        raise InputError(f"{path}: coefficient matrix of the wrong size") \
            from None
    rest = rows[2 * p + 2:]

    def entry_poly(entries, r, c):
        deg = max(len(e) for e in entries) - 1
        out = np.zeros((deg + 1, r, c))
        for k, e in enumerate(entries):
            out[:len(e), k // c, k % c] = e
        return MatrixPolynomial(out, var)

    fx = entry_poly(rest[:m * n], m, n)
    fy = entry_poly(rest[m * n:], n, n)
    st = ControllerStructure(m, n, p, var, mask_x, mask_y, fx, fy, boundary,
                             ts)
    return Controller(st, x, y)
