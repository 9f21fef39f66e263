"""Iterative controller synthesis.

Each iteration linearizes the quadratic terms at the current controller,
solves the resulting convex problem and takes its solution as the next
linearization point.  Because the tangent is exact at the linearization
point, the previous solution stays feasible and the objective never
increases.
"""

import csv
import io
import json
import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .analysis import certify_stability
from .constraints import OBJECTIVES, DesignSpec, FrequencyProblem
from .controller import (Controller, ControllerStructure, MatrixPolynomial,
                         augment_order)
from .exceptions import (EvaluationError, InitializationError, InputError,
                         SynthesisError)
from .freqdata import (FrequencyResponseSet, RationalMatrixWeight,
                       RationalWeight, build_log_grid, interpolate_complex)
from .sdp import SdpSettings, solve_generated

__all__ = [
    'IterationTrace', 'SynthesisConfig', 'SynthesisReport', 'build_structure',
    'h2_objective', 'init_epsilon_static', 'load_config',
    'quadrature_weights', 'regrid', 'reinit_random', 'run_synthesis',
]

log = logging.getLogger(__name__)

INITIALIZERS = ('epsilon_static', 'user_supplied', 'random_restart')
QUADRATURES = ('trapezoid', 'uniform_sum')


# ----------------------------------------------------------------------------
# Configuration

@dataclass(frozen=True, eq=False)
class SynthesisConfig:
    """Everything `run_synthesis` needs besides the plant data.

    Parameters
    ----------
    spec : DesignSpec
        Objective and weights.
    degree : int
        Degree ``p`` of the free controller polynomials.
    mask_x, mask_y : 'full', 'diag' or boolean matrix
    fx, fy : MatrixPolynomial or list, optional
        Fixed element-wise factors of X and Y.  A list of ascending
        coefficients multiplies every entry; nested lists give one
        coefficient list per entry.
    boundary : sequence of float, optional
        Frequencies of roots of ``F_y`` on the stability boundary.  Derived
        from a scalar ``fy`` when None.
    grid_min, grid_max, grid_points : optional
        Re-sample the plant data on a log grid (linear interpolation).
    max_iterations : int
    stop_tol : float
        Stop when the relative objective change falls below this value.
    delta_feas : float
        Strictness margin: every block is constrained to ``>= delta I``.
    quadrature : {'trapezoid', 'uniform_sum'}
        Frequency weights of the H2 objectives.
    certify : bool
        Run the Nyquist certificate on the final controller.
    dense_factor : int
        Density of the certificate grid.
    initializer : {'epsilon_static', 'user_supplied', 'random_restart'}
    epsilon : float
        Starting gain of the static initializer.
    seed, trials : int
        Random initializer settings.
    relax_factor, relax_rounds :
        Weight scaling used when the first problem is infeasible.
    solver : SdpSettings
    """
    spec: DesignSpec = field(default_factory=DesignSpec)
    degree: int = 2
    mask_x: object = 'full'
    mask_y: object = 'full'
    fx: MatrixPolynomial = None
    fy: MatrixPolynomial = None
    boundary: tuple = None
    grid_min: float = None
    grid_max: float = None
    grid_points: int = None
    max_iterations: int = 50
    stop_tol: float = 1e-4
    delta_feas: float = 1e-8
    quadrature: str = 'trapezoid'
    certify: bool = True
    dense_factor: int = 10
    initializer: str = 'epsilon_static'
    epsilon: float = 1e-2
    seed: int = 0
    trials: int = 5
    relax_factor: float = 0.5
    relax_rounds: int = 4
    solver: SdpSettings = field(default_factory=SdpSettings)

    def __post_init__(self):
        if not self.stop_tol > 0:
            raise InputError("stop_tol must be positive")
        if self.max_iterations < 1:
            raise InputError("max_iterations must be at least 1")
        if self.degree < 0:
            raise InputError("degree must be non-negative")
        if self.initializer not in INITIALIZERS:
            raise InputError(f"unknown initializer {self.initializer!r}")
        if self.quadrature not in QUADRATURES:
            raise InputError(f"unknown quadrature {self.quadrature!r}")
        if not 0 < self.relax_factor < 1:
            raise InputError("relax_factor must lie in (0, 1)")
        if self.delta_feas < 0:
            raise InputError("delta_feas must be non-negative")
        grid = (self.grid_min, self.grid_max, self.grid_points)
        if any(g is not None for g in grid) and None in grid:
            raise InputError("grid_min, grid_max and grid_points go together")

    @property
    def sdp_settings(self):
        return replace(self.solver, delta=self.delta_feas)


def _weight_from_json(obj, where):
    if obj is None:
        return None
    if isinstance(obj, (int, float)):
        return float(obj)
    if isinstance(obj, list):
        return np.array(obj, dtype=float)
    if isinstance(obj, dict):
        keys = set(obj)
        if 'entries' in keys:
            _check_keys(obj, {'entries', 'variable', 'ts'}, where)
            return RationalMatrixWeight(obj['entries'], obj.get('variable'),
                                        obj.get('ts'))
        _check_keys(obj, {'num', 'den', 'size', 'variable', 'ts'}, where)
        if 'num' not in keys:
            raise InputError(f"{where}: rational weight needs 'num'")
        return RationalWeight(obj['num'], obj.get('den', [1.0]),
                              obj.get('size', 1), obj.get('variable'),
                              obj.get('ts'))
    raise InputError(f"{where}: cannot interpret weight {obj!r}")


def _factor_from_json(obj, shape, variable, where):
    """Scalar polynomial (ascending list) or per-entry nested lists."""
    if obj is None:
        return None
    a = obj
    if a and all(isinstance(v, (int, float)) for v in a):
        return MatrixPolynomial.ones(shape, variable).scale_poly(
            np.asarray(a, dtype=float))
    try:
        deg = max(len(e) for row in a for e in row) - 1
        out = np.zeros((deg + 1,) + shape)
        for r, row in enumerate(a):
            for c, e in enumerate(row):
                out[:len(e), r, c] = e
    except (TypeError, IndexError, ValueError):
        raise InputError(f"{where}: bad fixed factor") from None
    return MatrixPolynomial(out, variable)


def _check_keys(obj, allowed, where):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise InputError(f"{where}: unknown keys {sorted(unknown)}")


_SPEC_KEYS = ('objective', 'w1', 'w2', 'target', 'uncertainty', 'bounds',
              'stability_block', 'det_y_block')


def config_from_dict(d):
    """Build a `SynthesisConfig` from a plain mapping; unknown keys fail.

    Fixed factors stay as coefficient lists because their shape and
    variable depend on the plant data; see `build_structure`.
    """
    if not isinstance(d, dict):
        raise InputError("config must be a mapping")
    simple = {f.name for f in fields(SynthesisConfig)} - {'spec', 'solver'}
    _check_keys(d, set(_SPEC_KEYS) | simple | {'solver'}, "config")
    sd = {}
    for k in ('w1', 'w2', 'target'):
        if k in d:
            sd[k] = _weight_from_json(d[k], k)
    if d.get('uncertainty') is not None:
        u = d['uncertainty']
        if not isinstance(u, list) or len(u) != 2:
            raise InputError("uncertainty must be a pair of weights")
        sd['uncertainty'] = tuple(_weight_from_json(w, 'uncertainty')
                                  for w in u)
    if 'bounds' in d:
        sd['bounds'] = tuple((b[0], _weight_from_json(b[1], 'bounds'))
                             for b in d['bounds'])
    for k in ('objective', 'stability_block', 'det_y_block'):
        if k in d:
            sd[k] = d[k]
    kw = {k: d[k] for k in simple if k in d}
    for k in ('mask_x', 'mask_y'):
        if isinstance(kw.get(k), list):
            kw[k] = np.array(kw[k], dtype=bool)
    if kw.get('boundary') is not None:
        kw['boundary'] = tuple(kw['boundary'])
    solver = d.get('solver', {})
    _check_keys(solver, {f.name for f in fields(SdpSettings)}, "solver")
    return SynthesisConfig(spec=DesignSpec(**sd),
                           solver=SdpSettings(**solver), **kw)


def load_config(path):
    """Read a JSON synthesis configuration."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(d)


def _boundary_from_factor(fy, grid, tol=1e-8):
    """Boundary frequencies of a scalar fixed factor of Y."""
    c = fy.coeffs
    if not np.allclose(c, c[:, :1, :1], atol=0):
        return ()
    poly = c[:, 0, 0][::-1]
    roots = np.roots(np.trim_zeros(poly, 'f'))
    out = []
    for r in roots:
        if grid.discrete and abs(abs(r) - 1) < tol:
            out.append(abs(np.angle(r)) / grid.ts)
        elif not grid.discrete and abs(r.real) < tol:
            out.append(abs(r.imag))
    return tuple(sorted(set(np.round(out, 12))))


def build_structure(cfg, frs):
    """Controller structure of `cfg` for the plant data `frs`."""
    grid = frs.grid
    var = grid.variable
    fx, fy = cfg.fx, cfg.fy
    if fx is not None and not isinstance(fx, MatrixPolynomial):
        fx = _factor_from_json(fx, (frs.m, frs.n), var, 'fx')
    if fy is not None and not isinstance(fy, MatrixPolynomial):
        fy = _factor_from_json(fy, (frs.n, frs.n), var, 'fy')
    boundary = cfg.boundary
    if boundary is None:
        boundary = () if fy is None else _boundary_from_factor(fy, grid)
    return ControllerStructure(frs.m, frs.n, cfg.degree, var, cfg.mask_x,
                               cfg.mask_y, fx, fy, boundary, grid.ts)


def regrid(frs, w_min, w_max, n_points):
    """Linearly interpolate plant data onto a log grid."""
    g = frs.grid
    grid = build_log_grid(w_min, w_max, n_points, g.excluded, g.ts)
    resp = np.stack([interpolate_complex(g.omega, r, grid.omega)
                     for r in frs.responses])
    return FrequencyResponseSet(resp, grid, frs.unstable_poles)


# ----------------------------------------------------------------------------
# H2 quadrature

def quadrature_weights(grid, rule='trapezoid'):
    """Per-frequency weights of the H2 objective.

    'trapezoid' integrates over ``grid.interval`` with the end intervals
    closed by constant extension; 'uniform_sum' gives every point weight 1.
    """
    w = grid.omega
    if rule == 'uniform_sum':
        return np.ones(w.size)
    if rule != 'trapezoid':
        raise InputError(f"unknown quadrature {rule!r}")
    a, b = grid.interval
    edges = np.concatenate([[a], (w[:-1] + w[1:]) / 2, [b]])
    return np.diff(edges)


def h2_objective(gamma_values, grid, rule='trapezoid'):
    """Quadrature of ``trace Gamma`` summed over models.

    `gamma_values` has shape ``(K, d, d)`` or ``(q, K, d, d)``.
    """
    g = np.asarray(gamma_values)
    if g.ndim == 3:
        g = g[None]
    tr = np.trace(g, axis1=-2, axis2=-1).real
    return float((tr @ quadrature_weights(grid, rule)).sum())


# ----------------------------------------------------------------------------
# Initializers

def _default_denominator(structure):
    """``v^p I`` (discrete) or ``(s+1)^p I`` (continuous) free part of Y."""
    p, n = structure.degree, structure.n
    if structure.variable == 'z':
        c = np.zeros(p + 1)
        c[p] = 1.0
    else:
        c = np.array([1.0])
        for _ in range(p):
            c = np.convolve(c, [1.0, 1.0])
    return c[:, None, None] * np.eye(n)


def _is_stable(frs, ctrl, dense_factor):
    try:
        return certify_stability(frs, ctrl, dense_factor).stable
    except EvaluationError:
        return False


def init_epsilon_static(frs, structure, epsilon=1e-2, max_shrink=8,
                        dense_factor=10):
    """Small static gain over the default monic denominator.

    ``X = eps I`` (padded to ``m x n``) and ``Y = v^p I`` (``(s+1)^p I`` in
    continuous time), both times the fixed factors.  Both signs are tried
    and ``eps`` shrinks by decades until the certificate accepts it.
    """
    if np.any(np.asarray(frs.unstable_poles) > 0):
        raise InitializationError(
            "plant has unstable poles; supply a stabilizing controller")
    p = structure.degree
    y = _default_denominator(structure)
    base = np.zeros((p + 1, structure.m, structure.n))
    base[0] = np.eye(structure.m, structure.n)
    eps = float(epsilon)
    for _ in range(max_shrink + 1):
        for sign in (1.0, -1.0):
            ctrl = Controller(structure, sign * eps * base, y)
            if _is_stable(frs, ctrl, dense_factor):
                log.info("static initializer: eps = %g", sign * eps)
                return ctrl
        eps /= 10
    raise InitializationError("no stabilizing static gain found")


def _margin(frs, structure, params):
    """``min Re det(I + G K)`` over models and grid, -inf if K is undefined."""
    try:
        ctrl = structure.controller(params)
        K = ctrl.response(frs.grid.points(), frs.grid.omega)
    except (EvaluationError, InputError):
        return -np.inf
    G = np.asarray(frs.responses)
    d = np.linalg.det(np.eye(frs.n) + G @ K[None])
    return float(d.real.min())


def reinit_random(frs, structure, trials, seed=0, iterations=200, step=0.5,
                  decay=0.98, dense_factor=10):
    """Random multi-start search for stabilizing controllers.

    Each trial maximizes ``min Re det(I + G K)`` with a coordinate search
    from a random start.  Returns the controllers whose optimum exceeds -1
    and that pass the Nyquist certificate, best first.
    """
    rng = np.random.default_rng(seed)
    nominal = Controller(structure,
                         np.zeros((structure.degree + 1, structure.m,
                                   structure.n)),
                         _default_denominator(structure)).params
    found = []
    for _ in range(int(trials)):
        x = nominal + rng.normal(scale=0.1, size=nominal.size)
        best = _margin(frs, structure, x)
        h = step
        for _ in range(iterations):
            j = rng.integers(nominal.size)
            for s in (h, -h):
                trial = x.copy()
                trial[j] += s
                ft = _margin(frs, structure, trial)
                if ft > best:
                    x, best = trial, ft
                    break
            h *= decay
        if best > -1:
            ctrl = structure.controller(x)
            if _is_stable(frs, ctrl, dense_factor):
                found.append((best, ctrl))
    found.sort(key=lambda t: -t[0])
    return [c for _, c in found]


# ----------------------------------------------------------------------------
# Iteration

@dataclass
class IterationTrace:
    """Objective, solver status and residuals of every iteration.

    ``residual`` is the smallest eigenvalue of all blocks at the solution;
    ``inherited`` is the smallest eigenvalue of the new blocks evaluated at
    the previous solution (non-negative up to solver precision).
    """
    objective: list = field(default_factory=list)
    status: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    inherited: list = field(default_factory=list)
    stage: list = field(default_factory=list)
    controllers: list = field(default_factory=list)
    rounds: list = field(default_factory=list)

    def __len__(self):
        return len(self.objective)

    def append(self, objective, status, residual, inherited, stage, ctrl,
               rounds):
        self.objective.append(objective)
        self.status.append(status)
        self.residual.append(residual)
        self.inherited.append(inherited)
        self.stage.append(stage)
        self.controllers.append(ctrl)
        self.rounds.append(rounds)

    def main_objectives(self):
        return [o for o, s in zip(self.objective, self.stage) if s == 'main']

    def to_csv(self):
        """CSV text with columns iteration, objective, status, residual, stage."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator='\n')
        w.writerow(['iteration', 'objective', 'status', 'residual', 'stage'])
        for i in range(len(self)):
            obj, res = self.objective[i], self.residual[i]
            w.writerow([i, '' if obj is None else repr(float(obj)),
                        self.status[i],
                        '' if res is None else repr(float(res)),
                        self.stage[i]])
        return buf.getvalue()


@dataclass(eq=False)
class SynthesisReport:
    """Result of `run_synthesis`.

    ``status`` is 'converged' or 'max_iterations'.
    """
    controller: Controller
    trace: IterationTrace
    status: str
    objective: float
    iterations: int
    initial: Controller
    certificate: object = None
    relaxation: list = field(default_factory=list)
    problem: FrequencyProblem = None
    solution: np.ndarray = None


def _worst_block_eig(problem, families, z):
    src = problem.numeric(z)
    worst = np.inf
    for fam in families:
        vals = fam.build(src, np.arange(fam.n_freq)).const
        worst = min(worst, float(np.linalg.eigvalsh(vals)[:, 0].min()))
    return worst


def _iterate(problem, ctrl, cfg, trace, stage, max_iterations):
    """Run the linearize-solve loop.  Returns (controller, z, status, obj).

    The first element of the returned status is 'converged',
    'max_iterations', or the failing solver status.
    """
    st = problem.structure
    settings = cfg.sdp_settings
    weights = quadrature_weights(problem.grid, cfg.quadrature)
    c = problem.objective_vector(None if problem.spec.uses_gamma else weights)
    active = {}
    prev_obj, prev_z = None, None
    for it in range(max_iterations):
        lp = problem.linearization(ctrl)
        fams = problem.families(lp)
        inherited = None
        if prev_z is not None:
            inherited = _worst_block_eig(problem, fams, prev_z)
            if inherited < -10 * settings.tol:
                log.warning("previous solution violates the new blocks by "
                            "%.3g", inherited)
        sol = solve_generated(fams, c, problem.symbolic(), problem.numeric,
                              settings, active)
        rounds = sol.info.get('rounds')
        if sol.status != 'optimal':
            trace.append(None, sol.status, sol.worst_eig, inherited, stage,
                         ctrl, rounds)
            return ctrl, prev_z, sol.status, prev_obj
        params, _ = problem.layout.split(sol.x)
        ctrl = st.controller(params)
        obj = float(sol.objective)
        trace.append(obj, sol.status, sol.worst_eig, inherited, stage, ctrl,
                     rounds)
        log.info("%s iteration %d: objective %.10g (%s rounds)", stage, it,
                 obj, rounds)
        if prev_obj is not None:
            change = abs(prev_obj - obj)
            if change < cfg.stop_tol * abs(prev_obj) or change < 1e-10:
                return ctrl, sol.x, 'converged', obj
        prev_obj, prev_z = obj, sol.x
    return ctrl, prev_z, 'max_iterations', prev_obj


def run_synthesis(cfg, frs, initial=None):
    """Iterative synthesis from an initial controller.

    Parameters
    ----------
    cfg : SynthesisConfig
    frs : FrequencyResponseSet
    initial : Controller, optional
        Required for ``initializer='user_supplied'``; its degree is raised
        to ``cfg.degree`` if lower.

    Returns
    -------
    SynthesisReport

    Raises
    ------
    SynthesisError
        If the problem stays infeasible after the relaxation rounds or the
        solver fails; ``trace`` holds the completed iterations.
    """
    if cfg.grid_points is not None:
        frs = regrid(frs, cfg.grid_min, cfg.grid_max, cfg.grid_points)
    structure = build_structure(cfg, frs)
    if cfg.initializer == 'user_supplied' or initial is not None:
        if initial is None:
            raise InitializationError("no initial controller supplied")
        if initial.structure.degree < structure.degree:
            initial = augment_order(initial, structure.degree)
        if initial.structure.degree != structure.degree:
            raise InputError("initial controller degree exceeds the "
                             "configured degree")
        ctrl0 = initial.with_structure(structure)
    elif cfg.initializer == 'epsilon_static':
        ctrl0 = init_epsilon_static(frs, structure, cfg.epsilon,
                                    dense_factor=cfg.dense_factor)
    else:
        found = reinit_random(frs, structure, cfg.trials, cfg.seed,
                              dense_factor=cfg.dense_factor)
        if not found:
            raise InitializationError("random search found no stabilizing "
                                      "controller")
        ctrl0 = found[0]

    trace = IterationTrace()
    problem = FrequencyProblem(cfg.spec, frs, structure)
    ctrl, z, status, obj = _iterate(problem, ctrl0, cfg, trace, 'main',
                                    cfg.max_iterations)
    relaxation = []
    if status == 'infeasible' and len(trace) == 1:
        start = ctrl0
        for k in range(1, cfg.relax_rounds + 1):
            scale = cfg.relax_factor ** k
            relaxation.append(scale)
            log.info("relaxing weights by %g", scale)
            relaxed = FrequencyProblem(cfg.spec, frs, structure,
                                       weight_scale=scale)
            rc, _, rstatus, _ = _iterate(relaxed, start, cfg, trace,
                                         f"relaxed-{scale:g}",
                                         cfg.max_iterations)
            if rstatus not in ('converged', 'max_iterations'):
                continue
            start = rc
            n0 = len(trace)
            ctrl, z, status, obj = _iterate(problem, rc, cfg, trace, 'main',
                                            cfg.max_iterations)
            if not (status == 'infeasible' and len(trace) == n0 + 1):
                break
    if status not in ('converged', 'max_iterations'):
        raise SynthesisError(f"synthesis failed: {status}", status, trace)

    cert = None
    if cfg.certify:
        cert = certify_stability(frs, ctrl, cfg.dense_factor, reference=ctrl0)
    return SynthesisReport(ctrl, trace, status, obj,
                           trace.stage.count('main'), ctrl0, cert, relaxation,
                           problem, z)
