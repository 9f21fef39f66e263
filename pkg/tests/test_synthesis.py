import json

import numpy as np
import pytest

from fdlmi.analysis import certify_stability
from fdlmi.constraints import DesignSpec
from fdlmi.controller import Controller, ControllerStructure
from fdlmi.exceptions import InitializationError, InputError, SynthesisError
from fdlmi.freqdata import (FrequencyGrid, RationalWeight, build_log_grid,
                            frs_from_rational)
from fdlmi.sdp import SdpSettings
from fdlmi.synthesis import (IterationTrace, SynthesisConfig,
                             build_structure, config_from_dict, h2_objective,
                             init_epsilon_static, load_config,
                             quadrature_weights, regrid, reinit_random,
                             run_synthesis)

from plants import RationalPlant

TS = 1.0
PLANT = RationalPlant([np.array([-0.5, 1.0])], [[np.array([0.4])]], TS)


def siso_frs(n_points=30, unstable=0, den=(1, -0.5), w_min=1e-2):
    g = build_log_grid(w_min, 0.98 * np.pi, n_points, ts=TS)
    return frs_from_rational([[[([0.4], list(den))]]], g,
                             unstable_poles=[unstable])


def mixed_cfg(**kw):
    spec = kw.pop('spec', DesignSpec(w1=RationalWeight([1, 0.1], [1, -0.99],
                                                       variable='z'),
                                     w2=0.3))
    kw.setdefault('degree', 1)
    kw.setdefault('max_iterations', 15)
    return SynthesisConfig(spec=spec, **kw)


# ----------------------------------------------------------------------------
# configuration

def test_config_validation():
    for bad in (dict(stop_tol=0), dict(max_iterations=0),
                dict(initializer='guess'), dict(quadrature='simpson'),
                dict(relax_factor=1.0), dict(grid_min=1.0)):
        with pytest.raises(InputError):
            SynthesisConfig(**bad)
    cfg = SynthesisConfig(delta_feas=1e-7)
    assert cfg.sdp_settings.delta == 1e-7
    assert cfg.max_iterations == 50 and cfg.stop_tol == 1e-4


def test_config_from_json(tmp_path):
    d = {"objective": "hinf-mixed",
         "w1": {"num": [1, 3], "den": [3, 0.3]},
         "w2": 0.5,
         "degree": 2, "mask_y": "diag", "fy": [-1, 1],
         "bounds": [["T", [[2.0]]]],
         "uncertainty": [1.0, {"entries": [[[[1], [1, 1]]]]}],
         "solver": {"tol": 1e-7}}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(d))
    cfg = load_config(path)
    assert cfg.degree == 2 and cfg.solver.tol == 1e-7
    assert isinstance(cfg.spec.w1, RationalWeight)
    assert cfg.spec.bounds[0][0] == 'T'
    st_ = build_structure(cfg, siso_frs())
    assert st_.boundary == (0.0,)
    np.testing.assert_array_equal(st_.fy.coeffs[:, 0, 0], [-1, 1])


@pytest.mark.parametrize("d", [{"degre": 2}, {"solver": {"tolerance": 1}},
                               {"w1": {"num": [1], "poles": [1]}},
                               {"uncertainty": [1.0]}])
def test_config_rejects_unknown_keys(d):
    with pytest.raises(InputError):
        config_from_dict(d)


def test_bad_json_is_input_error(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{degree: 2")
    with pytest.raises(InputError):
        load_config(p)


def test_regrid_keeps_models():
    frs = siso_frs(60)
    r = regrid(frs, 0.1, 1.0, 7)
    assert r.responses.shape == (1, 7, 1, 1)
    assert r.grid.ts == TS


# ----------------------------------------------------------------------------
# quadrature

def test_constant_integrand_on_uniform_grid():
    a, b, c = 0.5, 3.0, 2.5
    g = FrequencyGrid(np.linspace(a, b, 11))
    gam = np.broadcast_to(c * np.eye(2), (11, 2, 2))
    assert h2_objective(gam, g) == pytest.approx(2 * c * (b - a), rel=1e-12)
    assert h2_objective(gam, g, 'uniform_sum') == pytest.approx(2 * c * 11)


def test_single_point_weight_is_interval():
    g = FrequencyGrid([1.0], interval=(0.5, 4.0))
    np.testing.assert_allclose(quadrature_weights(g), [3.5])


def test_quadrature_refinement():
    f = lambda w: 1 / (1 + w ** 2)
    vals = []
    for n in (1000, 2000):
        g = build_log_grid(1e-2, 1e2, n)
        vals.append(h2_objective(f(g.omega)[:, None, None], g))
    assert vals[1] == pytest.approx(vals[0], rel=1e-3)
    assert vals[1] == pytest.approx(np.arctan(1e2) - np.arctan(1e-2),
                                    rel=1e-3)


def test_models_are_summed():
    g = FrequencyGrid(np.linspace(1, 2, 5))
    one = np.ones((5, 1, 1))
    assert h2_objective(np.stack([one, 2 * one]), g) == pytest.approx(3.0)


# ----------------------------------------------------------------------------
# initializers

def test_epsilon_initializer_example():
    # the slow integrator pole needs a grid reaching well below it
    frs = siso_frs(w_min=1e-3)
    cfg = SynthesisConfig(degree=2, fy=[-1.0, 1.0])
    st_ = build_structure(cfg, frs)
    c = init_epsilon_static(frs, st_)
    K = c.response(np.array([np.exp(0.3j)]))[0, 0, 0]
    z = np.exp(0.3j)
    eps = c.x[0, 0, 0]
    assert abs(eps) == pytest.approx(1e-2)
    assert K == pytest.approx(eps / (z ** 2 * (z - 1)), rel=1e-12)
    assert certify_stability(frs, c).stable


def test_epsilon_initializer_2x2_padding():
    g = build_log_grid(1e-3, 3.0, 20, ts=TS)
    ent = [[([0.4], [1, -0.5]), ([0.1], [1, -0.2])],
           [([0.0], [1]), ([0.3], [1, -0.1])]]
    frs = frs_from_rational([ent], g)
    st_ = build_structure(SynthesisConfig(degree=4, fy=[-1.0, 1.0]), frs)
    c = init_epsilon_static(frs, st_)
    np.testing.assert_allclose(c.x[0], 0.01 * np.eye(2))
    np.testing.assert_allclose(c.Y.coeffs[4], -np.eye(2))
    np.testing.assert_allclose(c.Y.coeffs[5], np.eye(2))


def test_epsilon_initializer_refuses_unstable_plant():
    frs = siso_frs(unstable=1, den=(1, -1.5))
    st_ = build_structure(SynthesisConfig(degree=1), frs)
    with pytest.raises(InitializationError):
        init_epsilon_static(frs, st_)


def test_random_reinit():
    frs = siso_frs()
    st_ = build_structure(SynthesisConfig(degree=1), frs)
    assert reinit_random(frs, st_, trials=0) == []
    found = reinit_random(frs, st_, trials=3, seed=1, iterations=40)
    assert found
    for c in found:
        assert certify_stability(frs, c).stable


def test_random_reinit_unstable_plant():
    frs = siso_frs(unstable=1, den=(1, -1.5))
    st_ = build_structure(SynthesisConfig(degree=0), frs)
    found = reinit_random(frs, st_, trials=4, seed=0, iterations=100)
    for c in found:
        poles = RationalPlant([np.array([-1.5, 1.0])], [[np.array([0.4])]],
                              TS).closed_loop_poles(c)
        assert np.all(np.abs(poles) < 1)


# ----------------------------------------------------------------------------
# iteration

@pytest.fixture(scope='module')
def mixed_run():
    return run_synthesis(mixed_cfg(), siso_frs())


def test_run_is_monotone_and_certified(mixed_run):
    r = mixed_run
    obj = r.trace.main_objectives()
    assert r.status == 'converged'
    assert all(b <= a + 1e-7 for a, b in zip(obj, obj[1:]))
    assert r.certificate.stable
    poles = PLANT.closed_loop_poles(r.controller)
    assert np.all(np.abs(poles) < 1)
    # feasibility inheritance: previous solution satisfies the new blocks
    assert all(v is None or v >= -1e-7 for v in r.trace.inherited)
    assert r.objective == obj[-1]


def test_converged_point_is_a_fixed_point(mixed_run):
    r = mixed_run
    again = run_synthesis(mixed_cfg(max_iterations=1), siso_frs(),
                          initial=r.controller)
    change = abs(again.objective - r.objective) / r.objective
    assert change < 1e-4


def test_run_is_deterministic(mixed_run):
    again = run_synthesis(mixed_cfg(), siso_frs())
    assert again.trace.to_csv() == mixed_run.trace.to_csv()


def test_trace_csv_format():
    t = IterationTrace()
    t.append(1.5, 'optimal', -1e-9, None, 'main', None, 1)
    t.append(None, 'infeasible', None, None, 'main', None, 1)
    lines = t.to_csv().splitlines()
    assert lines[0] == "iteration,objective,status,residual,stage"
    assert lines[1] == "0,1.5,optimal,-1e-09,main"
    assert lines[2] == "1,,infeasible,,main"


def test_h2_run_and_bound():
    spec = DesignSpec('h2', w1=RationalWeight([1, 0.1], [1, -0.99],
                                              variable='z'))
    r = run_synthesis(mixed_cfg(spec=spec, max_iterations=10), siso_frs())
    obj = r.trace.main_objectives()
    assert all(b <= a + 1e-7 for a, b in zip(obj, obj[1:]))
    pr, z = r.problem, r.solution
    Gam = pr.layout.local_values(z, 0)
    X, Y = r.controller.evaluate(pr.grid.points())
    S = Y @ np.linalg.inv(Y + pr.G[0] @ X)
    WS = pr.W1 @ S
    bound = WS @ np.conj(np.swapaxes(WS, 1, 2))
    assert np.all(Gam[:, 0, 0] >= bound[:, 0, 0].real * (1 - 1e-6))


def test_user_supplied_initial_is_augmented():
    frs = siso_frs()
    st0 = ControllerStructure(1, 1, 0, 'z', ts=TS)
    k0 = Controller(st0, np.array([[[0.05]]]), np.array([[[1.0]]]))
    r = run_synthesis(mixed_cfg(initializer='user_supplied',
                                max_iterations=3), frs, initial=k0)
    assert r.initial.structure.degree == 1
    with pytest.raises(InitializationError):
        run_synthesis(mixed_cfg(initializer='user_supplied'), frs)


def test_relaxation_exhausted():
    # |S| < 0.625 at all frequencies is out of reach for any controller
    spec = DesignSpec(w1=RationalWeight([1, 0.1], [1, -0.99], variable='z'),
                      w2=0.3, bounds=[('S', 1.6)])
    cfg = mixed_cfg(spec=spec, max_iterations=4, relax_rounds=2)
    with pytest.raises(SynthesisError) as info:
        run_synthesis(cfg, siso_frs())
    exc = info.value
    assert exc.status == 'infeasible'
    assert 'relaxed-0.5' in exc.trace.stage and \
        'relaxed-0.25' in exc.trace.stage


def test_relaxation_recovers():
    # low-frequency sensitivity bound out of reach from the small initial gain
    W = RationalWeight([0.6], [1, -0.9], variable='z')
    spec = DesignSpec(w1=0.5, w2=0.3, bounds=[('S', W)])
    r = run_synthesis(mixed_cfg(spec=spec, max_iterations=6), siso_frs())
    assert r.relaxation == [0.5]
    assert r.trace.status[0] == 'infeasible'
    assert r.trace.stage[-1] == 'main'
    assert r.status in ('converged', 'max_iterations')
    assert r.certificate.stable
