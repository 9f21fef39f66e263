import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fdlmi.controller import (Controller, ControllerStructure,
                              MatrixPolynomial, augment_order,
                              controller_frequency_response, evaluate_poly,
                              make_mask, poly_det_coeffs, read_controller,
                              write_controller)
from fdlmi.exceptions import EvaluationError, InputError
from fdlmi.freqdata import FrequencyGrid

from plants import _poly_det

coef = st.floats(-3, 3, allow_nan=False, allow_subnormal=False)


def test_integrator_vanishes_at_one():
    Y = MatrixPolynomial(np.array([-np.eye(2), np.eye(2)]), 'z')
    np.testing.assert_array_equal(Y(np.array([1.0]))[0], np.zeros((2, 2)))


def test_constant_polynomial():
    X0 = np.array([[1.0, 2.0]])
    X = MatrixPolynomial.constant(X0, 's')
    g = FrequencyGrid([0.1, 10.0])
    np.testing.assert_array_equal(evaluate_poly(X, g)[1], X0)


def test_discrete_example_value():
    # z^2 (z - 1) I at z = j
    Y = MatrixPolynomial.scalar_identity([0, 0, -1, 1], 2, 'z')
    val = Y(np.array([1j]))[0]
    np.testing.assert_allclose(val, (1 - 1j) * np.eye(2), atol=1e-15)


@given(arrays(np.float64, (4, 2, 3), elements=coef),
       st.complex_numbers(max_magnitude=3, allow_nan=False))
def test_horner_matches_polyval(c, v):
    mp = MatrixPolynomial(c, 'z')
    got = mp(np.array([v]))[0]
    for r in range(2):
        for k in range(3):
            assert got[r, k] == pytest.approx(np.polyval(c[::-1, r, k], v),
                                              abs=1e-9)


def _ctrl(struct, rng):
    return struct.controller(rng.normal(size=struct.n_params))


def test_epsilon_controller_response():
    eps = 1e-6
    fy = MatrixPolynomial.ones((2, 2), 'z').scale_poly([-1.0, 1.0])
    st_ = ControllerStructure(2, 2, 2, 'z', fy=fy, ts=0.1)
    x = np.zeros((3, 2, 2))
    x[0] = eps * np.eye(2)
    y = np.zeros((3, 2, 2))
    y[2] = np.eye(2)
    ctrl = Controller(st_, x, y)
    g = FrequencyGrid(np.array([0.5, 3.0, 20.0]), ts=0.1)
    K = controller_frequency_response(ctrl, g)
    z = g.points()
    expect = eps / (z ** 2 * (z - 1))
    np.testing.assert_allclose(K, expect[:, None, None] * np.eye(2),
                               rtol=1e-12)


def test_scalar_value_and_singular_y():
    st_ = ControllerStructure(1, 1, 1, 'z', ts=1.0)
    ctrl = Controller(st_, np.array([[[0.0]], [[0.0]]]) + [[[1.0]], [[0.0]]],
                      np.array([[[-0.5]], [[1.0]]]))
    assert ctrl.response(np.array([1.0]))[0, 0, 0] == pytest.approx(2.0)
    sing = Controller(st_, ctrl.x, np.array([[[-1.0]], [[1.0]]]))
    with pytest.raises(EvaluationError) as info:
        sing.response(np.array([1.0]), np.array([0.0]))
    assert info.value.omega == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_diagonal_y_is_entrywise_division(seed):
    rng = np.random.default_rng(seed)
    st_ = ControllerStructure(2, 2, 2, 's', mask_y='diag')
    ctrl = _ctrl(st_, rng)
    pts = 1j * rng.uniform(0.1, 10, 5)
    X, Y = ctrl.evaluate(pts)
    K = ctrl.response(pts)
    d = np.diagonal(Y, axis1=1, axis2=2)
    np.testing.assert_allclose(K, X / d[:, None, :], rtol=1e-10)


def test_masks():
    assert make_mask('diag', (2, 3)).tolist() == [[1, 0, 0], [0, 1, 0]]
    with pytest.raises(InputError):
        ControllerStructure(2, 2, 1, mask_y=np.array([[0, 1], [1, 1]]))
    st_ = ControllerStructure(2, 2, 1, 'z', mask_x='diag')
    c = Controller(st_, np.ones((2, 2, 2)), np.array([np.ones((2, 2)),
                                                      np.eye(2)]))
    assert np.all(c.x[:, 0, 1] == 0) and np.all(c.x[:, 1, 0] == 0)
    aug = augment_order(c, 3)
    assert np.all(aug.x[:, ~st_.mask_x] == 0)


def test_monic_y_required():
    st_ = ControllerStructure(2, 2, 1, 'z')
    with pytest.raises(InputError):
        Controller(st_, np.zeros((2, 2, 2)), np.ones((2, 2, 2)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(['s', 'z']),
       st.integers(0, 2), st.integers(0, 3))
def test_augment_order_preserves_response(seed, var, p, extra):
    rng = np.random.default_rng(seed)
    st_ = ControllerStructure(2, 3, p, var)
    ctrl = _ctrl(st_, rng)
    w = rng.uniform(0.05, 3.0, 50)
    pts = 1j * w if var == 's' else np.exp(1j * w)
    try:
        K0 = ctrl.response(pts)
    except EvaluationError:
        return
    aug = augment_order(ctrl, p + extra)
    assert aug.structure.degree == p + extra
    np.testing.assert_allclose(aug.response(pts), K0, rtol=1e-10, atol=1e-12)


def test_augment_static_gain_examples():
    ksof = np.array([[0.3, -0.1]])
    st_ = ControllerStructure(1, 2, 0, 's')
    c = Controller(st_, ksof[None], np.eye(2)[None])
    a = augment_order(c, 2)
    np.testing.assert_allclose(a.x[:, 0, 0], 0.3 * np.array([1, 2, 1]))
    np.testing.assert_allclose(a.y[:, 1, 1], [1, 2, 1])
    st_z = ControllerStructure(1, 2, 0, 'z')
    az = augment_order(Controller(st_z, ksof[None], np.eye(2)[None]), 2)
    np.testing.assert_allclose(az.x[2], ksof)
    assert np.all(az.x[:2] == 0)
    assert augment_order(c, 0) is c


def test_basis_reconstructs_evaluation():
    rng = np.random.default_rng(1)
    fx = MatrixPolynomial(rng.normal(size=(2, 2, 3)), 'z')
    fy = MatrixPolynomial.ones((3, 3), 'z').scale_poly([-1.0, 1.0])
    st_ = ControllerStructure(2, 3, 2, 'z', mask_x='diag', fx=fx, fy=fy)
    ctrl = _ctrl(st_, rng)
    pts = np.exp(1j * rng.uniform(0.1, 3, 7))
    X, Y = ctrl.evaluate(pts)
    bx = st_.basis_x(pts)
    by, const = st_.basis_y(pts)
    nx = len(st_.x_keys)
    p = ctrl.params
    np.testing.assert_allclose(np.einsum('kvrc,v->krc', bx, p[:nx]), X,
                               atol=1e-12)
    np.testing.assert_allclose(const + np.einsum('kvrc,v->krc', by, p[nx:]),
                               Y, atol=1e-12)
    assert st_.controller(p).params.tolist() == p.tolist()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(0, 3))
def test_determinant_coefficients_match_cofactors(seed, n, deg):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(deg + 1, n, n))
    mp = MatrixPolynomial(c, 'z')
    entries = [[c[:, i, j] for j in range(n)] for i in range(n)]
    expect = _poly_det(entries)
    got = poly_det_coeffs(mp)
    size = max(expect.size, got.size)
    np.testing.assert_allclose(np.pad(got, (0, size - got.size)),
                               np.pad(expect, (0, size - expect.size)),
                               atol=1e-9 * max(1, np.abs(expect).max()))


def test_controller_file_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    fy = MatrixPolynomial.ones((2, 2), 'z').scale_poly([-1.0, 1.0])
    st_ = ControllerStructure(3, 2, 2, 'z', mask_x=rng.random((3, 2)) > 0.3,
                              mask_y='diag', fy=fy, boundary=(0.0,), ts=0.01)
    ctrl = _ctrl(st_, rng)
    path = tmp_path / "k.ctrl"
    write_controller(path, ctrl)
    back = read_controller(path)
    assert np.array_equal(back.x, ctrl.x) and np.array_equal(back.y, ctrl.y)
    s2 = back.structure
    assert s2.boundary == (0.0,) and s2.ts == 0.01 and s2.variable == 'z'
    assert np.array_equal(s2.mask_x, st_.mask_x)
    assert np.array_equal(s2.fy.coeffs, fy.coeffs)
    assert read_controller(path).params.tolist() == ctrl.params.tolist()


def test_controller_file_errors(tmp_path):
    p = tmp_path / "k.ctrl"
    p.write_text("CTRL 1 1 1 z\n0\n0\n")
    with pytest.raises(InputError):
        read_controller(p)
    p.write_text("KTRL 1 1 0 z\n")
    with pytest.raises(InputError):
        read_controller(p)
