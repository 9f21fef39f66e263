import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fdlmi.exceptions import EvaluationError, IdentificationError, InputError
from fdlmi.freqdata import (ExperimentRecord, FrequencyGrid,
                            FrequencyResponseSet, RationalMatrixWeight,
                            RationalWeight, TabulatedWeight, build_log_grid,
                            estimate_frequency_response, evaluate_weight,
                            frs_from_rational, interpolate_complex,
                            read_experiment, read_frs, write_experiment,
                            write_frs)


def test_grid_validation():
    with pytest.raises(InputError):
        FrequencyGrid([1.0, 1.0, 2.0])
    with pytest.raises(InputError):
        FrequencyGrid([0.0, 1.0])
    with pytest.raises(InputError, match="Nyquist"):
        FrequencyGrid([1.0, 40.0], ts=0.1)
    with pytest.raises(InputError, match="excluded"):
        FrequencyGrid([1.0, 2.0], excluded=(2.0,))
    g = FrequencyGrid([1.0, 2.0], ts=0.1)
    assert g.discrete and g.variable == 'z'
    np.testing.assert_allclose(g.points(), np.exp(1j * np.array([0.1, 0.2])))
    assert g.interval == (1.0, 2.0)


def test_log_grid_endpoints_and_exclusion():
    g = build_log_grid(1e-2, 1e2, 1000)
    assert g.omega[0] == 1e-2 and g.omega[-1] == 1e2
    assert len(g) == 1000
    e = g.omega[500]
    g2 = build_log_grid(1e-2, 1e2, 1000, excluded=(e,))
    assert e not in g2.omega
    assert np.all(np.diff(g2.omega) > 0)
    with pytest.raises(InputError):
        build_log_grid(1.0, 100.0, 10, ts=0.1)


def _fir_record(taps, N, ts):
    """Impulse experiments, one per input: ``y_j`` is column ``j`` of taps."""
    taps = np.asarray(taps)
    L, n, m = taps.shape
    u = np.zeros((N, m, m))
    u[0] = np.eye(m)
    y = np.zeros((N, n, m))
    y[:L] = taps
    return ExperimentRecord(u, y, ts)


def test_impulse_identification_equals_dft():
    rng = np.random.default_rng(3)
    taps = rng.normal(size=(6, 2, 2))
    N, ts = 64, 0.05
    rec = _fir_record(taps, N, ts)
    k = np.arange(1, N // 2 + 1)
    grid = FrequencyGrid(2 * np.pi * k / (N * ts), ts)
    est = estimate_frequency_response(rec, grid)
    dft = np.fft.fft(rec.y, axis=0)[1:N // 2 + 1]
    np.testing.assert_allclose(est, dft, rtol=1e-12, atol=1e-12)


def test_identification_singular_spectrum_reports_frequency():
    ts = 0.1
    u = np.array([1.0, 1.0, 0.0, 0.0])     # zero at the Nyquist frequency
    rec = ExperimentRecord(u, u, ts)
    grid = FrequencyGrid([1.0, np.pi / ts], ts)
    with pytest.raises(IdentificationError) as info:
        estimate_frequency_response(rec, grid)
    assert info.value.omega == pytest.approx(np.pi / ts)


def test_identification_uses_record_sampling_period():
    rec = _fir_record(np.array([[[0.0]], [[1.0]]]), 16, 0.2)
    est = estimate_frequency_response(rec, np.array([1.0]))
    assert est[0, 0, 0] == pytest.approx(np.exp(-1j * 0.2))


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 1))
def test_interpolation_exact_for_linear_data(a, b, t):
    src = np.array([1.0, 2.0, 4.0])
    vals = (a + 1j * b) * src
    w = 1.0 + 3.0 * t
    out = interpolate_complex(src, vals, np.array([w]))
    assert out[0] == pytest.approx((a + 1j * b) * w, abs=1e-9)


def test_interpolation_refuses_extrapolation():
    with pytest.raises(InputError):
        interpolate_complex([1.0, 2.0], np.ones(2), np.array([3.0]))


def test_rational_weight_values():
    g = FrequencyGrid([1.0, 10.0])
    w = evaluate_weight(RationalWeight([1, 3], [3, 0.3], 2), g)
    assert w.shape == (2, 2, 2)
    expect = (1j + 3) / (3j + 0.3)
    np.testing.assert_allclose(w[0], expect * np.eye(2))
    # forced continuous weight on a discrete grid
    gd = FrequencyGrid([1.0], ts=0.1)
    v = evaluate_weight(RationalWeight([1], [1, 1], variable='s'), gd)
    assert v[0, 0, 0] == pytest.approx(1 / (1j + 1))


def test_weight_pole_on_grid_raises():
    g = FrequencyGrid([1.0, 2.0])
    with pytest.raises(EvaluationError) as info:
        evaluate_weight(RationalWeight([1], [1, 0, 4]), g)   # poles at +-2j
    assert info.value.omega == 2.0


def test_scalar_weights_expand_to_identity():
    g = FrequencyGrid([1.0, 2.0])
    assert evaluate_weight(0.5, g).shape == (2, 1, 1)
    np.testing.assert_allclose(evaluate_weight(0.5, g, size=3)[1],
                               0.5 * np.eye(3))
    mat = evaluate_weight([[1, 2], [3, 4]], g, size=2)
    np.testing.assert_allclose(mat[0], [[1, 2], [3, 4]])


def test_tabulated_weight_interpolates():
    tw = TabulatedWeight([1.0, 3.0], np.array([1.0, 3.0]))
    v = evaluate_weight(tw, FrequencyGrid([2.0]))
    assert v[0, 0, 0] == pytest.approx(2.0)


def test_frs_dimensions_and_selection():
    g = build_log_grid(0.1, 10, 20)
    ent = [[([1], [1, 1]), ([2], [1, 2])]]           # 1 x 2
    frs = frs_from_rational([ent, ent, ent], g, unstable_poles=[0, 0, 0])
    assert (frs.q, frs.n, frs.m) == (3, 1, 2)
    assert frs.select([1]).q == 1
    with pytest.raises(InputError):
        FrequencyResponseSet(np.zeros((1, 5, 1, 1)), g)


complex_entries = arrays(np.float64, (2, 7, 2, 3, 2),
                         elements=st.floats(-1e6, 1e6, allow_nan=False,
                                            allow_subnormal=False))


@settings(max_examples=25, deadline=None)
@given(complex_entries)
def test_frs_roundtrip_is_lossless(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("frs") / "p.frs"
    grid = FrequencyGrid(np.geomspace(0.1, 3.0, 7), ts=0.5, excluded=(3.1,))
    frs = FrequencyResponseSet(data[..., 0] + 1j * data[..., 1], grid, [0, 1])
    write_frs(path, frs)
    back = read_frs(path)
    assert np.array_equal(back.responses, frs.responses)
    assert np.array_equal(back.grid.omega, grid.omega)
    assert back.grid.ts == grid.ts and back.grid.excluded == grid.excluded
    assert list(back.unstable_poles) == [0, 1]


def test_experiment_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    rec = ExperimentRecord(rng.normal(size=(9, 2, 2)),
                           rng.normal(size=(9, 3, 2)), 0.01)
    write_experiment(tmp_path / "e.exp", rec)
    back = read_experiment(tmp_path / "e.exp")
    assert np.array_equal(back.u, rec.u) and np.array_equal(back.y, rec.y)
    assert back.ts == rec.ts


def test_bad_files_raise_input_error(tmp_path):
    p = tmp_path / "bad.frs"
    p.write_text("FRS 1 1 1 sometimes\n")
    with pytest.raises(InputError):
        read_frs(p)
    p.write_text("FRS 1 1 1 continuous\n1.0 2.0\n")
    with pytest.raises(InputError):
        read_frs(p)
    p.write_text("EXP 1 1 3 0.1\n1 2\n")
    with pytest.raises(InputError):
        read_experiment(p)


def test_matrix_weight_shape():
    w = RationalMatrixWeight([[([1], [1, 1]), ([0], [1])]])
    v = evaluate_weight(w, FrequencyGrid([1.0]))
    assert v.shape == (1, 1, 2)
    assert v[0, 0, 1] == 0
