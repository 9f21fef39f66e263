import json

import numpy as np
import pytest

from fdlmi.cli import (EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, EXIT_VERDICT,
                       main)
from fdlmi.controller import Controller, ControllerStructure, read_controller
from fdlmi.freqdata import (ExperimentRecord, build_log_grid,
                            frs_from_rational, read_frs, write_experiment,
                            write_frs)

from plants import RationalPlant

TS = 1.0
PLANT = RationalPlant([np.array([-0.5, 1.0])], [[np.array([0.4])]], TS)
CONFIG = {"objective": "hinf-mixed",
          "w1": {"num": [1, 0.1], "den": [1, -0.99], "variable": "z"},
          "w2": 0.3, "degree": 1, "max_iterations": 15}


@pytest.fixture
def files(tmp_path):
    g = build_log_grid(1e-2, 0.98 * np.pi, 30, ts=TS)
    frs = frs_from_rational([PLANT.entries()], g)
    write_frs(tmp_path / "plant.frs", frs)
    (tmp_path / "cfg.json").write_text(json.dumps(CONFIG))
    return tmp_path


def _write_static(path, k):
    st_ = ControllerStructure(1, 1, 0, 'z', ts=TS)
    from fdlmi.controller import write_controller
    write_controller(path, Controller(st_, np.array([[[k]]]),
                                      np.array([[[1.0]]])))


def test_identify_impulse_matches_dft(tmp_path):
    rng = np.random.default_rng(0)
    taps = rng.normal(size=(5, 2, 2))
    N = 32
    u = np.zeros((N, 2, 2))
    u[0] = np.eye(2)
    y = np.zeros((N, 2, 2))
    y[:5] = taps
    write_experiment(tmp_path / "a.exp", ExperimentRecord(u, y, 0.1))
    write_experiment(tmp_path / "b.exp", ExperimentRecord(u, 2 * y, 0.1))
    out = tmp_path / "id.frs"
    code = main(['identify', str(tmp_path / "a.exp"), str(tmp_path / "b.exp"),
                 '--out', str(out)])
    assert code == EXIT_OK
    frs = read_frs(out)
    assert (frs.q, frs.n, frs.m, len(frs.grid)) == (2, 2, 2, N // 2)
    dft = np.fft.fft(y, axis=0)[1:N // 2 + 1]
    np.testing.assert_allclose(frs.responses[0], dft, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(frs.responses[1], 2 * dft, rtol=1e-12,
                               atol=1e-12)


def test_identify_singular_input_exits_numerical(tmp_path):
    u = np.array([1.0, 1.0, 0.0, 0.0])
    write_experiment(tmp_path / "s.exp", ExperimentRecord(u, u, 0.1))
    code = main(['identify', str(tmp_path / "s.exp"), '--out',
                 str(tmp_path / "s.frs")])
    assert code == 3


def test_verify_zero_controller(files, capsys):
    _write_static(files / "zero.ctrl", 0.0)
    code = main(['verify', str(files / "plant.frs"), str(files / "zero.ctrl")])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "winding=0 required=0" in out


def test_verify_destabilizing_controller(files):
    # closed-loop pole at 0.5 - 0.4 k: k = -5 puts it at 2.5
    _write_static(files / "bad.ctrl", -5.0)
    assert np.abs(PLANT.closed_loop_poles(
        read_controller(files / "bad.ctrl"))).max() > 1
    code = main(['verify', str(files / "plant.frs"), str(files / "bad.ctrl"),
                 '--report', str(files / "r.txt")])
    assert code == EXIT_VERDICT
    assert (files / "r.txt").read_text().startswith("verdict: unstable")


def test_usage_errors(files):
    with pytest.raises(SystemExit) as info:
        main(['synthesize'])
    assert info.value.code == EXIT_USAGE
    assert main(['verify', str(files / "missing.frs"),
                 str(files / "x.ctrl")]) == EXIT_USAGE
    (files / "bad.json").write_text('{"degre": 1}')
    assert main(['synthesize', str(files / "plant.frs"),
                 str(files / "bad.json"), '--out', str(files / "o")]) \
        == EXIT_USAGE


def test_synthesize_outputs_and_determinism(files):
    outs = []
    for name in ('run1', 'run2'):
        code = main(['synthesize', str(files / "plant.frs"),
                     str(files / "cfg.json"), '--out', str(files / name),
                     '--seed', '3'])
        assert code == EXIT_OK
        outs.append(files / name)
    a, b = outs
    for f in ('trace.csv', 'sigma.csv'):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    head = (a / 'trace.csv').read_text().splitlines()[0]
    assert head.startswith("iteration,objective,status,residual")
    manifest = json.loads((a / 'manifest.json').read_text())
    assert manifest['seed'] == 3 and manifest['command'] == 'synthesize'
    report = (a / 'report.txt').read_text()
    assert "verdict: stable" in report
    ctrl = read_controller(a / 'controller.ctrl')
    assert np.all(np.abs(PLANT.closed_loop_poles(ctrl)) < 1)
    # the written controller verifies, and denser grids agree
    for factor in ('10', '20'):
        assert main(['verify', str(files / "plant.frs"),
                     str(a / 'controller.ctrl'), '--config',
                     str(files / "cfg.json"), '--dense-factor',
                     factor]) == EXIT_OK
    # existing output directory needs --force
    assert main(['synthesize', str(files / "plant.frs"),
                 str(files / "cfg.json"), '--out', str(a)]) == EXIT_USAGE
    assert main(['synthesize', str(files / "plant.frs"),
                 str(files / "cfg.json"), '--out', str(a), '--force',
                 '--max-iter', '2']) == EXIT_OK
    assert len((a / 'trace.csv').read_text().splitlines()) == 3


def test_synthesize_infeasible_keeps_trace(files):
    cfg = dict(CONFIG, bounds=[["S", 1.6]], relax_rounds=1,
               max_iterations=3)
    (files / "tight.json").write_text(json.dumps(cfg))
    code = main(['synthesize', str(files / "plant.frs"),
                 str(files / "tight.json"), '--out', str(files / "t")])
    assert code == EXIT_INFEASIBLE
    trace = (files / "t" / "trace.csv").read_text()
    assert "relaxed-0.5" in trace and "infeasible" in trace


def test_synthesize_loopshape_writes_plot_data(files):
    cfg = {"objective": "ls-hinf", "degree": 1, "max_iterations": 5,
           "target": {"num": [0.2], "den": [1, -1], "variable": "z"}}
    (files / "ls.json").write_text(json.dumps(cfg))
    code = main(['synthesize', str(files / "plant.frs"),
                 str(files / "ls.json"), '--out', str(files / "ls"),
                 '--no-certify'])
    assert code == EXIT_OK
    head = (files / "ls" / "loopshape.csv").read_text().splitlines()[0]
    assert head == "model,omega,sigma_L,sigma_Ld"


def test_identify_roundtrip_is_exact(files, tmp_path):
    src = read_frs(files / "plant.frs")
    write_frs(tmp_path / "copy.frs", src)
    back = read_frs(tmp_path / "copy.frs")
    assert np.array_equal(back.responses, src.responses)
    assert (tmp_path / "copy.frs").read_bytes() == \
        (files / "plant.frs").read_bytes()
