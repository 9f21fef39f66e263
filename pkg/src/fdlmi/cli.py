"""Command-line front end: ``fdlmi identify|synthesize|verify``.

Exit codes: 0 success (stable verdict), 1 usage or input error,
2 infeasible, 3 numerical failure, 4 unstable or inconclusive verdict.
"""

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import replace

import numpy as np

from . import __version__
from .analysis import (achieved_h2, achieved_hinf, certify_stability,
                       closed_loop, format_report)
from .controller import read_controller, write_controller
from .exceptions import (FdlmiError, IdentificationError, InitializationError,
                         InputError, SynthesisError)
from .freqdata import (FrequencyGrid, FrequencyResponseSet, build_log_grid,
                       estimate_frequency_response, evaluate_weight,
                       read_experiment, read_frs, write_frs)
from .synthesis import SynthesisConfig, load_config, run_synthesis

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_VERDICT = range(5)

log = logging.getLogger('fdlmi')


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits with code 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(x):
    return repr(float(x))


def _check_inputs(paths):
    for p in paths:
        if p is not None and not os.path.isfile(p):
            raise InputError(f"input file not found: {p}")


class _AtomicDir:
    """Write into a temporary sibling directory, then move it into place."""

    def __init__(self, path, force=False):
        self.path = os.path.abspath(path)
        self.force = force
        if os.path.exists(self.path) and not force:
            raise InputError(f"output directory exists: {path} "
                             "(use --force to replace it)")

    def __enter__(self):
        parent = os.path.dirname(self.path)
        os.makedirs(parent, exist_ok=True)
        self.tmp = tempfile.mkdtemp(prefix='.' + os.path.basename(self.path),
                                    dir=parent)
        return self.tmp

    def __exit__(self, *exc):
        # the partial directory is kept on failure too: it holds the trace
        if os.path.exists(self.path):
            old = self.tmp + '.old'
            os.rename(self.path, old)
            os.rename(self.tmp, self.path)
            shutil.rmtree(old)
        else:
            os.rename(self.tmp, self.path)
        return False


# ----------------------------------------------------------------------------
# identify

def _dft_grid(rec, w_min, w_max, n_points):
    if n_points is not None:
        return build_log_grid(w_min, w_max, n_points, ts=rec.ts)
    N = rec.length
    k = np.arange(1, N // 2 + 1)
    return FrequencyGrid(2 * np.pi * k / (N * rec.ts), rec.ts)


def cmd_identify(args):
    _check_inputs(args.experiments)
    records = [read_experiment(p) for p in args.experiments]
    if len({(r.ts, r.y.shape[1:]) for r in records}) != 1:
        raise InputError("experiment sets differ in sampling period or size")
    grid = _dft_grid(records[0], args.grid_min, args.grid_max,
                     args.grid_points)
    resp = []
    for path, rec in zip(args.experiments, records):
        try:
            resp.append(estimate_frequency_response(rec, grid))
        except IdentificationError as exc:
            raise IdentificationError(f"{path}: {exc}", exc.omega) from None
    if args.continuous:
        grid = FrequencyGrid(grid.omega)
    frs = FrequencyResponseSet(np.stack(resp), grid, args.unstable)
    write_frs(args.out, frs)
    print(f"wrote {args.out}: q={frs.q} n={frs.n} m={frs.m} "
          f"K={len(grid)}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# synthesize

def _config_with_overrides(cfg, args):
    kw = {}
    if args.order is not None:
        kw['degree'] = args.order
    if args.mask is not None:
        kw['mask_x'] = kw['mask_y'] = args.mask
    if args.grid_points is not None:
        if args.grid_min is None or args.grid_max is None:
            raise InputError("--grid-points needs --grid-min and --grid-max")
        kw.update(grid_min=args.grid_min, grid_max=args.grid_max,
                  grid_points=args.grid_points)
    for flag, name in (('certify', 'certify'), ('dense_factor', 'dense_factor'),
                       ('seed', 'seed'), ('max_iter', 'max_iterations'),
                       ('tol', 'stop_tol')):
        val = getattr(args, flag)
        if val is not None:
            kw[name] = val
    if args.objective is not None:
        kw['spec'] = replace(cfg.spec, objective=args.objective)
    return replace(cfg, **kw) if kw else cfg


def _write_csv(path, header, rows):
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh, lineterminator='\n')
        w.writerow(header)
        w.writerows(rows)


def _sigma(a):
    return np.linalg.norm(a, 2, axis=(-2, -1))


def _plot_data(outdir, frs, ctrl, cfg):
    rows, ls_rows = [], []
    spec = cfg.spec
    for i in range(frs.q):
        cl = closed_loop(frs, ctrl, i, cfg.dense_factor)
        sig = [_sigma(getattr(cl, k)) for k in ('S', 'T', 'U', 'L')]
        for k, w in enumerate(cl.omega):
            rows.append([i, _fmt(w)] + [_fmt(s[k]) for s in sig])
        if spec.target is not None:
            ld = _sigma(evaluate_weight(spec.target, frs.grid, cl.omega,
                                        frs.n))
            sl = sig[3]
            for k, w in enumerate(cl.omega):
                ls_rows.append([i, _fmt(w), _fmt(sl[k]), _fmt(ld[k])])
    _write_csv(os.path.join(outdir, 'sigma.csv'),
               ['model', 'omega', 'sigma_S', 'sigma_T', 'sigma_U', 'sigma_L'],
               rows)
    if ls_rows:
        _write_csv(os.path.join(outdir, 'loopshape.csv'),
                   ['model', 'omega', 'sigma_L', 'sigma_Ld'], ls_rows)


def _achieved_norms(frs, ctrl, spec, dense_factor):
    norms = {}
    if spec.objective == 'hinf-mixed':
        norms['achieved_hinf_mixed'] = achieved_hinf(
            frs, ctrl, spec.w1, spec.w2, 'mixed', dense_factor)
    elif spec.objective == 'h2':
        norms['achieved_h2_squared'] = achieved_h2(frs, ctrl, spec.w1,
                                                   dense_factor)
    elif spec.objective == 'ls-hinf':
        norms['achieved_hinf_loop'] = achieved_hinf(
            frs, ctrl, stack='loop', dense_factor=dense_factor,
            target=spec.target)
    else:
        norms['achieved_h2_loop_squared'] = achieved_h2(
            frs, ctrl, dense_factor=dense_factor, target=spec.target)
    if spec.uncertainty is not None:
        norms['achieved_robust'] = achieved_hinf(
            frs, ctrl, spec.uncertainty[0], spec.uncertainty[1], 'robust',
            dense_factor)
    for j, (kind, w) in enumerate(spec.bounds):
        norms[f'achieved_bound_{j}_{kind}'] = achieved_hinf(
            frs, ctrl, w, stack=kind, dense_factor=dense_factor)
    return norms


def cmd_synthesize(args):
    _check_inputs([args.frs, args.config, args.initial])
    frs = read_frs(args.frs)
    cfg = _config_with_overrides(load_config(args.config), args)
    initial = read_controller(args.initial) if args.initial else None
    manifest = {
        'command': 'synthesize', 'version': __version__,
        'inputs': {'frs': args.frs, 'config': args.config,
                   'initial': args.initial},
        'output': args.out, 'seed': cfg.seed,
        'overrides': {k: getattr(args, k) for k in
                      ('order', 'mask', 'objective', 'grid_min', 'grid_max',
                       'grid_points', 'certify', 'dense_factor', 'max_iter',
                       'tol')},
    }
    with _AtomicDir(args.out, args.force) as out:
        with open(os.path.join(out, 'manifest.json'), 'w') as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write('\n')
        try:
            report = run_synthesis(cfg, frs, initial)
        except SynthesisError as exc:
            if exc.trace is not None:
                with open(os.path.join(out, 'trace.csv'), 'w') as fh:
                    fh.write(exc.trace.to_csv())
            print(f"synthesis failed: {exc}", file=sys.stderr)
            return EXIT_INFEASIBLE if exc.status == 'infeasible' \
                else EXIT_NUMERICAL
        with open(os.path.join(out, 'trace.csv'), 'w') as fh:
            fh.write(report.trace.to_csv())
        write_controller(os.path.join(out, 'controller.ctrl'),
                         report.controller)
        eval_frs = report.problem.frs
        norms = {'objective': report.objective}
        norms.update(_achieved_norms(eval_frs, report.controller, cfg.spec,
                                     cfg.dense_factor))
        cert = report.certificate
        text = (f"status: {report.status}\niterations: {report.iterations}\n"
                + "".join(f"relaxation scale: {s:g}\n"
                          for s in report.relaxation))
        if cert is not None:
            text += format_report(cert, norms)
        else:
            text += "".join(f"{k}: {v:.10g}\n" for k, v in norms.items())
        with open(os.path.join(out, 'report.txt'), 'w') as fh:
            fh.write(text)
        _plot_data(out, eval_frs, report.controller, cfg)
    print(text, end='')
    if cert is not None and not cert.stable:
        return EXIT_VERDICT
    return EXIT_OK


# ----------------------------------------------------------------------------
# verify

def cmd_verify(args):
    _check_inputs([args.frs, args.controller, args.config, args.reference])
    frs = read_frs(args.frs)
    ctrl = read_controller(args.controller)
    ref = read_controller(args.reference) if args.reference else None
    cert = certify_stability(frs, ctrl, args.dense_factor, reference=ref)
    norms = {}
    if cert.stable:
        if args.config:
            spec = load_config(args.config).spec
            norms = _achieved_norms(frs, ctrl, spec, args.dense_factor)
        else:
            norms['sensitivity_peak'] = achieved_hinf(
                frs, ctrl, stack='S', dense_factor=args.dense_factor)
    text = format_report(cert, norms)
    if args.report:
        with open(args.report, 'w') as fh:
            fh.write(text)
    print(text, end='')
    return EXIT_OK if cert.stable else EXIT_VERDICT


# ----------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog='fdlmi', description=__doc__.splitlines()[0])
    p.add_argument('--version', action='version', version=__version__)
    p.add_argument('-v', '--verbose', action='count', default=0)
    sub = p.add_subparsers(dest='command', required=True,
                           parser_class=_Parser)

    def grid_flags(sp):
        sp.add_argument('--grid-min', type=float)
        sp.add_argument('--grid-max', type=float)
        sp.add_argument('--grid-points', type=int)

    s = sub.add_parser('identify', help="estimate an FRS from experiments")
    s.add_argument('experiments', nargs='+',
                   help="EXP files, one per operating point (model)")
    s.add_argument('--out', '-o', required=True, help="FRS file to write")
    s.add_argument('--unstable', type=int, nargs='+',
                   help="unstable pole count per model")
    s.add_argument('--continuous', action='store_true',
                   help="label the data as continuous-time")
    grid_flags(s)
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser('synthesize', help="design a controller")
    s.add_argument('frs')
    s.add_argument('config', help="JSON synthesis configuration")
    s.add_argument('--out', '-o', required=True, help="output directory")
    s.add_argument('--initial', help="initial controller (CTRL file)")
    s.add_argument('--force', action='store_true',
                   help="replace an existing output directory")
    grid_flags(s)
    s.add_argument('--order', type=int)
    s.add_argument('--mask', choices=('full', 'diag'))
    s.add_argument('--objective', choices=('hinf-mixed', 'h2', 'ls-hinf',
                                           'ls-h2'))
    s.add_argument('--certify', action=argparse.BooleanOptionalAction,
                   default=None)
    s.add_argument('--dense-factor', type=int)
    s.add_argument('--seed', type=int)
    s.add_argument('--max-iter', type=int)
    s.add_argument('--tol', type=float)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser('verify', help="certify a controller")
    s.add_argument('frs')
    s.add_argument('controller')
    s.add_argument('--config', help="weights for the achieved norms")
    s.add_argument('--reference', help="initial controller for the "
                   "structural checks")
    s.add_argument('--dense-factor', type=int, default=10)
    s.add_argument('--report', help="also write the report to this file")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format='%(levelname)s %(name)s: %(message)s')
    try:
        return args.func(args)
    except IdentificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, InitializationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FdlmiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == '__main__':
    sys.exit(main())
