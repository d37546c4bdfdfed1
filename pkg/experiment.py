import logging
import os
import sys
import time

from kolseries import HypothesisError
from kolseries.bounds import bound_rows, plan_exponents, ratio_test
from kolseries.checks import SUITES, run_suite
from kolseries.config import build_experiment, load_config
from kolseries.girsanov import (PathGrid, dump_paths, estimate_girsanov_terms,
                                estimate_girsanov_u, estimate_u_direct)
from kolseries.report import (BOUND_COLUMNS, CHECK_COLUMNS, DIRECT_COLUMNS, GIRSANOV_COLUMNS,
                              SERIES_COLUMNS, SUMMARY_COLUMNS, bound_table, check_rows,
                              direct_rows, girsanov_rows, path_columns, series_rows, write_csv)
from kolseries.series import estimate_series, likelihood_weight_partial
from kolseries.spectral import check_hypotheses, default_tgrid, fit_delta, q_infinity
from kolseries.stats import z_score
from kolseries.streams import DIRECT, GIRSANOV, SERIES, WEIGHT, Stream
from utils import ExperimentParser


log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2
# Pairwise z-score above which the three estimates of u are flagged as disagreeing.
Z_TOLERANCE = 3.
BOUND_DEFAULTS = {'beta': 0.5, 'delta': 0.5, 'kappa': 1.5, 't': 1., 'c_delta': 1., 'trace': 1.}


def load_experiment(path, common):
    cfg = load_config(path)
    if common.seed is not None:
        cfg.seed = common.seed
    exp = build_experiment(cfg, base_dir=os.path.dirname(os.path.abspath(path)),
                           workers=common.workers, override=common.override_hypotheses)
    return exp


def out_dir(common, exp=None):
    if common.out is not None:
        return common.out
    return exp.outputs if exp is not None else 'results'


def check_run_hypotheses(exp, override=False):
    """Refuses the run when a standing hypothesis fails, unless overridden.

    Returns:
        list: diagnostics to carry into the summary warnings.
    """
    report = check_hypotheses(exp.model, exp.drift, exp.phi, default_tgrid(exp.model), exp.kappa)
    violations = report.violations(exp.n_max)
    detail = '; '.join(report.diagnostics)
    if violations and not override:
        raise HypothesisError(violations[0], detail)
    for clause in violations:
        log.warning('Overriding hypothesis "%s": %s', clause, detail)
    log.info('Hypotheses: delta=%.4g C_delta=%.4g Tr Q_inf=%.4g psi_sup=%s',
             report.delta_fit, report.c_delta_fit, report.trace_Qinf, report.psi_sup)
    return ['hypothesis overridden: {}'.format(clause) for clause in violations]


def max_pairwise_z(estimates):
    zs = [z_score(a.mean, a.stderr, b.mean, b.stderr)
          for i, a in enumerate(estimates) for b in estimates[i + 1:]]
    return max(zs)


def run_exp(exp, out, override=False):
    """Runs the series, Girsanov and direct estimators and writes the four CSVs.

    Returns:
        dict: the summary row by column name.
    """
    warnings = check_run_hypotheses(exp, override)
    root = Stream(exp.seed)
    args = (exp.model, exp.drift, exp.phi, exp.t, exp.x)

    start = time.time()
    series = estimate_series(*args, exp.n_max, exp.series, root.child(SERIES))
    terms = estimate_girsanov_terms(*args, exp.n_max, exp.paths, root.child(GIRSANOV))
    u_girsanov = estimate_girsanov_u(*args, exp.paths, root.child(GIRSANOV))
    direct_stream = root.child(GIRSANOV) if exp.paths.couple else root.child(DIRECT)
    u_direct = estimate_u_direct(*args, exp.paths, direct_stream)
    weight = likelihood_weight_partial(exp.model, exp.drift, exp.t, exp.x, exp.n_max,
                                       exp.series, root.child(WEIGHT))
    log.info('Estimators finished in %.1fs', time.time() - start)

    u_series = series.u
    max_z = max_pairwise_z([u_series, u_girsanov, u_direct])
    warnings += u_girsanov.extras.get('warnings', [])
    for name, est in (('series', u_series), ('girsanov', u_girsanov), ('direct', u_direct)):
        if est.invalid:
            warnings.append('{} non-finite {} samples dropped'.format(est.invalid, name))
    if max_z > Z_TOLERANCE:
        warnings.append('estimates disagree: max pairwise z {:.3g}'.format(max_z))

    summary = {
        't': exp.t, 'n_max': exp.n_max, 'seed': exp.seed,
        'u_series': u_series.mean, 'stderr_series': u_series.stderr,
        'u_girsanov': u_girsanov.mean, 'stderr_girsanov': u_girsanov.stderr,
        'u_direct': u_direct.mean, 'stderr_direct': u_direct.stderr,
        'max_z': max_z,
        'ess': u_girsanov.extras['ess'],
        'max_weight_share': u_girsanov.extras['max_weight_share'],
        'novikov_proxy': u_girsanov.extras['novikov_proxy'],
        'weight_partial': weight.mean, 'stderr_weight_partial': weight.stderr,
        'warnings': warnings,
    }

    write_csv(os.path.join(out, 'series_terms.csv'), SERIES_COLUMNS, series_rows(series))
    write_csv(os.path.join(out, 'girsanov_terms.csv'), GIRSANOV_COLUMNS,
              girsanov_rows(terms, exp.paths.npaths, exp.paths.steps))
    write_csv(os.path.join(out, 'direct_oracle.csv'), DIRECT_COLUMNS,
              direct_rows(u_direct, exp.paths.npaths, exp.paths.steps))
    write_csv(os.path.join(out, 'summary.csv'), SUMMARY_COLUMNS,
              [tuple(summary[c] for c in SUMMARY_COLUMNS)])
    return summary


def bound_params(args, common):
    """Bound parameters from the flags, falling back on the config model, then the defaults.
    """
    params = {k: getattr(args, k) for k in BOUND_DEFAULTS}
    if args.config is not None:
        exp = load_experiment(args.config, common)
        delta, c_delta = fit_delta(exp.model, default_tgrid(exp.model))
        derived = {'beta': exp.drift.declared_beta, 'delta': delta, 'kappa': exp.kappa,
                   't': exp.t, 'c_delta': c_delta, 'trace': q_infinity(exp.model)[1]}
        params = {k: derived[k] if v is None else v for k, v in params.items()}
    return {k: BOUND_DEFAULTS[k] if v is None else v for k, v in params.items()}


def tabulate_bounds(args, common, out):
    p = bound_params(args, common)
    plan = plan_exponents(args.p0, args.bar_p, p['kappa'], args.nmax, args.schedule)
    rows = bound_rows(args.nmax, plan, p['c_delta'], p['delta'], p['trace'], p['beta'],
                      args.c_beta, p['t'], check=not common.override_hypotheses)
    test = ratio_test([r.log_vn_bound for r in rows], log_scale=True)
    write_csv(os.path.join(out, 'bounds.csv'), BOUND_COLUMNS, bound_table(rows, plan))
    if test.converges:
        print('Bound ratios stay below 1 from n = {} (n0 = {})'.format(test.first_contractive_index, plan.n0))
    else:
        print('Bound ratios do not settle below 1 by n = {} (n0 = {})'.format(args.nmax, plan.n0))
    return test


def verify(args, common, out):
    suites = SUITES if args.suite == 'all' else [args.suite]
    seed = 0 if common.seed is None else common.seed
    results = []
    for suite in suites:
        results += run_suite(suite, seed=seed, samples=args.samples, workers=common.workers)
    write_csv(os.path.join(out, 'checks.csv'), CHECK_COLUMNS, check_rows(results))
    failed = [r for r in results if not r.passed]
    print('{} of {} checks passed'.format(len(results) - len(failed), len(results)))
    for r in failed:
        print('FAILED {}/{}: value {:.6g}, tolerance {:.3g} {}'.format(
            r.suite, r.name, r.value, r.tolerance, r.detail))
    return failed


def dump(args, common):
    exp = load_experiment(args.config, common)
    out = out_dir(common, exp)
    grid = PathGrid(exp.t, args.steps or exp.paths.steps)
    rows = dump_paths(exp.model, exp.drift, exp.x, grid, Stream(exp.seed).child(GIRSANOV),
                      npaths=args.npaths, override=common.override_hypotheses)
    return write_csv(os.path.join(out, 'paths.csv'), path_columns(exp.model.dim), rows)


def main(argv=None):
    parser = ExperimentParser(description='Series, Girsanov and direct estimates of u(t, x).')
    command, groups = parser.parse_group_args(argv)
    common = groups['common']
    log.info('%s: %s', command, parser.args_to_str(common))

    try:
        if command == 'run':
            exp = load_experiment(groups['experiment'].config, common)
            summary = run_exp(exp, out_dir(common, exp), common.override_hypotheses)
            print('u = {:.10g} (series) {:.10g} (girsanov) {:.10g} (direct), max z {:.3g}'.format(
                summary['u_series'], summary['u_girsanov'], summary['u_direct'], summary['max_z']))
            return EXIT_FAILED if summary['max_z'] > Z_TOLERANCE else EXIT_OK
        if command == 'verify':
            failed = verify(groups['verification'], common, out_dir(common))
            return EXIT_FAILED if failed else EXIT_OK
        if command == 'bounds':
            test = tabulate_bounds(groups['bounds'], common, out_dir(common))
            return EXIT_OK if test.converges else EXIT_FAILED
        if command == 'paths':
            print('Wrote {}'.format(dump(groups['paths'], common)))
            return EXIT_OK
    except (ValueError, ArithmeticError) as e:
        log.error('%s failed: %s', command, e)
        print('error: {}'.format(e), file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
