"""CSV output with a fixed column order and 17 significant digits.
"""
import logging
import math
import os


log = logging.getLogger(__name__)

SERIES_COLUMNS = ('n', 'mean', 'stderr', 'nsamples', 'mode', 'seed')
GIRSANOV_COLUMNS = ('n', 'mean', 'stderr', 'npaths', 'steps', 'seed')
DIRECT_COLUMNS = ('mean', 'stderr', 'npaths', 'steps', 'bias', 'bias_stderr', 'seed')
SUMMARY_COLUMNS = (
    't', 'n_max', 'seed',
    'u_series', 'stderr_series',
    'u_girsanov', 'stderr_girsanov',
    'u_direct', 'stderr_direct',
    'max_z', 'ess', 'max_weight_share', 'novikov_proxy',
    'weight_partial', 'stderr_weight_partial', 'warnings',
)
BOUND_COLUMNS = ('n', 'p_n', 'q_n', 'log_b_product', 'simplex_integral',
                 'vn_bound', 'dvn_bound', 'log_vn_bound', 'log_dvn_bound', 'ratio')
CHECK_COLUMNS = ('suite', 'name', 'value', 'tolerance', 'passed', 'detail')
PATH_COLUMNS = ('path_id', 't')


def format_value(v):
    if v is None:
        return ''
    if isinstance(v, bool):
        return 'true' if v else 'false'
    if isinstance(v, float):
        if math.isnan(v):
            return 'nan'
        return '{:.17g}'.format(v)
    if isinstance(v, (list, tuple)):
        return ';'.join(format_value(item) for item in v)
    return str(v).replace(',', ';')


def write_csv(path, columns, rows):
    """Writes rows (tuples in column order) with a header line.
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', newline='') as f:
        f.write(','.join(columns) + '\n')
        for row in rows:
            if len(row) != len(columns):
                raise ValueError("Row has {} fields but {} has {} columns"
                                 .format(len(row), os.path.basename(path), len(columns)))
            f.write(','.join(format_value(v) for v in row) + '\n')
    log.debug('Wrote %d rows to %s', len(rows), path)
    return path


def series_rows(result):
    return result.rows()


def girsanov_rows(terms, npaths, steps):
    return [(n, e.mean, e.stderr, npaths, steps, e.seed) for n, e in enumerate(terms)]


def direct_rows(est, npaths, steps):
    return [(est.mean, est.stderr, npaths, steps,
             est.extras.get('bias'), est.extras.get('bias_stderr'), est.seed)]


def bound_table(rows, plan):
    out = []
    for row in rows:
        p_n = float(plan.p[row.n]) if row.n <= plan.nmax else None
        q_n = float(plan.q[row.n - 1]) if 1 <= row.n <= plan.nmax else None
        out.append((row.n, p_n, q_n, row.log_b_product, row.simplex_integral,
                    row.vn_bound, row.dvn_bound, row.log_vn_bound, row.log_dvn_bound, row.ratio))
    return out


def check_rows(results):
    return [(r.suite, r.name, r.value, r.tolerance, r.passed, r.detail) for r in results]


def path_columns(dim):
    return PATH_COLUMNS + tuple('z{}'.format(k + 1) for k in range(dim)) + ('L', 'M')
