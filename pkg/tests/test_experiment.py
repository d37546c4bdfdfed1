import json
import os

import pytest

import experiment
from experiment import EXIT_ERROR, EXIT_FAILED, EXIT_OK, main, run_exp
from kolseries.config import build_experiment, parse_config
from kolseries.report import BOUND_COLUMNS, CHECK_COLUMNS, SUMMARY_COLUMNS

OUTPUTS = ('series_terms.csv', 'girsanov_terms.csv', 'direct_oracle.csv', 'summary.csv')


def small_config(**overrides):
    cfg = {
        'model': {'a': [-1.], 'q': [2.]},
        'drift': {'kind': 'bounded_sin', 'amplitude': 0.4, 'frequency': 1.},
        'phi': {'kind': 'cosine', 'h': [1.]},
        't': 0.5,
        'x': [0.3],
        'n_max': 2,
        'mc': {'nsamples': 2000, 'npaths': 1000, 'steps': 16, 'block_size': 500, 'delta': 0.5},
        'seed': 3,
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / 'exp.json'
    path.write_text(json.dumps(small_config()))
    return str(path)


def read_lines(path):
    with open(path) as f:
        return f.read().splitlines()


def test_bounds_command(tmp_path, capsys):
    assert main(['bounds', '--out', str(tmp_path)]) == EXIT_OK
    lines = read_lines(tmp_path / 'bounds.csv')
    assert lines[0] == ','.join(BOUND_COLUMNS)
    assert len(lines) == 10 ** 4 + 2
    assert 'stay below 1' in capsys.readouterr().out


def test_bounds_command_refuses_infeasible_growth(tmp_path, capsys):
    assert main(['bounds', '--beta', '1', '--nmax', '200', '--out', str(tmp_path)]) == EXIT_ERROR
    assert 'growth condition' in capsys.readouterr().err
    code = main(['bounds', '--beta', '1', '--nmax', '200', '--override-hypotheses', '--out', str(tmp_path)])
    assert code == EXIT_FAILED


def test_bounds_command_from_config(tmp_path, config_path):
    code = main(['bounds', '--config', config_path, '--nmax', '100', '--out', str(tmp_path)])
    assert code in (EXIT_OK, EXIT_FAILED)
    assert len(read_lines(tmp_path / 'bounds.csv')) == 102


def test_run_is_reproducible(tmp_path, config_path):
    outs = [tmp_path / 'a', tmp_path / 'b', tmp_path / 'c']
    codes = [main(['run', '--config', config_path, '--out', str(outs[0])]),
             main(['run', '--config', config_path, '--out', str(outs[1])]),
             main(['run', '--config', config_path, '--workers', '2', '--out', str(outs[2])])]
    assert codes[0] in (EXIT_OK, EXIT_FAILED)
    assert codes[0] == codes[1] == codes[2]
    for name in OUTPUTS:
        with open(outs[0] / name, 'rb') as f:
            expected = f.read()
        for out in outs[1:]:
            with open(out / name, 'rb') as f:
                assert f.read() == expected, name


def test_run_seed_flag(tmp_path, config_path):
    main(['run', '--config', config_path, '--seed', '9', '--out', str(tmp_path)])
    lines = read_lines(tmp_path / 'summary.csv')
    assert lines[0] == ','.join(SUMMARY_COLUMNS)
    assert lines[1].split(',')[2] == '9'


def test_run_with_zero_drift(tmp_path):
    cfg = parse_config(json.dumps(small_config(drift={'kind': 'zero'},
                                               mc={'nsamples': 2000, 'npaths': 20000, 'steps': 8})))
    summary = run_exp(build_experiment(cfg), str(tmp_path))
    for name in ('girsanov', 'direct'):
        assert abs(summary['u_' + name] - summary['u_series']) < 4 * summary['stderr_' + name]
    assert summary['stderr_series'] == 0.
    assert summary['weight_partial'] == 1.
    assert summary['ess'] == 20000.
    assert all(os.path.isfile(tmp_path / name) for name in OUTPUTS)
    assert len(read_lines(tmp_path / 'series_terms.csv')) == 4


def test_run_refuses_failed_hypothesis(tmp_path, capsys):
    path = tmp_path / 'linear.json'
    path.write_text(json.dumps(small_config(drift={'kind': 'linear', 'scale': 0.5})))
    assert main(['run', '--config', str(path), '--out', str(tmp_path)]) == EXIT_ERROR
    assert 'Hypothesis violated' in capsys.readouterr().err
    assert not os.path.exists(tmp_path / 'summary.csv')


def test_run_reports_config_errors(tmp_path, capsys):
    path = tmp_path / 'broken.json'
    path.write_text('{"t": 0.5,\n "x": }')
    assert main(['run', '--config', str(path), '--out', str(tmp_path)]) == EXIT_ERROR
    assert 'line 2' in capsys.readouterr().err

    path.write_text(json.dumps(small_config(n_max=-1)))
    assert main(['run', '--config', str(path), '--out', str(tmp_path)]) == EXIT_ERROR
    assert 'n_max' in capsys.readouterr().err


def test_verify_identities(tmp_path):
    assert main(['verify', '--suite', 'identities', '--out', str(tmp_path)]) == EXIT_OK
    lines = read_lines(tmp_path / 'checks.csv')
    assert lines[0] == ','.join(CHECK_COLUMNS)
    passed = CHECK_COLUMNS.index('passed')
    assert all(line.split(',')[passed] == 'true' for line in lines[1:])


def test_verify_rejects_unknown_suite(tmp_path):
    with pytest.raises(SystemExit):
        main(['verify', '--suite', 'everything', '--out', str(tmp_path)])


def test_paths_command(tmp_path, config_path):
    code = main(['paths', '--config', config_path, '--npaths', '3', '--steps', '8', '--out', str(tmp_path)])
    assert code == EXIT_OK
    lines = read_lines(tmp_path / 'paths.csv')
    assert lines[0] == 'path_id,t,z1,L,M'
    assert len(lines) == 1 + 3 * 9
    assert lines[1].split(',')[-1] == '1'


def test_run_reports_missing_config(tmp_path, capsys):
    missing = str(tmp_path / 'missing.json')
    assert main(['run', '--config', missing, '--out', str(tmp_path)]) == EXIT_ERROR
    err = capsys.readouterr().err
    assert err.startswith('error: ')
    assert 'missing.json' in err


def test_run_reports_non_finite_abort(tmp_path, config_path, capsys, monkeypatch):
    def abort(*args, **kwargs):
        raise FloatingPointError('non-finite samples in block 0 of term 1')

    monkeypatch.setattr(experiment, 'run_exp', abort)
    assert main(['run', '--config', config_path, '--out', str(tmp_path)]) == EXIT_ERROR
    assert 'non-finite samples' in capsys.readouterr().err


def test_bounds_command_log_schedule(tmp_path):
    code = main(['bounds', '--schedule', 'log', '--nmax', '50', '--out', str(tmp_path)])
    assert code in (EXIT_OK, EXIT_FAILED)
    assert len(read_lines(tmp_path / 'bounds.csv')) == 52


def test_parser_groups():
    parser = experiment.ExperimentParser()
    command, groups = parser.parse_group_args(['bounds', '--nmax', '5', '--seed', '4'])
    assert command == 'bounds'
    assert groups['common'].seed == 4
    assert groups['bounds'].nmax == 5
    assert groups['bounds'].schedule == 'power'
