import math

import numpy as np
import pytest
import torch

from kolseries.report import format_value, write_csv
from kolseries.stats import Estimate, calculate_error, exact_mean, sum_estimates, z_score
from kolseries.streams import Stream, as_generator, as_stream, block_sizes, map_blocks


def test_constant_sample_is_exact():
    est = Estimate.from_samples(np.full(1000, 0.1), seed=3)
    assert est.mean == 0.1
    assert est.stderr == 0.
    assert est.nsamples == 1000
    assert est.seed == 3


def test_stderr_matches_numpy():
    values = np.random.default_rng(0).normal(size=5000)
    est = Estimate.from_samples(torch.from_numpy(values), seed=0)
    assert math.isclose(est.stderr, values.std(ddof=1) / math.sqrt(values.size), rel_tol=1e-10)
    assert math.isclose(calculate_error(list(values)), est.stderr, rel_tol=1e-12)
    assert calculate_error([1.]) == 0.


def test_non_finite_samples_are_counted():
    est = Estimate.from_samples([1., math.nan, 3., math.inf], seed=0, mode='mc')
    assert est.invalid == 2
    assert not est.valid
    assert est.mean == 2.
    assert est.extras == {'mode': 'mc'}


def test_exact_mean():
    assert exact_mean(np.array([0.1, 0.1, 0.1])) == 0.1
    assert math.isnan(exact_mean(np.array([])))


def test_z_score():
    assert z_score(1., 0., 1., 0.) == 0.
    assert z_score(1., 0., 2., 0.) == math.inf
    assert math.isclose(z_score(1., 3., 6., 4.), 1.)
    a, b = Estimate(1., 3., 10, 0), Estimate(6., 4., 10, 0)
    assert math.isclose(a.z_score(b), 1.)
    assert a.within(9.9) and not a.within(10.1)


def test_sum_estimates():
    total = sum_estimates([Estimate(1., 3., 10, 7), Estimate(0.5, 4., 20, 7, invalid=1)])
    assert total.mean == 1.5
    assert total.stderr == 5.
    assert total.nsamples == 30
    assert total.invalid == 1
    assert total.seed == 7


def test_stream_children_are_reproducible():
    root = Stream(42)
    a = root.child(1, 2).generator().standard_normal(5)
    b = Stream(42, (1, 2)).generator().standard_normal(5)
    c = root.child(1, 3).generator().standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert root.child(1).child(2) == root.child(1, 2)


def test_stream_arguments():
    with pytest.raises(ValueError):
        Stream(-1)
    assert as_stream(5) == Stream(5)
    assert as_stream(np.int64(5)) == Stream(5)
    with pytest.raises(ValueError):
        as_stream(True)
    with pytest.raises(ValueError):
        as_stream('5')
    gen = np.random.default_rng(0)
    assert as_generator(gen) is gen
    with pytest.raises(ValueError):
        as_generator(5)


def test_block_sizes():
    assert block_sizes(10, 4) == [4, 4, 2]
    assert block_sizes(8, 4) == [4, 4]
    assert block_sizes(3, 8192) == [3]
    with pytest.raises(ValueError):
        block_sizes(0, 4)
    with pytest.raises(ValueError):
        block_sizes(4, 0)


def test_map_blocks_keeps_task_order():
    tasks = [float(k) for k in range(7)]
    assert map_blocks(math.sqrt, tasks, workers=3) == [math.sqrt(k) for k in tasks]
    assert map_blocks(math.sqrt, tasks, workers=1) == map_blocks(math.sqrt, tasks, workers=3)


def test_format_value():
    assert format_value(0.1) == '0.10000000000000001'
    assert format_value(float('nan')) == 'nan'
    assert format_value(True) == 'true'
    assert format_value(None) == ''
    assert format_value(7) == '7'
    assert format_value(['a, b', 2.5]) == 'a; b;2.5'
    assert format_value(np.float64(0.5)) == '0.5'


def test_write_csv(tmp_path):
    path = write_csv(str(tmp_path / 'sub' / 'out.csv'), ('n', 'mean'), [(0, 0.5), (1, 0.25)])
    with open(path) as f:
        assert f.read() == 'n,mean\n0,0.5\n1,0.25\n'
    with pytest.raises(ValueError):
        write_csv(str(tmp_path / 'bad.csv'), ('n', 'mean'), [(0,)])
