"""
benchmark-level properties of the whole pipeline on the pinned synthetic data
"""
import filecmp
import os

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from conftest import benchmark_config
from countcast.backtest import EXPANDING, SPLIT, ExpandingSpec, evaluate_expanding, last_year_mean, origins_mean
from countcast.cli import cli
from countcast.covariates import Channel
from countcast.gapfill import FillMethod, evaluate_fill, fill_iterative
from countcast.models import ModelKind, NLinear, TrainConfig, WindowSpec
from countcast.panel import Interval, Level, SeriesPanel, aggregate, roll_up, sparsity_report
from countcast.stats import ScoreMatrix, friedman, nemenyi, rank_rows
from countcast.tft import TftLite
from test_models import check_gradients, random_batch


def test_conservation(benchmark):
    h = benchmark.hierarchy
    panel = roll_up(aggregate(benchmark.events, h, Interval.MONTHLY), h)
    state = panel.series[h.state]
    assert np.array_equal(state, panel.matrix(panel.regions_at(Level.COUNTY)).sum(axis=0))
    assert np.array_equal(state, panel.matrix(panel.regions_at(Level.DISTRICT)).sum(axis=0))
    for d in h.districts:
        assert np.array_equal(panel.series[d], panel.matrix(list(h.members(d))).sum(axis=0))


def test_sparsity_gradient(benchmark):
    table = sparsity_report(benchmark.events, benchmark.hierarchy, list(Interval))
    values = table[[i.value for i in Interval]].to_numpy()
    assert np.all(np.diff(values, axis=0) <= 0)
    assert np.all(np.diff(values, axis=1) <= 0)
    assert values[0, 0] > values[-1, -1]


def test_gap_fill_ordering():
    t = np.arange(72)
    channel = Channel('planted', 5 + 0.2 * t + 2 * np.sin(2 * np.pi * t / 12)
                      + 0.1 * np.random.default_rng(0).normal(size=72))
    smooth = evaluate_fill(channel, FillMethod.EXPSMOOTH, holdout=12, at='end')
    constant = evaluate_fill(channel, FillMethod.CONSTANT_MEAN, holdout=12, at='end')
    assert smooth < constant

    driver = channel.values
    truth = 3 * driver - 2
    gapped = truth.copy()
    gapped[-12:] = np.nan
    _, filled = fill_iterative([channel, Channel('linear', gapped)])
    np.testing.assert_allclose(filled.values, truth, atol=1e-6)


@pytest.mark.parametrize('seed', range(5))
def test_gradient_checks(seed):
    rng = np.random.default_rng(100 + seed)
    batch = random_batch(rng)
    nlinear = NLinear(WindowSpec(6, 3))
    check_gradients(nlinear.build(nlinear.dims_of(batch), rng), batch, rng)
    tft = TftLite(WindowSpec(6, 3), hidden=8, heads=2)
    check_gradients(tft.build(tft.dims_of(batch), rng), batch, rng, per_array=4)


def test_anchoring_invariant():
    rng = np.random.default_rng(1)
    batch = random_batch(rng, n=1000, length=12, channels=3, statics=2)
    model = NLinear(WindowSpec(12, 3), zero_init=True)
    network = model.build(model.dims_of(batch), rng)
    np.testing.assert_array_equal(network.forward(batch), np.repeat(batch.target[:, -1:], 3, axis=1))


@pytest.fixture(scope='module')
def nlinear_runs(benchmark_inputs):
    pipeline, _ = benchmark_inputs
    return {
        ('none', EXPANDING): pipeline.run_backtest(ModelKind.NLINEAR, EXPANDING, 'none'),
        ('common', EXPANDING): pipeline.run_backtest(ModelKind.NLINEAR, EXPANDING, 'common'),
        ('common', SPLIT): pipeline.run_backtest(ModelKind.NLINEAR, SPLIT, 'common'),
    }


def _mean(scores):
    return float(np.mean(list(scores.values())))


@pytest.mark.slow
def test_covariate_benefit(nlinear_runs):
    none = _mean(last_year_mean(nlinear_runs[('none', EXPANDING)]))
    common = _mean(last_year_mean(nlinear_runs[('common', EXPANDING)]))
    assert common < none


@pytest.mark.slow
def test_learning_curve(nlinear_runs):
    means = list(nlinear_runs[('common', EXPANDING)].window_means().values())
    assert len(means) == 20
    assert np.mean(means[-4:]) <= np.mean(means[:4])


@pytest.mark.slow
def test_regime_ordering(nlinear_runs):
    split = nlinear_runs[('common', SPLIT)]
    expanding = nlinear_runs[('common', EXPANDING)]
    assert split.origins == [75, 78, 81]
    assert _mean(origins_mean(expanding, split.origins)) <= 1.05 * _mean(origins_mean(split, split.origins))


def _friedman_null(n, k, draws, rng):
    ranks = rng.random((draws, n, k)).argsort(axis=2) + 1.0
    mean_ranks = ranks.mean(axis=1)
    return 12.0 * n / (k * (k + 1)) * ((mean_ranks - (k + 1) / 2.0) ** 2).sum(axis=1)


def test_friedman_oracle():
    rng = np.random.default_rng(9)
    null = _friedman_null(8, 4, 100000, rng)
    for _ in range(20):
        result = friedman(ScoreMatrix(rng.normal(size=(8, 4)), tuple('abcd')))
        s = result.statistic
        mid_p = np.mean(null > s + 1e-9) + 0.5 * np.mean(np.abs(null - s) <= 1e-9)
        assert result.p == pytest.approx(mid_p, abs=0.02)

    hand = np.tile(np.arange(3.0), (10, 1))
    result = friedman(ScoreMatrix(hand, ('a', 'b', 'c')))
    assert result.statistic == pytest.approx(20.0, abs=1e-12)
    assert abs(result.p - np.exp(-10)) < 1e-12


def test_nemenyi_oracle():
    rng = np.random.default_rng(10)
    n, k = 12, 3
    z = rng.normal(size=(100000, k))
    ranges = z.max(axis=1) - z.min(axis=1)
    scale = np.sqrt(k * (k + 1) / (12.0 * n))
    for _ in range(5):
        values = rng.normal(size=(n, k)) + np.array([0.0, 0.5, 1.0])
        p = nemenyi(ScoreMatrix(values, ('a', 'b', 'c')))
        mean_ranks = rank_rows(values).mean(axis=0)
        for i in range(k):
            for j in range(i + 1, k):
                expected = np.mean(ranges >= abs(mean_ranks[i] - mean_ranks[j]) / scale)
                assert p.iloc[i, j] == pytest.approx(expected, abs=0.02)

    column = rng.normal(size=(n, 1))
    p = nemenyi(ScoreMatrix(np.hstack([column] * 3), ('a', 'b', 'c')))
    assert (p.to_numpy() == 1.0).all()


def test_backtest_is_deterministic(benchmark_dir, tmp_path):
    outs = []
    for run in ('first', 'second'):
        out = str(tmp_path / run)
        cfg = benchmark_config(benchmark_dir, out, models=['regression', 'nlinear'], regimes=['expanding'],
                               covariate_sets=['common'],
                               train={'epochs': 2, 'batch_size': 64, 'learning_rate': 1e-3, 'seed': 0},
                               plot={'model': 'nlinear', 'covariate_set': 'common', 'region': None})
        path = tmp_path / ('%s.yml' % run)
        path.write_text(yaml.safe_dump(cfg))
        result = CliRunner().invoke(cli, ['backtest', '--config', str(path), '--plot', '--seed', '7'])
        assert result.exit_code == 0, result.output
        outs.append(out)

    names = ['summary.csv', 'regime_summary.csv', 'predictions.svg', 'window_rmse.svg',
             os.path.join('reports', 'regression_expanding_common.json'),
             os.path.join('reports', 'nlinear_expanding_common.json')]
    match, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], names, shallow=False)
    assert sorted(match) == sorted(names), (mismatch, errors)


def test_no_leakage(benchmark_inputs):
    _, inputs = benchmark_inputs
    panel = inputs.panel.head(36)
    covariates = inputs.covariates.head(36)
    origin = 24
    poisoned = SeriesPanel(panel.grid, {r: np.r_[v[:origin + 3], np.full(36 - origin - 3, 0.5)]
                                        for r, v in panel.series.items()}, scale=panel.scale)
    espec = ExpandingSpec(initial_train=origin, step=3, horizon=3)
    cfg = TrainConfig(epochs=2, batch_size=64)
    for kind in (ModelKind.NLINEAR, ModelKind.TFT_LITE):
        a = evaluate_expanding(kind, panel, covariates, espec, WindowSpec(), cfg)
        b = evaluate_expanding(kind, poisoned, covariates, espec, WindowSpec(), cfg)
        first_a = [w for w in a.windows if w.origin == origin]
        first_b = [w for w in b.windows if w.origin == origin]
        assert first_a == first_b
