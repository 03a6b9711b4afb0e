import json

import numpy as np
import pytest

from conftest import make_panel
from countcast.backtest import (EXPANDING, SPLIT, BacktestReport, ExpandingSpec, ReportSet, evaluate_expanding,
                                evaluate_split, expanding_origins, last_year_mean, level_summary, origins_mean,
                                regime_summary, rmse, span_mean, split_train_test)
from countcast.errors import ComputationError, InputError
from countcast.models import ModelKind, WindowSpec, as_batch
from countcast.panel import county

SPEC = WindowSpec(12, 3)


class Persistence:
    """repeats the last observed value; ignores training"""
    label = 'persist'

    def __init__(self, spec, cfg):
        self.spec = spec

    def fit(self, samples):
        return self

    def predict(self, samples):
        batch = as_batch(samples)
        return np.repeat(batch.target[:, -1:], self.spec.horizon, axis=1)


class Zero(Persistence):
    label = 'zero'

    def predict(self, samples):
        return np.zeros((len(as_batch(samples)), self.spec.horizon))


def oracle_for(panel):
    class Oracle(Persistence):
        label = 'oracle'

        def predict(self, samples):
            out = []
            for s in samples:
                v = panel.series[s.region][s.origin:s.origin + self.spec.horizon]
                out.append(np.pad(v, (0, self.spec.horizon - v.size), mode='edge'))
            return np.array(out)
    return Oracle


def recorder(seen):
    class Recorder(Persistence):
        label = 'recorder'

        def fit(self, samples):
            seen.append(as_batch(samples))
            return self
    return Recorder


def random_panel(length=30, regions=4, seed=0):
    rng = np.random.default_rng(seed)
    return make_panel({'c%d' % i: rng.uniform(0, 1, length) for i in range(regions)})


def test_rmse():
    assert rmse([0, 0], [5, 0]) == pytest.approx(3.5355, abs=1e-4)
    assert rmse([1.5], [1.5]) == 0.0
    with pytest.raises(InputError):
        rmse([1, 2], [1])
    with pytest.raises(InputError):
        rmse([], [])


def test_split_train_test():
    train, test = split_train_test(make_panel({'a': np.zeros(80)}))
    assert (len(train), len(test)) == (72, 8)
    train, test = split_train_test(make_panel({'a': np.zeros(10)}))
    assert (len(train), len(test)) == (9, 1)
    with pytest.raises(InputError):
        split_train_test(make_panel({'a': np.zeros(9)}))


def test_expanding_spec():
    assert expanding_origins(30, ExpandingSpec(24, 3, 3)) == [24, 27]
    assert expanding_origins(36, ExpandingSpec(24, 3, 3)) == [24, 27, 30, 33]
    with pytest.raises(InputError):
        ExpandingSpec(24, 2, 3)


def test_oracle_scores_zero():
    panel = random_panel(36)
    for report in (evaluate_split(oracle_for(panel), panel, None, SPEC),
                   evaluate_expanding(oracle_for(panel), panel, None, ExpandingSpec(), SPEC)):
        assert all(w.rmse == 0 for w in report.windows)
        assert report.model == 'oracle'


def test_zero_model_on_zero_panel():
    panel = make_panel({'a': np.zeros(40), 'b': np.zeros(40)})
    report = evaluate_expanding(Zero, panel, None, ExpandingSpec(), SPEC)
    assert set(report.per_region_mean.values()) == {0.0}


def test_split_windows_and_pooling():
    panel = random_panel(30)
    report = evaluate_split(Persistence, panel, None, SPEC)
    assert report.regime == SPLIT
    assert report.origins == [27]
    assert all(w.n_steps == 3 for w in report.windows)

    report = evaluate_split(Persistence, random_panel(40), None, SPEC)
    assert report.origins == [36, 39]
    region = report.regions[0]
    full, short = [w for w in report.windows if w.region == region]
    assert short.n_steps == 1
    pooled = np.sqrt((3 * full.rmse ** 2 + short.rmse ** 2) / 4)
    assert report.per_region_mean[region] == pytest.approx(pooled, rel=1e-12)


def test_stateless_model_agrees_across_regimes():
    panel = random_panel(30)
    split = evaluate_split(Persistence, panel, None, SPEC)
    expanding = evaluate_expanding(Persistence, panel, None, ExpandingSpec(), SPEC)
    assert expanding.origins == [24, 27]
    a = origins_mean(split, [27])
    b = origins_mean(expanding, [27])
    assert a == b


def test_expanding_needs_enough_steps():
    with pytest.raises(InputError):
        evaluate_expanding(Persistence, random_panel(26), None, ExpandingSpec(), SPEC)
    with pytest.raises(InputError):
        evaluate_expanding(Persistence, random_panel(30), None, ExpandingSpec(12, 3, 3), SPEC)


def test_training_never_sees_the_future():
    seen = []
    panel = random_panel(36)
    evaluate_expanding(recorder(seen), panel, None, ExpandingSpec(), SPEC)
    assert len(seen) == 4
    for k, batch in zip([24, 27, 30, 33], seen):
        assert (batch.origins + SPEC.horizon <= k).all()
        assert not np.isnan(batch.label).any()

    seen.clear()
    evaluate_split(recorder(seen), panel, None, SPEC)
    (batch,) = seen
    assert (batch.origins + SPEC.horizon <= 32).all()


def test_future_values_do_not_change_past_windows():
    panel = random_panel(36)
    values = {r.code: v.copy() for r, v in panel.series.items()}
    for v in values.values():
        v[27:] = 1e3
    poisoned = make_panel(values)
    a = evaluate_expanding(ModelKind.LAGGED_REGRESSION, panel, None, ExpandingSpec(), SPEC)
    b = evaluate_expanding(ModelKind.LAGGED_REGRESSION, poisoned, None, ExpandingSpec(), SPEC)
    first = [w for w in a.windows if w.origin == 24]
    assert first == [w for w in b.windows if w.origin == 24]


def test_last_year_mean():
    report = evaluate_expanding(Persistence, random_panel(36), None, ExpandingSpec(), SPEC)
    scores = last_year_mean(report)
    assert scores == origins_mean(report, [24, 27, 30, 33])
    assert report.region_scores('last_year') == scores
    assert report.region_scores('full') == report.per_region_mean

    short = evaluate_expanding(Persistence, random_panel(30), None, ExpandingSpec(), SPEC)
    with pytest.raises(InputError):
        last_year_mean(short)
    with pytest.raises(InputError):
        short.region_scores('median')


@pytest.mark.parametrize('length, last, n_steps', [(80, 78, 2), (85, 84, 1)])
def test_expanding_scores_a_short_final_window(length, last, n_steps):
    panel = random_panel(length)
    report = evaluate_expanding(Persistence, panel, None, ExpandingSpec(), SPEC)
    assert report.origins[-1] == last
    assert {w.n_steps for w in report.windows if w.origin == last} == {n_steps}

    region = county('c0')
    assert report.predictions(region).index[-1] == length - 1
    final = [w for w in report.windows if w.region == region and w.origin == last][0]
    series = panel.series[region]
    assert final.rmse == pytest.approx(rmse([series[last - 1]] * n_steps, series[last:]))

    scores = last_year_mean(report)
    assert scores == origins_mean(report, [o for o in report.origins if o >= length - 12])


def test_window_means_and_predictions():
    panel = random_panel(36)
    report = evaluate_expanding(Persistence, panel, None, ExpandingSpec(), SPEC)
    means = report.window_means()
    assert list(means) == [24, 27, 30, 33]
    region = county('c0')
    pred = report.predictions(region)
    assert list(pred.index) == list(range(24, 36))
    assert pred[24] == panel.series[region][23]


def test_level_summary_and_report_set(small_hierarchy):
    panel = random_panel(36)
    reports = ReportSet()
    reports.append(evaluate_expanding(Persistence, panel, None, ExpandingSpec(), SPEC))
    reports.append(evaluate_expanding(Zero, panel, None, ExpandingSpec(), SPEC))
    assert reports.labels == ['persist/expanding', 'zero/expanding']
    assert reports['zero/expanding'] is reports[1]
    with pytest.raises(InputError):
        reports.append(evaluate_expanding(Zero, panel, None, ExpandingSpec(), SPEC))
    with pytest.raises(KeyError):
        reports['nope']

    table = reports.summary()
    assert list(table.columns) == ['county']
    assert table.loc['zero/expanding', 'county'] == pytest.approx(np.mean(list(last_year_mean(reports[1]).values())))
    with pytest.raises(InputError):
        level_summary(reports, hierarchy=small_hierarchy)

    frame = reports.score_frame('county')
    assert list(frame.columns) == reports.labels
    assert list(frame.index) == ['c0', 'c1', 'c2', 'c3']


def test_regime_summary_uses_the_split_test_span(small_hierarchy):
    panel = random_panel(40)
    reports = ReportSet()
    for covariate_set in ('none', 'common'):
        reports.append(evaluate_split(Persistence, panel, None, SPEC, covariate_set=covariate_set))
        reports.append(evaluate_expanding(Persistence, panel, None, ExpandingSpec(), SPEC,
                                          covariate_set=covariate_set))
    reports.append(evaluate_expanding(Zero, panel, None, ExpandingSpec(), SPEC, covariate_set='none'))

    table = reports.regime_summary()
    assert list(table.index) == [('persist', SPLIT), ('persist', EXPANDING), ('zero', EXPANDING)]
    assert list(table.columns) == ['county']
    split = np.mean(list(reports['persist/split/none'].per_region_mean.values()))
    assert table.loc[('persist', SPLIT), 'county'] == pytest.approx(split, rel=1e-12)
    # a stateless model predicts the same test steps under both regimes
    assert table.loc[('persist', EXPANDING), 'county'] == pytest.approx(split, rel=1e-12)
    zero = np.mean([np.sqrt(np.mean(v[36:] ** 2)) for v in panel.series.values()])
    assert table.loc[('zero', EXPANDING), 'county'] == pytest.approx(zero, rel=1e-12)

    assert span_mean(reports['persist/split/none'], 36) == pytest.approx(
        reports['persist/split/none'].per_region_mean, rel=1e-12)
    with pytest.raises(InputError):
        span_mean(reports['persist/split/none'], 30)
    with pytest.raises(InputError):
        regime_summary(reports, hierarchy=small_hierarchy)


def test_score_frame_requires_same_regions():
    reports = ReportSet([evaluate_expanding(Zero, random_panel(36, regions=4), None, ExpandingSpec(), SPEC),
                         evaluate_expanding(Persistence, random_panel(36, regions=3), None, ExpandingSpec(), SPEC)])
    with pytest.raises(InputError):
        reports.score_frame('county')


def test_report_json_roundtrip(tmp_path):
    report = evaluate_expanding(Persistence, random_panel(36), None, ExpandingSpec(), SPEC, covariate_set='none')
    assert report.label == 'persist/expanding/none'
    text = report.to_json()
    back = BacktestReport.from_json(text)
    assert back.to_json() == text

    path = tmp_path / 'report.json'
    path.write_text(text)
    assert BacktestReport.from_json(str(path)).per_region_mean == report.per_region_mean


def test_report_rejects_tampered_means():
    report = evaluate_expanding(Persistence, random_panel(36), None, ExpandingSpec(), SPEC)
    d = json.loads(report.to_json())
    d['per_region_mean']['c0'] += 0.01
    with pytest.raises(ComputationError):
        BacktestReport.from_dict(d)

    d = json.loads(report.to_json())
    d['windows'][0]['rmse'] += 0.01
    with pytest.raises(ComputationError):
        BacktestReport.from_dict(d)

    with pytest.raises(InputError):
        BacktestReport.from_dict({'regime': EXPANDING})
