import pytest

from conftest import benchmark_config
from countcast.covariates import CALENDAR_CHANNELS
from countcast.errors import ConfigError
from countcast.models import ModelKind
from countcast.pipeline import Pipeline, RunConfig, default_config


def test_run_config_defaults():
    cfg = RunConfig.from_dict({})
    assert cfg.models == [ModelKind.LAGGED_REGRESSION, ModelKind.NLINEAR, ModelKind.TFT_LITE]
    assert (cfg.window.input_len, cfg.window.horizon) == (12, 3)
    assert cfg.expanding.initial_train == 24
    assert cfg.summary == 'last_year'

    seeded = RunConfig.from_dict({'train': {'epochs': 5}}, seed=11)
    assert seeded.train.seed == 11 and seeded.synth.seed == 11
    assert seeded.train.epochs == 5 and seeded.train.batch_size == 32


def test_run_config_rejects_bad_values():
    for bad in ({'regimes': ['rolling']}, {'summary': 'median'}, {'window': {'input_len': 12, 'horizon': 4}},
                {'channels': {'none': ['month_sin']}}, {'span': {'start': '2018-01-01'}}, {'train': {'epochs': 0}}):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(bad)


def test_default_config_is_a_copy():
    cfg = default_config()
    cfg['window']['input_len'] = 99
    assert default_config()['window']['input_len'] == 12


def test_covariate_set_selection(benchmark_inputs):
    pipeline, inputs = benchmark_inputs
    calendar = sorted(CALENDAR_CHANNELS)
    statics = inputs.covariates.static_names()
    assert statics

    assert pipeline.selection('none', inputs) == (calendar, [])
    assert pipeline.selection('common', inputs) == (sorted(calendar + ['nearby_trend', 'similar_trend']), statics)
    dynamic, static = pipeline.selection('all', inputs)
    assert {'dispensing', 'dispensing__was_missing', 'treatment_intake'} <= set(dynamic)
    assert static == statics

    assert pipeline.selection('dispensing', inputs) == (
        sorted(calendar + ['dispensing', 'dispensing__was_missing']), [])
    assert pipeline.selection('static', inputs) == (calendar, statics)
    with pytest.raises(ConfigError):
        pipeline.selection('weather', inputs)


def test_each_expands_into_families(benchmark_dir, tmp_path):
    pipeline = Pipeline(benchmark_config(benchmark_dir, str(tmp_path), covariate_sets=['each', 'common']))
    assert pipeline.expand_sets() == ['none', 'nearby_trend', 'similar_trend', 'static',
                                      'dispensing', 'treatment_intake', 'common']


def test_explicit_channel_lists(benchmark_dir, tmp_path):
    pipeline = Pipeline(benchmark_config(benchmark_dir, str(tmp_path),
                                         channels={'common': ['nearby_trend', 'month_sin']}))
    assert pipeline.selection('common') == (['month_sin', 'nearby_trend'], [])

    pipeline = Pipeline(benchmark_config(benchmark_dir, str(tmp_path), channels={'common': ['rainfall']}))
    with pytest.raises(ConfigError):
        pipeline.selection('common')


def test_covariates_are_gap_free(benchmark_inputs):
    _, inputs = benchmark_inputs
    for region in inputs.hierarchy.regions():
        for name in ('dispensing', 'treatment_intake', 'nearby_trend', 'similar_trend'):
            ch = inputs.covariates.channel(region, name)
            assert not ch.missing.any()
