import json
import os

import numpy as np
import pytest

from countcast.errors import ConfigError
from countcast.panel import Interval, aggregate, ingest_events, roll_up, sparsity
from countcast.synth import SplitMix64, SynthConfig, default_benchmark, generate


def test_splitmix_reference_value():
    assert SplitMix64(0).next_u64() == 0xE220A8397B1DCDAF


def test_splitmix_draws_in_range():
    rng = SplitMix64(123)
    draws = [rng.uniform() for _ in range(1000)]
    assert 0 <= min(draws) and max(draws) < 1
    assert {rng.integer(5) for _ in range(200)} == {0, 1, 2, 3, 4}
    assert rng.poisson(0) == 0
    counts = [rng.poisson(4.0) for _ in range(4000)]
    assert np.mean(counts) == pytest.approx(4.0, abs=0.15)
    large = [rng.poisson(100.0) for _ in range(4000)]
    assert np.mean(large) == pytest.approx(100.0, abs=0.6)


def test_generate_is_deterministic():
    a = generate(default_benchmark(0)).files()
    b = generate(default_benchmark(0)).files()
    assert a == b
    c = generate(default_benchmark(1)).files()
    assert c['events.csv'] != a['events.csv']
    assert c['hierarchy.csv'] == a['hierarchy.csv']


def test_default_layout(benchmark):
    h = benchmark.hierarchy
    assert len(h.counties) == 30 and len(h.districts) == 5
    assert [c.code for c in h.members(h.districts[0])] == ['c001', 'c002', 'c003', 'c004', 'c005', 'c006']
    panel = roll_up(aggregate(benchmark.events, h, Interval.MONTHLY), h)
    assert len(panel) == 84 and panel.grid.start.isoformat() == '2018-01-01'
    assert len(panel.regions) == 36


def test_small_layout_roll_up():
    out = generate(SynthConfig(n_districts=2, counties_per_district=3, months=36, seed=5))
    panel = roll_up(aggregate(out.events, out.hierarchy, Interval.MONTHLY), out.hierarchy)
    assert len(panel.regions) == 9
    assert [lv.value for lv in panel.levels()] == ['county', 'district', 'state']


def test_counts_follow_ledger(benchmark):
    panel = aggregate(benchmark.events, benchmark.hierarchy, Interval.MONTHLY)
    for code, entry in benchmark.ledger['counties'].items():
        series = panel.series[benchmark.hierarchy.region(code)]
        assert series.tolist() == entry['counts']
        expected = sum(entry['intensity'])
        assert abs(entry['total'] - expected) < 4 * np.sqrt(expected)


def test_sparsity_spans_sparse_to_dense(benchmark):
    panel = aggregate(benchmark.events, benchmark.hierarchy, Interval.MONTHLY)
    rates = {c: e['base_rate'] for c, e in benchmark.ledger['counties'].items()}
    sparsest = min(rates, key=rates.get)
    densest = max(rates, key=rates.get)
    assert sparsity(panel.series[benchmark.hierarchy.region(sparsest)]) > 0.5
    assert sparsity(panel.series[benchmark.hierarchy.region(densest)]) < 0.05
    # each district mixes sparse and dense counties
    for d in benchmark.hierarchy.districts:
        district_rates = [rates[c.code] for c in benchmark.hierarchy.members(d)]
        assert max(district_rates) / min(district_rates) > 10


def test_planted_channel_leads_counts(benchmark):
    rates = {c: e['base_rate'] for c, e in benchmark.ledger['counties'].items()}
    densest = max(rates, key=rates.get)
    counts = np.array(benchmark.ledger['counties'][densest]['counts'], dtype=float)
    channel = np.array([np.nan if v is None else v for v in benchmark.channels['dispensing'][densest]])
    observed = ~np.isnan(channel[:-1])
    r = np.corrcoef(channel[:-1][observed], counts[1:][observed])[0, 1]
    assert r > 0.5


def test_missing_spans(benchmark):
    values = benchmark.channels['dispensing']['c001']
    assert all(v is None for v in values[:12]) and all(v is None for v in values[-6:])
    assert all(v is not None for v in values[12:-6])
    intake = benchmark.channels['treatment_intake']['c001']
    assert all(v is not None for v in intake[:72]) and all(v is None for v in intake[72:])


def test_static_values(benchmark):
    assert len(benchmark.static) == 60
    assert all(0 <= v < 1 for v in benchmark.static.values())


def test_write_and_reingest(benchmark, tmp_path):
    paths = benchmark.write(str(tmp_path))
    assert sorted(os.path.relpath(p, str(tmp_path)) for p in paths) == sorted([
        'events.csv', 'hierarchy.csv', 'static.csv', 'ledger.json',
        os.path.join('channels', 'dispensing.csv'), os.path.join('channels', 'treatment_intake.csv'),
    ])
    assert ingest_events(str(tmp_path / 'events.csv')) == benchmark.events
    with open(str(tmp_path / 'ledger.json')) as f:
        ledger = json.load(f)
    assert ledger['config']['seed'] == 0
    assert ledger['config']['base_rates'] == list(benchmark.config.base_rates)


def test_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(months=24)
    with pytest.raises(ConfigError):
        SynthConfig(base_rates=(1.0, 2.0))
    with pytest.raises(ConfigError):
        SynthConfig.from_dict({'districts': 4})
    cfg = SynthConfig.from_dict({'n_districts': 2, 'counties_per_district': 2, 'start': '2020-03-15'})
    assert cfg.start.isoformat() == '2020-03-01'
    assert cfg.to_dict()['n_districts'] == 2
