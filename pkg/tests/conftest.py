import os

import numpy as np
import pytest

from countcast.covariates import CovariateSet
from countcast.panel import GeoHierarchy, Interval, SeriesPanel, TimeGrid, county
from countcast.pipeline import Pipeline
from countcast.synth import default_benchmark, generate


@pytest.fixture
def small_hierarchy():
    """two districts of three counties"""
    return GeoHierarchy({'a1': 'd1', 'a2': 'd1', 'a3': 'd1', 'b1': 'd2', 'b2': 'd2', 'b3': 'd2'})


def make_panel(series, start='2018-01-01', scale=1.0):
    """
    normalized county panel from {code: values}
    """
    length = len(next(iter(series.values())))
    grid = TimeGrid(Interval.MONTHLY, start, length)
    regions = {county(c): np.asarray(v, dtype=float) for c, v in series.items()}
    return SeriesPanel(grid, regions, scale={r: scale for r in regions})


def empty_covariates(panel):
    return CovariateSet(panel.grid)


@pytest.fixture(scope='session')
def benchmark():
    return generate(default_benchmark(seed=0))


def benchmark_config(data_dir, out_dir, **overrides):
    cfg = {
        'paths': {
            'events': os.path.join(data_dir, 'events.csv'),
            'hierarchy': os.path.join(data_dir, 'hierarchy.csv'),
            'static': os.path.join(data_dir, 'static.csv'),
            'channels': {
                'dispensing': os.path.join(data_dir, 'channels', 'dispensing.csv'),
                'treatment_intake': os.path.join(data_dir, 'channels', 'treatment_intake.csv'),
            },
            'out': out_dir,
        },
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture(scope='session')
def benchmark_dir(benchmark, tmp_path_factory):
    data_dir = str(tmp_path_factory.mktemp('benchmark'))
    benchmark.write(data_dir)
    return data_dir


@pytest.fixture(scope='session')
def benchmark_inputs(benchmark_dir, tmp_path_factory):
    out_dir = str(tmp_path_factory.mktemp('benchmark_out'))
    pipeline = Pipeline(benchmark_config(benchmark_dir, out_dir))
    return pipeline, pipeline.load()
