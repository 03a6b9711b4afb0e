from countcast.backtest import BacktestReport, ExpandingSpec, ReportSet, evaluate_expanding, evaluate_split
from countcast.client import initialize
from countcast.models import ModelKind, TrainConfig, WindowSpec, build_model, make_supervised, train
from countcast.panel import GeoHierarchy, Interval, Level, RegionId, SeriesPanel, TimeGrid
from countcast.pipeline import Pipeline, RunConfig
from countcast.stats import ScoreMatrix, comparison_report, friedman, nemenyi
from countcast.synth import SynthConfig, default_benchmark, generate
