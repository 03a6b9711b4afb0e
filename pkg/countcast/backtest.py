"""
Backtesting regimes and RMSE aggregation

    split: fit once on the first 90% of steps, score the rest in successive H-step windows
    expanding: refit from scratch on [0, k) for k = initial, initial + step, ... < T and score
               [k, min(k + H, T)); the final window is short when T - initial is not a multiple of H

every window is predicted from true history up to its origin; RMSEs are on the normalized scale
"""
import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from countcast.errors import ComputationError, InputError
from countcast.models import ModelKind, build_model, make_supervised, window_samples
from countcast.panel import Level, RegionId, TimeGrid

logger = logging.getLogger(__name__)

YEAR = 12
SPLIT = 'split'
EXPANDING = 'expanding'
REGIMES = (SPLIT, EXPANDING)


def rmse(pred, actual):
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise InputError('rmse: length mismatch %s vs %s' % (pred.shape, actual.shape))
    if pred.size == 0:
        raise InputError('rmse: empty input')
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


@dataclass(frozen=True)
class ExpandingSpec:
    initial_train: int = 24
    step: int = 3
    horizon: int = 3

    def __post_init__(self):
        if min(self.initial_train, self.step, self.horizon) < 1:
            raise InputError('expanding window sizes must be >= 1')
        if self.step != self.horizon:
            raise InputError('expanding step (%d) must equal the horizon (%d)' % (self.step, self.horizon))


def split_train_test(panel, fraction=0.9):
    """
    :return: (range of train steps, range of test steps)
    """
    T = len(panel)
    if T < 10:
        raise InputError('a %d-step panel is too short to split (need >= 10)' % T)
    if not 0 < fraction < 1:
        raise InputError('split fraction must be in (0, 1)')
    n = int(math.floor(fraction * T + 1e-9))
    return range(0, n), range(n, T)


@dataclass(frozen=True)
class WindowScore:
    region: RegionId
    origin: int
    n_steps: int
    rmse: float
    prediction: tuple
    actual: tuple


def model_label(model):
    if isinstance(model, (ModelKind, str)):
        return ModelKind(model).value
    return getattr(model, 'label', None) or getattr(model, '__name__', type(model).__name__)


def _make(model, spec, cfg):
    if isinstance(model, (ModelKind, str)):
        return build_model(model, spec, cfg)
    return model(spec, cfg)


def _fit(model, panel, covariates, spec, cfg, channels, statics):
    samples = make_supervised(panel, covariates, spec, channels=channels, statics=statics)
    return _make(model, spec, cfg).fit(samples)


def _score(fitted, panel, covariates, spec, origin, channels, statics):
    samples = window_samples(panel, covariates, spec, origin, channels, statics)
    preds = fitted.predict(samples)
    n = min(spec.horizon, len(panel) - origin)
    scores = []
    for s, p in zip(samples, preds):
        if not np.all(np.isfinite(p[:n])):
            raise ComputationError('non-finite prediction for %s at origin %d' % (s.region, origin))
        scores.append(WindowScore(s.region, origin, n, rmse(p[:n], s.label[:n]),
                                  tuple(float(x) for x in p[:n]), tuple(float(x) for x in s.label[:n])))
    return scores


class BacktestReport:
    """
    per-region, per-window RMSEs of one (model, regime, covariate set) run

    split reports pool every test step of a region into one RMSE; expanding reports average
    the window RMSEs
    """

    def __init__(self, regime, model, grid, windows, covariate_set=None, config=None):
        if regime not in REGIMES:
            raise InputError('unknown regime %r' % regime)
        self.regime = regime
        self.model = model
        self.grid = grid
        self.covariate_set = covariate_set
        self.config = dict(config or {})
        self.windows = sorted(windows, key=lambda w: (w.region.sort_key, w.origin))
        if any(w.rmse < 0 or not np.isfinite(w.rmse) for w in self.windows):
            raise ComputationError('report %s holds an invalid RMSE' % self.label)

    def __repr__(self):
        return 'BacktestReport(%s, %d windows)' % (self.label, len(self.windows))

    @property
    def label(self):
        parts = [str(self.model), self.regime]
        if self.covariate_set:
            parts.append(str(self.covariate_set))
        return '/'.join(parts)

    @property
    def regions(self):
        return sorted({w.region for w in self.windows})

    @property
    def origins(self):
        return sorted({w.origin for w in self.windows})

    @property
    def per_region_window_rmse(self):
        return {(w.region, w.origin): w.rmse for w in self.windows}

    @property
    def per_region_mean(self):
        out = {}
        for region in self.regions:
            ws = [w for w in self.windows if w.region == region]
            if self.regime == SPLIT:
                out[region] = math.sqrt(sum(w.n_steps * w.rmse ** 2 for w in ws) / sum(w.n_steps for w in ws))
            else:
                out[region] = float(np.mean([w.rmse for w in ws]))
        return out

    @property
    def per_level_mean(self):
        return level_means(self.per_region_mean)

    def window_means(self):
        """mean RMSE over regions for each window origin (the learning curve)"""
        return {o: float(np.mean([w.rmse for w in self.windows if w.origin == o])) for o in self.origins}

    def region_scores(self, summary='last_year'):
        """
        per-region score used in summaries: the last-year mean of an expanding report, or the
        full-span mean (always for split reports)
        """
        if summary == 'last_year' and self.regime == EXPANDING:
            return last_year_mean(self)
        if summary not in ('last_year', 'full'):
            raise InputError('unknown summary %r' % summary)
        return self.per_region_mean

    def predictions(self, region):
        """
        stitched predictions of one region
        :return: pandas.Series indexed by grid step
        """
        values = {}
        for w in self.windows:
            if w.region == region:
                for i, p in enumerate(w.prediction):
                    values[w.origin + i] = p
        return pd.Series(values, dtype=float).sort_index()

    def check_consistency(self, stored=None):
        """
        recompute every mean from the window entries and compare with `stored`
        (a dict as written by to_dict); raise ComputationError on mismatch
        """
        for w in self.windows:
            if len(w.prediction) != w.n_steps or abs(rmse(w.prediction, w.actual) - w.rmse) > 1e-12:
                raise ComputationError('window %s@%d disagrees with its predictions' % (w.region, w.origin))
        if stored is None:
            return True
        fresh = self.to_dict()
        for key in ('per_region_mean', 'per_level_mean'):
            for name, value in stored.get(key, {}).items():
                if name not in fresh[key] or abs(fresh[key][name] - value) > 1e-12:
                    raise ComputationError('report %s: stored %s[%s] does not match its windows'
                                           % (self.label, key, name))
        return True

    def to_dict(self):
        return {
            'label': self.label,
            'model': self.model,
            'regime': self.regime,
            'covariate_set': self.covariate_set,
            'grid': {'interval': self.grid.interval.value, 'start': self.grid.start.isoformat(),
                     'length': self.grid.length},
            'config': self.config,
            'windows': [{'region': w.region.code, 'level': w.region.level.value, 'origin': w.origin,
                         'n_steps': w.n_steps, 'rmse': w.rmse, 'prediction': list(w.prediction),
                         'actual': list(w.actual)} for w in self.windows],
            'per_region_mean': {r.code: v for r, v in self.per_region_mean.items()},
            'per_level_mean': {lv.value: v for lv, v in self.per_level_mean.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + '\n'

    @classmethod
    def from_dict(cls, d):
        try:
            grid = TimeGrid(d['grid']['interval'], pd.Timestamp(d['grid']['start']).date(), d['grid']['length'])
            windows = [WindowScore(RegionId(w['region'], w['level']), int(w['origin']), int(w['n_steps']),
                                   float(w['rmse']), tuple(w['prediction']), tuple(w['actual']))
                       for w in d['windows']]
            report = cls(d['regime'], d['model'], grid, windows, covariate_set=d.get('covariate_set'),
                         config=d.get('config'))
        except (KeyError, TypeError) as e:
            raise InputError('malformed backtest report: %s' % e)
        report.check_consistency(d)
        return report

    @classmethod
    def from_json(cls, source):
        """
        :param source: path or JSON text
        """
        if isinstance(source, str) and source.lstrip().startswith('{'):
            return cls.from_dict(json.loads(source))
        with open(source) as f:
            return cls.from_dict(json.load(f))


def level_means(scores):
    """
    :param scores: dict[RegionId, float]
    :return: dict[Level, float] unweighted mean per level
    """
    out = {}
    for level in Level:
        values = [v for r, v in scores.items() if r.level is level]
        if values:
            out[level] = float(np.mean(values))
    return out


def evaluate_split(model, panel, covariates, spec, cfg=None, channels=None, statics=None, fraction=0.9,
                   covariate_set=None):
    """
    fit once on the train span and score the test span in non-overlapping H-step windows

    :param model: ModelKind or a factory (spec, cfg) -> Forecaster
    :return: BacktestReport
    """
    train_steps, test_steps = split_train_test(panel, fraction)
    n_train = len(train_steps)
    if len(test_steps) < spec.horizon:
        raise InputError('test span of %d steps is shorter than the horizon %d' % (len(test_steps), spec.horizon))
    fitted = _fit(model, panel.head(n_train), None if covariates is None else covariates.head(n_train),
                  spec, cfg, channels, statics)
    windows = []
    for origin in range(n_train, len(panel), spec.horizon):
        windows.extend(_score(fitted, panel, covariates, spec, origin, channels, statics))
    logger.info('split backtest %s: trained on %d steps, %d test windows',
                model_label(model), n_train, len(range(n_train, len(panel), spec.horizon)))
    config = {'window': asdict(spec), 'fraction': fraction, 'train': _cfg_echo(cfg)}
    return BacktestReport(SPLIT, model_label(model), panel.grid, windows, covariate_set, config)


def expanding_origins(length, espec):
    return list(range(espec.initial_train, length, espec.step))


def evaluate_expanding(model, panel, covariates, espec, spec, cfg=None, channels=None, statics=None,
                       covariate_set=None):
    """
    cold refit on [0, k) and score [k, min(k + H, T)) for every expanding origin k

    :return: BacktestReport
    """
    if espec.horizon != spec.horizon:
        raise InputError('expanding horizon %d differs from the window horizon %d' % (espec.horizon, spec.horizon))
    if espec.initial_train < spec.span:
        raise InputError('initial_train %d is shorter than one window (%d)' % (espec.initial_train, spec.span))
    if len(panel) < espec.initial_train + espec.horizon:
        raise InputError('panel has %d steps, expanding evaluation needs at least %d'
                         % (len(panel), espec.initial_train + espec.horizon))
    windows = []
    for k in expanding_origins(len(panel), espec):
        fitted = _fit(model, panel.head(k), None if covariates is None else covariates.head(k),
                      spec, cfg, channels, statics)
        scored = _score(fitted, panel, covariates, spec, k, channels, statics)
        windows.extend(scored)
        logger.info('expanding %s: origin %d, mean rmse %.4f', model_label(model), k,
                    np.mean([w.rmse for w in scored]))
    config = {'window': asdict(spec), 'expanding': asdict(espec), 'train': _cfg_echo(cfg)}
    return BacktestReport(EXPANDING, model_label(model), panel.grid, windows, covariate_set, config)


def _cfg_echo(cfg):
    if cfg is None:
        return None
    d = asdict(cfg)
    d['betas'] = list(cfg.betas)
    return d


def origins_mean(report, origins):
    """per-region mean of the window RMSEs at the given origins"""
    origins = set(origins)
    out = {}
    for region in report.regions:
        values = [w.rmse for w in report.windows if w.region == region and w.origin in origins]
        if not values:
            raise InputError('report %s has no windows at origins %s for %s' % (report.label, sorted(origins), region))
        out[region] = float(np.mean(values))
    return out


def last_year_mean(report, year=YEAR):
    """
    per-region mean RMSE of the windows lying inside the final `year` grid steps
    """
    T = report.grid.length
    start = T - year
    if start < 0 or not _covered(report).issuperset(range(start, T)):
        raise InputError('report %s does not cover the last %d steps' % (report.label, year))
    chosen = [o for o in report.origins if o >= start]
    if not chosen:
        raise InputError('report %s has no window starting in the last %d steps' % (report.label, year))
    return origins_mean(report, chosen)


def _covered(report):
    steps = set()
    for w in report.windows:
        steps.update(range(w.origin, w.origin + w.n_steps))
    return steps


def span_mean(report, start):
    """
    per-region RMSE pooled over every scored step in [start, T), whatever the regime; used to put
    split and expanding reports on the same test steps
    """
    T = report.grid.length
    if not report.windows or not _covered(report).issuperset(range(start, T)):
        raise InputError('report %s does not score every step from %d to %d' % (report.label, start, T))
    out = {}
    for region in report.regions:
        errors = [(p - a) ** 2 for w in report.windows if w.region == region
                  for i, (p, a) in enumerate(zip(w.prediction, w.actual)) if w.origin + i >= start]
        out[region] = math.sqrt(float(np.mean(errors)))
    return out


def level_summary(reports, hierarchy=None, summary='last_year', by='label'):
    """
    one row per report, one column per level, unweighted means of per-region scores

    :param reports: BacktestReport or iterable of them
    :param hierarchy: GeoHierarchy; when given every region of every level must be present
    :param by: report attribute used as row label
    :return: pandas.DataFrame
    """
    if isinstance(reports, BacktestReport):
        reports = [reports]
    rows = {}
    for report in reports:
        scores = report.region_scores(summary)
        if hierarchy is not None:
            missing = set(hierarchy.regions()) - set(scores)
            if missing:
                raise InputError('report %s lacks regions %s' % (report.label, ', '.join(sorted(map(str, missing)))))
        rows[getattr(report, by)] = {lv.value: v for lv, v in level_means(scores).items()}
    table = pd.DataFrame.from_dict(rows, orient='index')
    table = table[[lv.value for lv in Level if lv.value in table.columns]]
    table.index.name = by
    return table


def regime_summary(reports, hierarchy=None, fraction=0.9):
    """
    one row per (model, regime), averaged over covariate sets; every report is scored on the
    split regime's test steps so the two regimes are compared on the same span

    :return: pandas.DataFrame indexed by model and regime
    """
    if isinstance(reports, BacktestReport):
        reports = [reports]
    groups = {}
    for report in reports:
        _, test_steps = split_train_test(range(report.grid.length), fraction)
        scores = span_mean(report, test_steps.start)
        if hierarchy is not None:
            missing = set(hierarchy.regions()) - set(scores)
            if missing:
                raise InputError('report %s lacks regions %s' % (report.label, ', '.join(sorted(map(str, missing)))))
        groups.setdefault((report.model, report.regime), []).append(
            {lv.value: v for lv, v in level_means(scores).items()})
    table = pd.DataFrame([pd.DataFrame(group).mean() for group in groups.values()],
                         index=pd.MultiIndex.from_tuples(list(groups), names=['model', 'regime']))
    return table[[lv.value for lv in Level if lv.value in table.columns]]


class ReportSet:
    """
    ordered collection of BacktestReports with list-like access
    """

    def __init__(self, reports=None):
        self._reports = list(reports or [])

    def __len__(self):
        return len(self._reports)

    def __iter__(self):
        return iter(self._reports)

    def __getitem__(self, i):
        if isinstance(i, str):
            for r in self._reports:
                if r.label == i:
                    return r
            raise KeyError(i)
        return self._reports[i]

    def __str__(self):
        return '\n'.join(r.label for r in self._reports)

    def append(self, report):
        if not isinstance(report, BacktestReport):
            raise TypeError('ReportSet only holds BacktestReport objects')
        if report.label in self.labels:
            raise InputError('duplicate report label %s' % report.label)
        self._reports.append(report)

    @property
    def labels(self):
        return [r.label for r in self._reports]

    def summary(self, hierarchy=None, summary='last_year'):
        return level_summary(self._reports, hierarchy, summary)

    def regime_summary(self, hierarchy=None, fraction=0.9):
        return regime_summary(self._reports, hierarchy, fraction)

    def score_frame(self, level, summary='last_year'):
        """
        regions x reports frame of per-region scores at one level; every report must cover the
        same regions
        """
        level = Level(level)
        columns = {}
        reference = None
        for r in self._reports:
            scores = {reg: v for reg, v in r.region_scores(summary).items() if reg.level is level}
            regions = set(scores)
            if reference is None:
                reference = (r.label, regions)
            elif regions != reference[1]:
                diff = sorted(map(str, regions ^ reference[1]))
                raise InputError('reports %s and %s cover different %s regions: %s'
                                 % (reference[0], r.label, level.value, ', '.join(diff)))
            columns[r.label] = {reg.code: v for reg, v in scores.items()}
        frame = pd.DataFrame(columns)
        frame.index.name = 'region'
        return frame.sort_index()
