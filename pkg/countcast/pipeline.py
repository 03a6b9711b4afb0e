"""
Run configuration and the end-to-end pipeline behind every CLI command
"""
import copy
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from countcast.backtest import (EXPANDING, REGIMES, SPLIT, BacktestReport, ExpandingSpec, ReportSet,
                                evaluate_expanding, evaluate_split)
from countcast.base import Base
from countcast.covariates import (CALENDAR_CHANNELS, FLAG_SUFFIX, NEARBY, SIMILAR, CovariateSet, LagSpec,
                                  attach_static, calendar_covariates, ingest_dynamic_channel, missing_flag,
                                  nearby_region_trend, normalize_channels, read_static_csv, similar_region_trend)
from countcast.errors import ConfigError, InputError
from countcast.gapfill import FillMethod, evaluate_fill, fill_channel, fill_region
from countcast.models import ModelKind, TrainConfig, WindowSpec, build_model, make_supervised, window_samples
from countcast.panel import (GeoHierarchy, Interval, Level, aggregate, event_span, ingest_events, normalize,
                             roll_up, sparsity_report)
from countcast.plots import prediction_chart, window_rmse_chart
from countcast.stats import ScoreMatrix, comparison_report
from countcast.synth import SynthConfig, generate
from countcast.utils import frame_to_csv, write_atomic

logger = logging.getLogger(__name__)

NONE, COMMON, ALL, EACH = 'none', 'common', 'all', 'each'
COVARIATE_SETS = (NONE, COMMON, ALL, EACH)
STATIC_FAMILY = 'static'
SUMMARIES = ('last_year', 'full')

DEFAULT_CONFIG = {
    'paths': {
        'events': 'events.csv',
        'hierarchy': 'hierarchy.csv',
        'static': 'static.csv',
        'channels': {
            'dispensing': 'channels/dispensing.csv',
            'treatment_intake': 'channels/treatment_intake.csv',
        },
        'out': 'out',
    },
    'synth': dict(SynthConfig().to_dict(), base_rates=None),
    'span': None,
    'intervals': [i.value for i in Interval],
    'levels': [lv.value for lv in Level],
    'models': [k.value for k in ModelKind],
    'regimes': list(REGIMES),
    'covariate_sets': [NONE, COMMON, ALL],
    'channels': {COMMON: None, ALL: None},
    'window': {'input_len': 12, 'horizon': 3},
    'expanding': {'initial_train': 24, 'step': 3, 'horizon': 3},
    'train': {'epochs': 50, 'batch_size': 32, 'learning_rate': 1e-3, 'seed': 0,
              'betas': [0.9, 0.999], 'eps': 1e-8},
    'split_fraction': 0.9,
    'fill_method': FillMethod.EXPSMOOTH.value,
    'fill_eval': {'holdout': 12, 'positions': ['end', 'start']},
    'similar': {'lag_steps': 1, 'top_k': 5},
    'summary': 'last_year',
    'plot': {'model': ModelKind.NLINEAR.value, 'covariate_set': COMMON, 'region': None},
    'forecast': {'model': ModelKind.NLINEAR.value, 'covariate_set': COMMON},
}


def default_config():
    return copy.deepcopy(DEFAULT_CONFIG)


def _merge(defaults, overrides):
    out = dict(defaults)
    for key, value in (overrides or {}).items():
        if key not in defaults:
            raise ConfigError('unknown config key %r' % key)
        if isinstance(defaults[key], dict) and isinstance(value, dict) and key not in ('synth', 'channels'):
            out[key] = _merge(defaults[key], value) if key != 'paths' else {**defaults[key], **value}
        else:
            out[key] = value
    return out


def _enum_list(values, enum, what):
    try:
        return [enum(v) for v in values]
    except ValueError as e:
        raise ConfigError('invalid %s: %s' % (what, e))


def _choice(value, allowed, what):
    if value not in allowed:
        raise ConfigError('%s must be one of %s (got %r)' % (what, ', '.join(allowed), value))
    return value


@dataclass
class RunConfig:
    paths: dict
    synth: SynthConfig
    span: tuple
    intervals: list
    levels: list
    models: list
    regimes: list
    covariate_sets: list
    channels: dict
    window: WindowSpec
    expanding: ExpandingSpec
    train: TrainConfig
    split_fraction: float
    fill_method: FillMethod
    fill_eval: dict
    similar: LagSpec
    summary: str
    plot: dict = field(default_factory=dict)
    forecast: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d, seed=None):
        """
        :param d: mapping as loaded from yaml; missing keys take DEFAULT_CONFIG values
        :param seed: int, overrides train.seed and synth.seed
        """
        d = _merge(DEFAULT_CONFIG, d)
        synth = dict(DEFAULT_CONFIG['synth'], **(d['synth'] or {}))
        train = dict(d['train'])
        if seed is not None:
            synth['seed'] = seed
            train['seed'] = seed
        span = d['span']
        if span is not None:
            try:
                span = (pd.Timestamp(span['start']).date(), pd.Timestamp(span['end']).date())
            except (KeyError, TypeError, ValueError):
                raise ConfigError('span must be a mapping with start and end dates')
        try:
            cfg = cls(
                paths=d['paths'],
                synth=SynthConfig.from_dict(synth),
                span=span,
                intervals=_enum_list(d['intervals'], Interval, 'intervals'),
                levels=_enum_list(d['levels'], Level, 'levels'),
                models=_enum_list(d['models'], ModelKind, 'models'),
                regimes=[_choice(r, REGIMES, 'regime') for r in d['regimes']],
                covariate_sets=[_choice(s, COVARIATE_SETS, 'covariate set') for s in d['covariate_sets']],
                channels=dict(d['channels'] or {}),
                window=WindowSpec(**d['window']),
                expanding=ExpandingSpec(**d['expanding']),
                train=TrainConfig.from_dict(train),
                split_fraction=float(d['split_fraction']),
                fill_method=_enum_list([d['fill_method']], FillMethod, 'fill_method')[0],
                fill_eval=dict(d['fill_eval']),
                similar=LagSpec(**d['similar']),
                summary=_choice(d['summary'], SUMMARIES, 'summary'),
                plot=dict(d['plot']),
                forecast=dict(d['forecast']),
            )
        except TypeError as e:
            raise ConfigError('invalid run config: %s' % e)
        except InputError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e))
        if cfg.expanding.horizon != cfg.window.horizon:
            raise ConfigError('expanding.horizon must equal window.horizon')
        unknown = set(cfg.channels) - {COMMON, ALL}
        if unknown:
            raise ConfigError('channels overrides only exist for %s and %s' % (COMMON, ALL))
        return cfg


@dataclass
class Inputs:
    hierarchy: GeoHierarchy
    events: list
    counts: object
    panel: object
    covariates: CovariateSet
    external: list


def covariate_families(external):
    """
    dynamic and static names contributed by each ablation family
    :return: dict[str, (list[str], bool uses static)]
    """
    families = {NEARBY: ([NEARBY], False), SIMILAR: ([SIMILAR], False), STATIC_FAMILY: ([], True)}
    for name in external:
        families[name] = ([name, missing_flag_name(name)], False)
    return families


def missing_flag_name(name):
    return name + FLAG_SUFFIX


class Pipeline(Base):
    """
    loads a run config and executes the commands

    outputs are written atomically under paths.out (or the `out` override)
    """

    def __init__(self, cfg=None, out=None, seed=None):
        super().__init__(cfg)
        self.config = RunConfig.from_dict(self._cfg, seed=seed)
        self.out_dir = self.resolve(out if out is not None else self.config.paths.get('out', 'out'))
        self._inputs = None

    def _path(self, key):
        path = self.config.paths.get(key)
        if path is None:
            raise ConfigError('paths.%s is not set' % key)
        resolved = self.resolve(path)
        if not os.path.exists(resolved):
            raise FileNotFoundError('input file not found: %s' % resolved)
        return resolved

    def _write(self, name, data):
        path = os.path.join(self.out_dir, name)
        write_atomic(path, data)
        logger.info('wrote %s', path)
        return path

    # synth

    def synth(self):
        out = generate(self.config.synth)
        paths = out.write(self.out_dir)
        return paths

    # inputs

    def hierarchy(self):
        return GeoHierarchy.from_csv(self._path('hierarchy'))

    def events(self):
        return ingest_events(self._path('events'))

    def load(self):
        """
        read every input and build the normalized panel and the full covariate set
        :return: Inputs
        """
        if self._inputs is not None:
            return self._inputs
        hierarchy = self.hierarchy()
        events = self.events()
        span = self.config.span or event_span(events)
        counts = roll_up(aggregate(events, hierarchy, Interval.MONTHLY, span), hierarchy)
        panel = normalize(counts)
        covariates, external = self.build_covariates(counts, hierarchy)
        self._inputs = Inputs(hierarchy, events, counts, panel, covariates, external)
        return self._inputs

    def external_channels(self, grid, hierarchy):
        """
        :return: dict[name, dict[RegionId, Channel]] as ingested, gaps intact
        """
        out = {}
        for name, path in sorted((self.config.paths.get('channels') or {}).items()):
            resolved = self.resolve(path)
            if not os.path.exists(resolved):
                raise FileNotFoundError('input file not found: %s' % resolved)
            out[name] = ingest_dynamic_channel(resolved, name, grid, hierarchy)
        return out

    def build_covariates(self, counts, hierarchy):
        """
        every covariate family on the monthly grid of `counts` (raw rolled-up counts)

        trend and external channels are max-abs normalized per region after gap filling;
        calendar and missing-flag channels are left as they are
        :return: (CovariateSet, list[str] external channel names)
        """
        grid = counts.grid
        regions = hierarchy.regions()
        cset = CovariateSet(grid).with_shared(calendar_covariates(grid), regions)
        cset = cset.with_dynamic(nearby_region_trend(counts, hierarchy))
        cset = cset.with_dynamic(similar_region_trend(counts, hierarchy, self.config.similar))

        static_path = self.config.paths.get('static')
        if static_path is not None:
            cset = attach_static(cset, read_static_csv(self._path('static'), hierarchy), hierarchy)

        external = self.external_channels(grid, hierarchy)
        names = sorted(external)
        for region in regions:
            raw = [external[n][region] for n in names]
            if not raw:
                continue
            filled = self.fill(raw, [cset.channel(region, NEARBY), cset.channel(region, SIMILAR)])
            cset = cset.with_dynamic([(region, ch) for ch in filled])
            cset = cset.with_dynamic([(region, missing_flag(ch)) for ch in raw])
        cset = normalize_channels(cset, set(names) | {NEARBY, SIMILAR})
        return cset, names

    def fill(self, channels, companions):
        """
        fill the external channels of one region; the iterative imputer also sees the region's
        complete trend channels
        """
        method = self.config.fill_method
        if method is FillMethod.ITERATIVE:
            return fill_region(list(channels) + list(companions), method)[:len(channels)]
        return [fill_channel(ch, method) for ch in channels]

    def selection(self, covariate_set, inputs=None):
        """
        :return: (dynamic names, static names) of a covariate set, or of one ablation family
        """
        inputs = inputs or self.load()
        cset = inputs.covariates
        statics = cset.static_names()
        calendar = [n for n in CALENDAR_CHANNELS if n in cset.dynamic_names()]
        families = covariate_families(inputs.external)
        if covariate_set in (COMMON, ALL) and self.config.channels.get(covariate_set):
            chosen = list(self.config.channels[covariate_set])
            unknown = set(chosen) - set(cset.dynamic_names()) - set(statics)
            if unknown:
                raise ConfigError('unknown channels in channels.%s: %s' % (covariate_set, sorted(unknown)))
            return sorted(n for n in chosen if n not in statics), sorted(n for n in chosen if n in statics)
        if covariate_set == NONE:
            return sorted(calendar), []
        if covariate_set == COMMON:
            return sorted(calendar + [NEARBY, SIMILAR]), statics
        if covariate_set == ALL:
            return sorted(cset.dynamic_names()), statics
        if covariate_set in families:
            dynamic, uses_static = families[covariate_set]
            return sorted(calendar + dynamic), statics if uses_static else []
        raise ConfigError('unknown covariate set %r' % covariate_set)

    def expand_sets(self, inputs=None):
        sets = []
        for s in self.config.covariate_sets:
            if s == EACH:
                inputs = inputs or self.load()
                sets.extend([NONE] + list(covariate_families(inputs.external)))
            else:
                sets.append(s)
        return list(dict.fromkeys(sets))

    # commands

    def ingest(self):
        inputs = self.load()
        frame = inputs.counts.to_frame().astype(np.int64)
        return self._write('panel.csv', frame.to_csv(lineterminator='\n'))

    def sparsity(self):
        hierarchy = self.hierarchy()
        events = self.events()
        table = sparsity_report(events, hierarchy, self.config.intervals, self.config.levels, self.config.span)
        return self._write('sparsity.csv', frame_to_csv(table))

    def fill_eval(self):
        """
        holdout RMSE of every fill method per external channel and position, averaged over regions
        """
        inputs = self.load()
        holdout = int(self.config.fill_eval.get('holdout', 12))
        positions = list(self.config.fill_eval.get('positions', ['end']))
        grid = inputs.counts.grid
        external = self.external_channels(grid, inputs.hierarchy)
        trends = inputs.covariates
        rows = []
        for name in sorted(external):
            for at in positions:
                row = {'channel': name, 'position': at}
                for method in FillMethod:
                    scores = []
                    for region, ch in external[name].items():
                        companions = [external[o][region] for o in sorted(external) if o != name]
                        companions += [trends.channel(region, NEARBY), trends.channel(region, SIMILAR)]
                        scores.append(evaluate_fill(ch, method, holdout=holdout, at=at, companions=companions))
                    row[method.value] = float(np.mean(scores))
                rows.append(row)
        table = pd.DataFrame(rows).set_index(['channel', 'position'])
        return self._write('fill_eval.csv', frame_to_csv(table))

    def run_backtest(self, model, regime, covariate_set, inputs=None):
        inputs = inputs or self.load()
        channels, statics = self.selection(covariate_set, inputs)
        c = self.config
        if regime == SPLIT:
            return evaluate_split(model, inputs.panel, inputs.covariates, c.window, c.train, channels, statics,
                                  fraction=c.split_fraction, covariate_set=covariate_set)
        return evaluate_expanding(model, inputs.panel, inputs.covariates, c.expanding, c.window, c.train,
                                  channels, statics, covariate_set=covariate_set)

    def backtest(self, plot=False):
        """
        every configured (model, regime, covariate set); writes one json report per run plus
        summary.csv (one row per run), regime_summary.csv (one row per model and regime, scored on
        the split test span) and the two charts when `plot`
        :return: ReportSet
        """
        inputs = self.load()
        reports = ReportSet()
        for model in self.config.models:
            for regime in self.config.regimes:
                for covariate_set in self.expand_sets(inputs):
                    report = self.run_backtest(model, regime, covariate_set, inputs)
                    reports.append(report)
                    self._write(os.path.join('reports', report.label.replace('/', '_') + '.json'), report.to_json())
        self._write('summary.csv', frame_to_csv(reports.summary(inputs.hierarchy, self.config.summary)))
        self._write('regime_summary.csv',
                    frame_to_csv(reports.regime_summary(inputs.hierarchy, self.config.split_fraction)))
        if plot:
            self.plot(reports, inputs)
        return reports

    def plot(self, reports, inputs):
        p = self.config.plot
        model = ModelKind(p.get('model') or self.config.models[0]).value
        covariate_set = p.get('covariate_set') or self.expand_sets(inputs)[0]
        label = '/'.join([model, EXPANDING, covariate_set])
        try:
            report = reports[label]
        except KeyError:
            report = self.run_backtest(model, EXPANDING, covariate_set, inputs)
        region = inputs.hierarchy.region(p['region']) if p.get('region') else inputs.hierarchy.state
        return [self._write('predictions.svg', prediction_chart(report, inputs.panel, region)),
                self._write('window_rmse.svg', window_rmse_chart(report))]

    def compare(self, report_paths, labels=None):
        """
        Friedman and Nemenyi tests per level over the per-region scores of several reports
        """
        reports = [BacktestReport.from_json(p) for p in report_paths]
        labels = list(labels) if labels else [r.label for r in reports]
        if len(labels) != len(reports):
            raise InputError('%d labels for %d reports' % (len(labels), len(reports)))
        if len(reports) < 2:
            raise InputError('compare needs at least two reports')
        if len(set(labels)) != len(labels):
            raise InputError('report labels must be unique: %s' % ', '.join(labels))
        matrices = {}
        for level in Level:
            frames = []
            for report, label in zip(reports, labels):
                frame = ReportSet([report]).score_frame(level, self.config.summary)
                frames.append(frame.rename(columns={report.label: label}))
            base = set(frames[0].index)
            for frame, label in zip(frames[1:], labels[1:]):
                if set(frame.index) != base:
                    diff = sorted(set(frame.index) ^ base)
                    raise InputError('%s and %s cover different %s regions: %s'
                                     % (labels[0], label, level.value, ', '.join(diff)))
            if len(base) < 2:
                logger.info('skipping %s level: %d region(s)', level.value, len(base))
                continue
            matrices[level.value] = ScoreMatrix.from_frame(pd.concat(frames, axis=1).sort_index())
        result = comparison_report(matrices)
        return [self._write('comparison.txt', result.text()), self._write('comparison.json', result.to_json())]

    def forecast(self):
        """
        fit on the full history and write the next `horizon` steps of every region in counts
        """
        inputs = self.load()
        model = ModelKind(self.config.forecast.get('model', ModelKind.NLINEAR.value))
        covariate_set = self.config.forecast.get('covariate_set', COMMON)
        channels, statics = self.selection(covariate_set, inputs)
        panel, spec = inputs.panel, self.config.window
        fitted = build_model(model, spec, self.config.train).fit(
            make_supervised(panel, inputs.covariates, spec, channels, statics))
        samples = window_samples(panel, inputs.covariates, spec, len(panel), channels, statics)
        preds = fitted.predict(samples)
        dates = panel.grid.extend(spec.horizon).labels()[len(panel):]
        rows = []
        for s, p in zip(samples, preds):
            for d, v in zip(dates, p):
                rows.append({'region': s.region.code, 'level': s.region.level.value, 'date': d,
                             'value': max(0.0, float(v)) * panel.scale[s.region]})
        return self._write('forecast.csv', frame_to_csv(pd.DataFrame(rows), index=False))
