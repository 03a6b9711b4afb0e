"""
Covariate channels

dynamic channels carry NaN where a value is missing and an origin mask that stays True only
where the value was observed in the source data (filled cells keep origin False)
"""
import logging
import math
import warnings
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np
import pandas as pd

from countcast.errors import DegenerateInputWarning, HierarchyError, InputError
from countcast.panel import Interval, open_source, tokenizer_problem

logger = logging.getLogger(__name__)

FLAG_SUFFIX = '__was_missing'
SEASONS = ('djf', 'mam', 'jja', 'son')
CALENDAR_CHANNELS = ('month_sin', 'month_cos') + tuple('season_%s' % s for s in SEASONS)
NEARBY = 'nearby_trend'
SIMILAR = 'similar_trend'


@dataclass(frozen=True)
class LagSpec:
    lag_steps: int = 1
    top_k: int = 5

    def __post_init__(self):
        if self.lag_steps < 1 or self.top_k < 1:
            raise InputError('lag_steps and top_k must be >= 1')


@dataclass(frozen=True)
class Channel:
    name: str
    values: np.ndarray
    origin: np.ndarray = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        values.setflags(write=False)
        origin = ~np.isnan(values) if self.origin is None else np.array(self.origin, dtype=bool, copy=True)
        if origin.shape != values.shape:
            raise InputError('channel %s: origin mask length %d != %d' % (self.name, origin.size, values.size))
        origin.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'origin', origin)

    def __len__(self):
        return self.values.size

    @property
    def missing(self):
        return np.isnan(self.values)

    @property
    def is_flag(self):
        return self.name.endswith(FLAG_SUFFIX)

    def with_values(self, values):
        return Channel(self.name, values, self.origin)

    def head(self, n):
        return Channel(self.name, self.values[:n], self.origin[:n])


class CovariateSet:
    """
    Dynamic and static covariates per region on one TimeGrid

    dynamic: dict[(RegionId, name), Channel]
    static: dict[(RegionId, name), float]
    """

    def __init__(self, grid, dynamic=None, static=None):
        self.grid = grid
        dynamic = dict(dynamic or {})
        for (region, name), ch in dynamic.items():
            if len(ch) != grid.length:
                raise InputError('channel %s of %s has %d steps, grid has %d' % (name, region, len(ch), grid.length))
            if ch.name != name:
                raise InputError('channel keyed %r is named %r' % (name, ch.name))
        self._dynamic = MappingProxyType(dict(sorted(dynamic.items(), key=lambda kv: (kv[0][0].sort_key, kv[0][1]))))
        self._static = MappingProxyType(dict(sorted((static or {}).items(),
                                                    key=lambda kv: (kv[0][0].sort_key, kv[0][1]))))

    def __repr__(self):
        return 'CovariateSet(%d dynamic, %d static)' % (len(self._dynamic), len(self._static))

    @property
    def dynamic(self):
        return self._dynamic

    @property
    def static(self):
        return self._static

    @property
    def origin(self):
        return {key: ch.origin for key, ch in self._dynamic.items()}

    def regions(self):
        return sorted({r for r, _ in self._dynamic} | {r for r, _ in self._static})

    def channel(self, region, name):
        try:
            return self._dynamic[(region, name)]
        except KeyError:
            raise InputError('no dynamic channel %r for %s' % (name, region))

    def dynamic_names(self, region=None):
        return sorted({n for r, n in self._dynamic if region is None or r == region})

    def static_names(self, region=None):
        return sorted({n for r, n in self._static if region is None or r == region})

    def static_vector(self, region, names):
        try:
            return np.array([self._static[(region, n)] for n in names], dtype=float)
        except KeyError as e:
            raise InputError('missing static value %s' % (e.args[0],))

    def with_dynamic(self, channels):
        """
        :param channels: dict[RegionId, Channel] or iterable of (RegionId, Channel)
        :return: new CovariateSet with the channels added
        """
        items = channels.items() if isinstance(channels, dict) else channels
        dynamic = dict(self._dynamic)
        for region, ch in items:
            if (region, ch.name) in dynamic:
                raise InputError('duplicate channel %r for %s' % (ch.name, region))
            dynamic[(region, ch.name)] = ch
        return CovariateSet(self.grid, dynamic, self._static)

    def with_shared(self, channels, regions):
        """add the same channels (ie. calendar) to every region"""
        return self.with_dynamic([(r, ch) for r in regions for ch in channels])

    def replace_dynamic(self, channels):
        items = channels.items() if isinstance(channels, dict) else channels
        dynamic = dict(self._dynamic)
        for region, ch in items:
            dynamic[(region, ch.name)] = ch
        return CovariateSet(self.grid, dynamic, self._static)

    def with_static(self, static):
        merged = dict(self._static)
        for key, value in static.items():
            if key in merged:
                raise InputError('duplicate static %r for %s' % (key[1], key[0]))
            merged[key] = float(value)
        return CovariateSet(self.grid, self._dynamic, merged)

    def subset(self, dynamic_names=None, static_names=None):
        """keep only the named channels (None keeps everything of that kind)"""
        dynamic = {k: v for k, v in self._dynamic.items() if dynamic_names is None or k[1] in dynamic_names}
        static = {k: v for k, v in self._static.items() if static_names is None or k[1] in static_names}
        return CovariateSet(self.grid, dynamic, static)

    def head(self, n):
        return CovariateSet(self.grid.head(n), {k: ch.head(n) for k, ch in self._dynamic.items()}, self._static)


def calendar_covariates(grid):
    """
    cyclical month encoding (monthly grids only) and one-hot meteorological seasons
    :param grid: TimeGrid
    :return: list[Channel]
    """
    months = grid.months()
    channels = []
    if grid.interval is Interval.MONTHLY:
        angle = 2 * math.pi * months / 12
        channels.append(Channel('month_sin', np.sin(angle)))
        channels.append(Channel('month_cos', np.cos(angle)))
    season = (months % 12) // 3  # Dec, Jan, Feb -> 0
    for i, s in enumerate(SEASONS):
        channels.append(Channel('season_%s' % s, (season == i).astype(float)))
    return channels


def _mean_rows(rows, length):
    if not rows:
        return np.zeros(length)
    return np.mean(np.vstack(rows), axis=0)


def hierarchy_means(county_channels, hierarchy, name):
    """
    district and state channels as the mean of member county channels
    :param county_channels: dict[RegionId, Channel] county level
    :return: dict[RegionId, Channel] district and state entries
    """
    out = {}
    for region in hierarchy.districts + [hierarchy.state]:
        members = [c for c in hierarchy.members(region) if c in county_channels]
        if not members:
            raise HierarchyError('no county values for %s in channel %s' % (region, name))
        rows = [county_channels[c].values for c in members]
        values = _mean_rows(rows, rows[0].size)
        origin = np.all([county_channels[c].origin for c in members], axis=0)
        out[region] = Channel(name, values, origin)
    return out


def nearby_region_trend(panel, hierarchy, name=NEARBY):
    """
    for each county, the mean of the other counties in its district; districts and the state
    average their counties' channels
    :param panel: SeriesPanel with county series
    :return: dict[RegionId, Channel]
    """
    length = panel.grid.length
    county_channels = {}
    for c in hierarchy.counties:
        others = [o for o in hierarchy.members(hierarchy.district_of(c)) if o != c]
        if not others:
            warnings.warn('county %s is alone in its district; %s set to zero' % (c, name), DegenerateInputWarning)
        county_channels[c] = Channel(name, _mean_rows([panel.series[o] for o in others], length))
    return {**county_channels, **hierarchy_means(county_channels, hierarchy, name)}


def _pearson(a, b):
    return float(np.corrcoef(a, b)[0, 1])


def select_similar(panel, hierarchy, spec=None):
    """
    rank candidate counties by |r| between the target at t and the candidate at t - lag
    :return: dict[RegionId, list[(RegionId, float)]] selected (county, r) per target county
    """
    spec = spec or LagSpec()
    length = panel.grid.length
    if length <= spec.lag_steps + 2:
        raise InputError('similar-region trend needs more than %d steps (got %d)' % (spec.lag_steps + 2, length))

    lag = spec.lag_steps
    counties = hierarchy.counties
    selected = {}
    for c in counties:
        target = panel.series[c][lag:]
        scored = []
        if np.std(target) > 0:
            for d in counties:
                if d == c:
                    continue
                candidate = panel.series[d][:length - lag]
                if np.std(candidate) == 0:
                    continue
                scored.append((d, _pearson(target, candidate)))
        scored.sort(key=lambda dr: (-abs(dr[1]), dr[0].code))
        selected[c] = scored[:spec.top_k]
    return selected


def similar_region_trend(panel, hierarchy, spec=None, name=SIMILAR):
    """
    for each county, the mean series of the top_k counties whose lagged series correlate most
    strongly (in absolute value) with it
    :return: dict[RegionId, Channel]
    """
    selected = select_similar(panel, hierarchy, spec)
    length = panel.grid.length
    county_channels = {}
    for c, picks in selected.items():
        if not picks:
            warnings.warn('no correlated candidates for county %s; %s set to zero' % (c, name),
                          DegenerateInputWarning)
        else:
            logger.debug('%s for %s: %s', name, c, ', '.join('%s(%.3f)' % (d, r) for d, r in picks))
        county_channels[c] = Channel(name, _mean_rows([panel.series[d] for d, _ in picks], length))
    return {**county_channels, **hierarchy_means(county_channels, hierarchy, name)}


def attach_static(cset, table, hierarchy):
    """
    merge static attributes; district and state values default to the unweighted mean of their
    counties unless the table provides them
    :param table: dict[(RegionId, name), float]
    :return: CovariateSet
    """
    names = sorted({n for _, n in table})
    merged = {}
    for name in names:
        for c in hierarchy.counties:
            if (c, name) not in table:
                raise InputError('static %r has no value for county %s' % (name, c))
            merged[(c, name)] = float(table[(c, name)])
        for region in hierarchy.districts + [hierarchy.state]:
            if (region, name) in table:
                merged[(region, name)] = float(table[(region, name)])
            else:
                merged[(region, name)] = float(np.mean([table[(c, name)] for c in hierarchy.members(region)]))
    return cset.with_static(merged)


def read_static_csv(source, hierarchy):
    """
    :param source: path or file-like `region,name,value`
    :return: dict[(RegionId, name), float]
    """
    try:
        df = pd.read_csv(open_source(source), dtype={'region': str, 'name': str}, float_precision='round_trip')
    except pd.errors.ParserError as e:
        line, problem = tokenizer_problem(e)
        raise InputError('static file, line %s: %s' % (line or '?', problem))
    table = {}
    for region, name, value in zip(df['region'], df['name'], df['value']):
        key = (hierarchy.region(region), name)
        if key in table:
            raise InputError('duplicate static %r for region %s' % (name, region))
        table[key] = float(value)
    return table


def static_to_csv(table):
    rows = sorted(table.items(), key=lambda kv: (kv[0][0].sort_key, kv[0][1]))
    df = pd.DataFrame([(r.code, n, v) for (r, n), v in rows], columns=['region', 'name', 'value'])
    return df.to_csv(index=False, lineterminator='\n')


def ingest_dynamic_channel(source, name, grid, hierarchy):
    """
    place a `region,date,value` file on the grid; blank values and steps outside the provided
    dates are missing
    :return: dict[RegionId, Channel] for every region in the hierarchy
    """
    try:
        df = pd.read_csv(open_source(source), dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        line, problem = tokenizer_problem(e)
        raise InputError('channel file for %s, line %s: %s' % (name, line or '?', problem))
    missing_cols = {'region', 'date', 'value'} - set(df.columns)
    if missing_cols:
        raise InputError('channel file for %s lacks columns %s' % (name, sorted(missing_cols)))

    values = {}
    seen = {}
    for region_code, raw_date, raw_value in zip(df['region'], df['date'], df['value']):
        region = hierarchy.region(region_code.strip())
        try:
            when = pd.Timestamp(raw_date.strip()).date()
        except ValueError:
            raise InputError('channel %s: malformed date %r' % (name, raw_date))
        step = grid.step_of(when)
        row = values.setdefault(region, np.full(grid.length, np.nan))
        taken = seen.setdefault(region, np.zeros(grid.length, dtype=bool))
        # a blank row still claims its step
        if taken[step]:
            raise InputError('channel %s: two rows for %s at %s' % (name, region, raw_date))
        taken[step] = True
        raw_value = raw_value.strip()
        if raw_value:
            row[step] = float(raw_value)

    channels = {}
    for c in hierarchy.counties:
        channels[c] = Channel(name, values.get(c, np.full(grid.length, np.nan)))
    derived = hierarchy_means(channels, hierarchy, name)
    for region in hierarchy.districts + [hierarchy.state]:
        channels[region] = Channel(name, values[region]) if region in values else derived[region]

    observed = sum(int(ch.origin.sum()) for ch in channels.values())
    logger.info('channel %s: %d observed cells over %d regions', name, observed, len(channels))
    return channels


def missing_flag(channel):
    """0/1 companion channel, 1 where the source value was missing"""
    return Channel(channel.name + FLAG_SUFFIX, (~channel.origin).astype(float))


def normalize_channels(cset, names):
    """
    max-abs scale the named channels per region using observed cells only
    """
    scaled = []
    for (region, name), ch in cset.dynamic.items():
        if name not in names:
            continue
        observed = ch.values[ch.origin & ~ch.missing]
        peak = float(np.max(np.abs(observed))) if observed.size else 0.0
        scaled.append((region, ch.with_values(ch.values / (peak if peak > 0 else 1.0))))
    return cset.replace_dynamic(scaled)
