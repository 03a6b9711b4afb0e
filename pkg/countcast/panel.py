"""
Regions, time grids and count panels

    ingest_events: parse a `date,region[,weight]` events file
    aggregate: bucket events into a county-level SeriesPanel
    roll_up: add district and state series by summation
    normalize / denormalize: per-series max scaling to [0, 1]
    sparsity / sparsity_report: share of zero cells per level and interval
"""
import io
import logging
import os
import re
from dataclasses import dataclass
from datetime import date, datetime
from enum import Enum
from types import MappingProxyType

import numpy as np
import pandas as pd

from countcast.errors import EventFormatError, HierarchyError, InputError, SpanError

logger = logging.getLogger(__name__)


class Level(str, Enum):
    COUNTY = 'county'
    DISTRICT = 'district'
    STATE = 'state'

    @property
    def rank(self):
        return _LEVEL_RANK[self]


_LEVEL_RANK = {Level.COUNTY: 0, Level.DISTRICT: 1, Level.STATE: 2}


class Interval(str, Enum):
    WEEKLY = 'weekly'
    MONTHLY = 'monthly'
    QUARTERLY = 'quarterly'
    YEARLY = 'yearly'

    @property
    def freq(self):
        # weeks ending Sunday are ISO weeks (Monday..Sunday)
        return _INTERVAL_FREQ[self]


_INTERVAL_FREQ = {
    Interval.WEEKLY: 'W-SUN',
    Interval.MONTHLY: 'M',
    Interval.QUARTERLY: 'Q',
    Interval.YEARLY: 'Y',
}


@dataclass(frozen=True)
class RegionId:
    code: str
    level: Level

    def __post_init__(self):
        if not isinstance(self.code, str) or not self.code:
            raise InputError('region code must be a non-empty string')
        object.__setattr__(self, 'level', Level(self.level))

    def __str__(self):
        return self.code

    def __lt__(self, other):
        return self.sort_key < other.sort_key

    @property
    def sort_key(self):
        return self.level.rank, self.code


def county(code):
    return RegionId(code, Level.COUNTY)


class GeoHierarchy:
    """
    Three-level containment map: county -> district -> state

    every county belongs to exactly one district; region codes are unique across levels so a
    bare code in a delimited file resolves to one RegionId
    """

    def __init__(self, county_to_district, state='state'):
        """
        :param county_to_district: dict[str, str] county code -> district code
        :param state: str, code of the single state-level region
        """
        if not county_to_district:
            raise HierarchyError('hierarchy must contain at least one county')
        for c, d in county_to_district.items():
            if not c or not d:
                raise HierarchyError('empty county or district code in hierarchy (%r -> %r)' % (c, d))

        mapping = {str(c): str(d) for c, d in sorted(county_to_district.items())}
        overlap = (set(mapping) & set(mapping.values())) | ({state} & (set(mapping) | set(mapping.values())))
        if overlap:
            raise HierarchyError('region codes shared across levels: %s' % sorted(overlap))

        self._county_to_district = MappingProxyType(mapping)
        self.state = RegionId(state, Level.STATE)

        members = {}
        for c, d in mapping.items():
            members.setdefault(d, []).append(county(c))
        self._members = MappingProxyType({d: tuple(sorted(cs)) for d, cs in sorted(members.items())})

        self._by_code = {r.code: r for r in self.regions()}

    def __repr__(self):
        return 'GeoHierarchy(%d counties, %d districts)' % (len(self.counties), len(self.districts))

    def __eq__(self, other):
        if not isinstance(other, GeoHierarchy):
            return NotImplemented
        return dict(self._county_to_district) == dict(other._county_to_district) and self.state == other.state

    @property
    def county_to_district(self):
        return self._county_to_district

    @property
    def counties(self):
        return [county(c) for c in self._county_to_district]

    @property
    def districts(self):
        return [RegionId(d, Level.DISTRICT) for d in self._members]

    def regions(self, levels=None):
        """
        :param levels: iterable of Level (default all three)
        :return: list[RegionId] ordered county, district, state
        """
        levels = {Level(lv) for lv in levels} if levels is not None else set(Level)
        out = []
        if Level.COUNTY in levels:
            out.extend(self.counties)
        if Level.DISTRICT in levels:
            out.extend(self.districts)
        if Level.STATE in levels:
            out.append(self.state)
        return out

    def region(self, code):
        try:
            return self._by_code[code]
        except KeyError:
            raise HierarchyError('unknown region %r' % code)

    def has_county(self, code):
        return code in self._county_to_district

    def district_of(self, region):
        code = region.code if isinstance(region, RegionId) else region
        try:
            return RegionId(self._county_to_district[code], Level.DISTRICT)
        except KeyError:
            raise HierarchyError('county %r is not in the hierarchy' % code)

    def members(self, region):
        """
        counties contained in a region
        :param region: RegionId at any level
        :return: tuple[RegionId]
        """
        if region.level is Level.COUNTY:
            return (region,)
        if region.level is Level.DISTRICT:
            try:
                return self._members[region.code]
            except KeyError:
                raise HierarchyError('district %r is not in the hierarchy' % region.code)
        if region != self.state:
            raise HierarchyError('unknown state %r' % region.code)
        return tuple(self.counties)

    @classmethod
    def from_csv(cls, source, state='state'):
        """
        read a `county,district` delimited file
        :param source: path or file-like object
        """
        try:
            df = pd.read_csv(source, dtype=str, keep_default_na=False)
        except pd.errors.ParserError as e:
            line, problem = tokenizer_problem(e)
            raise HierarchyError('hierarchy file, line %s: %s' % (line or '?', problem))
        missing = {'county', 'district'} - set(df.columns)
        if missing:
            raise HierarchyError('hierarchy file must declare columns county,district (missing %s)' % sorted(missing))

        mapping = {}
        for c, d in zip(df['county'].str.strip(), df['district'].str.strip()):
            if c in mapping and mapping[c] != d:
                raise HierarchyError('county %r mapped to two districts (%r, %r)' % (c, mapping[c], d))
            mapping[c] = d
        return cls(mapping, state=state)

    def to_csv(self):
        rows = ['county,district']
        rows.extend('%s,%s' % (c, d) for c, d in self._county_to_district.items())
        return '\n'.join(rows) + '\n'


@dataclass(frozen=True)
class TimeGrid:
    interval: Interval
    start: date
    length: int

    def __post_init__(self):
        object.__setattr__(self, 'interval', Interval(self.interval))
        if int(self.length) < 1:
            raise InputError('time grid length must be >= 1')
        object.__setattr__(self, 'length', int(self.length))
        # start is stored as the first day of its period so equal grids compare equal
        first = pd.Period(pd.Timestamp(self.start), freq=self.interval.freq)
        object.__setattr__(self, 'start', first.start_time.date())

    @classmethod
    def covering(cls, interval, first, last):
        """
        smallest grid whose periods contain both dates
        """
        interval = Interval(interval)
        p0 = pd.Period(pd.Timestamp(first), freq=interval.freq)
        p1 = pd.Period(pd.Timestamp(last), freq=interval.freq)
        if p1.ordinal < p0.ordinal:
            raise SpanError('span end %s precedes start %s' % (last, first))
        return cls(interval, p0.start_time.date(), p1.ordinal - p0.ordinal + 1)

    @property
    def periods(self):
        return pd.period_range(start=pd.Timestamp(self.start), periods=self.length, freq=self.interval.freq)

    @property
    def end(self):
        """last calendar day covered by the grid"""
        return self.periods[-1].end_time.date()

    def labels(self):
        """ISO date of each step's first day"""
        return [p.start_time.date().isoformat() for p in self.periods]

    def months(self):
        return np.array([p.start_time.month for p in self.periods], dtype=int)

    def steps_of(self, dates):
        """
        grid step of each date, without bounds checking
        :param dates: iterable of date
        :return: np.ndarray[int]
        """
        dates = pd.DatetimeIndex(pd.to_datetime(list(dates)))
        first = pd.Period(pd.Timestamp(self.start), freq=self.interval.freq)
        return dates.to_period(self.interval.freq).asi8 - first.ordinal

    def step_of(self, when):
        step = int(self.steps_of([when])[0])
        if not 0 <= step < self.length:
            raise SpanError('%s falls outside the %s grid starting %s (%d steps)'
                            % (when, self.interval.value, self.start, self.length))
        return step

    def head(self, n):
        return TimeGrid(self.interval, self.start, n)

    def extend(self, n):
        return TimeGrid(self.interval, self.start, self.length + n)


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SeriesPanel:
    """
    Aligned multi-region series on one TimeGrid

    `scale` is None for raw counts and holds the per-series maximum once normalized;
    `mask` is True where a value was observed
    """
    grid: TimeGrid
    series: dict
    scale: dict = None
    mask: dict = None

    def __post_init__(self):
        series = {}
        for r, v in sorted(self.series.items()):
            v = _frozen(v)
            if v.shape != (self.grid.length,):
                raise InputError('series %s has %d steps, grid has %d' % (r, v.size, self.grid.length))
            series[r] = v
        object.__setattr__(self, 'series', MappingProxyType(series))

        if self.mask is None:
            mask = {r: np.ones(self.grid.length, dtype=bool) for r in series}
        else:
            mask = dict(self.mask)
            if set(mask) != set(series):
                raise InputError('mask regions do not match series regions')
        mask = {r: _frozen(mask[r], dtype=bool) for r in series}
        object.__setattr__(self, 'mask', MappingProxyType(mask))

        if self.scale is not None:
            scale = {r: float(self.scale[r]) for r in series}
            if any(not s > 0 for s in scale.values()):
                raise InputError('normalization scale must be positive')
            object.__setattr__(self, 'scale', MappingProxyType(scale))

    def __len__(self):
        return self.grid.length

    @property
    def normalized(self):
        return self.scale is not None

    @property
    def regions(self):
        return list(self.series)

    def regions_at(self, level):
        level = Level(level)
        return [r for r in self.series if r.level is level]

    def levels(self):
        return sorted({r.level for r in self.series}, key=lambda lv: lv.rank)

    def matrix(self, regions=None):
        """
        :param regions: list[RegionId] (default all, sorted)
        :return: np.ndarray (n_regions, T)
        """
        regions = self.regions if regions is None else regions
        if not regions:
            return np.zeros((0, self.grid.length))
        return np.vstack([self.series[r] for r in regions])

    def select(self, regions):
        regions = list(regions)
        return SeriesPanel(
            grid=self.grid,
            series={r: self.series[r] for r in regions},
            scale=None if self.scale is None else {r: self.scale[r] for r in regions},
            mask={r: self.mask[r] for r in regions},
        )

    def head(self, n):
        """the first n steps; scale is carried over unchanged"""
        if not 1 <= n <= self.grid.length:
            raise InputError('cannot take %d steps of a %d-step panel' % (n, self.grid.length))
        return SeriesPanel(
            grid=self.grid.head(n),
            series={r: v[:n] for r, v in self.series.items()},
            scale=self.scale,
            mask={r: m[:n] for r, m in self.mask.items()},
        )

    def to_frame(self):
        df = pd.DataFrame({r.code: v for r, v in self.series.items()}, index=self.grid.labels())
        df.index.name = 'date'
        return df


@dataclass(frozen=True)
class EventRecord:
    timestamp: date
    region: RegionId
    weight: int = 1

    def __post_init__(self):
        if isinstance(self.timestamp, datetime):
            object.__setattr__(self, 'timestamp', self.timestamp.date())
        if int(self.weight) < 1:
            raise InputError('event weight must be >= 1 (got %r)' % self.weight)


def tokenizer_problem(error):
    """
    :param error: pandas.errors.ParserError
    :return: (1-based file line or None when pandas does not name one, short description)
    """
    text = str(error).strip()
    match = re.search(r'line (\d+)', text)
    return (int(match.group(1)) if match else None), text.split('C error: ')[-1]


def open_source(source):
    if isinstance(source, (bytes, bytearray)):
        return io.BytesIO(source)
    if isinstance(source, (str, os.PathLike)) and not os.path.exists(source):
        raise FileNotFoundError('input file not found: %s' % source)
    return source


def ingest_events(source):
    """
    parse an events file with header `date,region[,weight]`
    :param source: path, bytes or file-like object
    :return: list[EventRecord] in row order
    """
    try:
        df = pd.read_csv(open_source(source), dtype=str, keep_default_na=False, skip_blank_lines=False,
                         encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise EventFormatError(1, 'missing header row')
    except pd.errors.ParserError as e:
        line, problem = tokenizer_problem(e)
        raise EventFormatError(line or 1, problem)
    df.columns = [c.strip() for c in df.columns]
    if not {'date', 'region'} <= set(df.columns):
        raise EventFormatError(1, 'header must declare date,region[,weight], got %s' % ','.join(df.columns))
    df = df.fillna('')

    has_weight = 'weight' in df.columns
    dates = pd.to_datetime(df['date'].str.strip(), format='%Y-%m-%d', errors='coerce')

    events = []
    for i, (raw_date, region, ts) in enumerate(zip(df['date'], df['region'], dates)):
        line = i + 2
        region = region.strip()
        raw_weight = df['weight'].iat[i].strip() if has_weight else ''
        if not raw_date.strip() and not region and not raw_weight:
            continue  # blank line
        if pd.isna(ts):
            raise EventFormatError(line, 'malformed date %r' % raw_date)
        if not region:
            raise EventFormatError(line, 'empty region')
        weight = 1
        if raw_weight:
            try:
                weight = int(raw_weight)
            except ValueError:
                raise EventFormatError(line, 'malformed weight %r' % raw_weight)
            if weight < 1:
                raise EventFormatError(line, 'weight must be >= 1 (got %d)' % weight)
        events.append(EventRecord(ts.date(), county(region), weight))

    logger.debug('ingested %d events', len(events))
    return events


def event_span(events):
    if not events:
        raise SpanError('no events to derive a span from')
    stamps = [e.timestamp for e in events]
    return min(stamps), max(stamps)


def aggregate(events, hierarchy, interval, span=None):
    """
    sum event weights per (county, grid step)
    :param events: list[EventRecord]
    :param hierarchy: GeoHierarchy
    :param interval: Interval
    :param span: (date, date) inclusive; derived from the events when omitted
    :return: SeriesPanel with one series per hierarchy county
    """
    first, last = span if span is not None else event_span(events)
    grid = TimeGrid.covering(interval, first, last)
    counties = hierarchy.counties
    row_of = {c.code: i for i, c in enumerate(counties)}

    rows = np.empty(len(events), dtype=np.int64)
    weights = np.empty(len(events), dtype=float)
    for i, e in enumerate(events):
        if e.region.level is not Level.COUNTY or e.region.code not in row_of:
            raise HierarchyError('event %r refers to unknown county %r' % (e, e.region.code))
        if not first <= e.timestamp <= last:
            raise SpanError('event %r falls outside span %s..%s' % (e, first, last))
        rows[i] = row_of[e.region.code]
        weights[i] = e.weight

    counts = np.zeros((len(counties), grid.length))
    if events:
        steps = grid.steps_of([e.timestamp for e in events])
        np.add.at(counts, (rows, steps), weights)

    return SeriesPanel(grid=grid, series={c: counts[i] for i, c in enumerate(counties)})


def roll_up(panel, hierarchy):
    """
    county panel -> county + district + state panel by elementwise sums
    """
    if panel.normalized:
        raise InputError('roll_up expects raw counts, got a normalized panel')
    counties = panel.regions_at(Level.COUNTY)
    for c in counties:
        if not hierarchy.has_county(c.code):
            raise HierarchyError('county %r is not in the hierarchy' % c.code)
    missing = set(hierarchy.counties) - set(counties)
    if missing:
        raise HierarchyError('panel lacks hierarchy counties %s' % sorted(r.code for r in missing))

    series = {c: panel.series[c] for c in counties}
    mask = {c: panel.mask[c] for c in counties}
    for d in hierarchy.districts:
        members = hierarchy.members(d)
        series[d] = panel.matrix(list(members)).sum(axis=0)
        mask[d] = np.all([panel.mask[c] for c in members], axis=0)
    series[hierarchy.state] = panel.matrix(counties).sum(axis=0)
    mask[hierarchy.state] = np.all([panel.mask[c] for c in counties], axis=0)
    return SeriesPanel(grid=panel.grid, series=series, mask=mask)


def normalize(panel):
    """
    divide every series by its own maximum; all-zero series keep scale 1
    """
    if panel.normalized:
        raise InputError('panel is already normalized')
    series, scale = {}, {}
    for r, v in panel.series.items():
        if np.any(v < 0):
            raise InputError('series %s has negative values' % r)
        m = float(v.max())
        scale[r] = m if m > 0 else 1.0
        series[r] = v / scale[r]
    return SeriesPanel(grid=panel.grid, series=series, scale=scale, mask=panel.mask)


def denormalize(panel):
    if not panel.normalized:
        raise InputError('panel has no normalization scale')
    series = {r: v * panel.scale[r] for r, v in panel.series.items()}
    return SeriesPanel(grid=panel.grid, series=series, mask=panel.mask)


def sparsity(series):
    """
    :param series: sequence of float
    :return: float, share of exact zeros
    """
    v = np.asarray(series, dtype=float)
    if v.size == 0:
        raise InputError('sparsity of an empty series is undefined')
    return float(np.count_nonzero(v == 0)) / v.size


def sparsity_report(events, hierarchy, intervals, levels=None, span=None):
    """
    zero share per (level, interval), pooled over every grouping x step cell
    :return: pandas.DataFrame, index level, columns `groupings` then one per interval
    """
    levels = [Level(lv) for lv in levels] if levels is not None else list(Level)
    intervals = [Interval(i) for i in intervals]
    span = span if span is not None else event_span(events)

    table = pd.DataFrame(index=[lv.value for lv in levels])
    table.index.name = 'level'
    table['groupings'] = [len(hierarchy.regions([lv])) for lv in levels]
    for interval in intervals:
        panel = roll_up(aggregate(events, hierarchy, interval, span), hierarchy)
        table[interval.value] = [sparsity(panel.matrix(panel.regions_at(lv)).ravel()) for lv in levels]
        logger.info('sparsity at %s interval: %s', interval.value,
                    ', '.join('%s=%.4f' % (lv.value, v) for lv, v in zip(levels, table[interval.value])))
    return table
