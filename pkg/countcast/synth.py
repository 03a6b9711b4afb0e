"""
Seeded synthetic benchmark: events, hierarchy, static attributes and planted covariate channels

county intensity
    lambda_c(t) = base_c * (1 + amplitude * sin(2 pi t / 12 + phase_c)) * (1 + trend * t / 12)
monthly counts ~ Poisson(lambda_c(t)); a planted channel is gain * lambda_c(t + lead) plus
gaussian noise with its first `missing_head` and last `missing_tail` steps blanked

the random stream is a 64-bit splitmix generator consumed in a fixed order (phases, counts,
event days, channel noise, static attributes) so that outputs are byte-stable across platforms
"""
import calendar
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from datetime import date

import pandas as pd

from countcast.covariates import static_to_csv
from countcast.errors import ConfigError
from countcast.panel import EventRecord, GeoHierarchy, county
from countcast.utils import write_atomic

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
POISSON_INVERSION_LIMIT = 30.0


class SplitMix64:
    def __init__(self, seed):
        self.state = int(seed) & MASK64

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self):
        """float in [0, 1) from the top 53 bits"""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def integer(self, n):
        """int in [0, n)"""
        return min(int(self.uniform() * n), n - 1)

    def normal(self):
        # Box-Muller, cosine branch only
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def poisson(self, lam):
        """inversion below POISSON_INVERSION_LIMIT, rounded normal approximation above"""
        if lam <= 0:
            return 0
        if lam >= POISSON_INVERSION_LIMIT:
            return max(0, int(math.floor(lam + math.sqrt(lam) * self.normal() + 0.5)))
        u = self.uniform()
        k = 0
        p = math.exp(-lam)
        cdf = p
        while u > cdf and k < 1000:
            k += 1
            p *= lam / k
            cdf += p
        return k


@dataclass(frozen=True)
class PlantedChannel:
    name: str
    lead_steps: int = 1
    gain: float = 1.0
    noise_sd: float = 0.5
    missing_head: int = 0
    missing_tail: int = 0


DEFAULT_CHANNELS = (
    PlantedChannel('dispensing', lead_steps=1, gain=1.0, noise_sd=0.5, missing_head=12, missing_tail=6),
    PlantedChannel('treatment_intake', lead_steps=2, gain=0.5, noise_sd=0.5, missing_head=0, missing_tail=12),
)
DEFAULT_STATIC = ('unemployment', 'vehicle_access')


def geometric_rates(n, low=0.3, high=30.0):
    if n == 1:
        return [low]
    return [low * (high / low) ** (i / (n - 1)) for i in range(n)]


@dataclass(frozen=True)
class SynthConfig:
    n_districts: int = 5
    counties_per_district: int = 6
    months: int = 84
    start: date = date(2018, 1, 1)
    base_rates: tuple = None
    seasonal_amplitude: float = 0.5
    trend_per_year: float = 0.1
    channels: tuple = DEFAULT_CHANNELS
    static: tuple = DEFAULT_STATIC
    seed: int = 0

    def __post_init__(self):
        if self.n_districts < 1 or self.counties_per_district < 1:
            raise ConfigError('synth needs at least one district and one county per district')
        if self.months < 36:
            raise ConfigError('synth needs at least 36 months (got %d)' % self.months)
        n = self.n_districts * self.counties_per_district
        if self.base_rates is None:
            rates = geometric_rates(n)
            # interleave so every district mixes sparse and dense counties
            order = [j * self.n_districts + d for d in range(self.n_districts)
                     for j in range(self.counties_per_district)]
            object.__setattr__(self, 'base_rates', tuple(rates[i] for i in order))
        else:
            object.__setattr__(self, 'base_rates', tuple(float(r) for r in self.base_rates))
        if len(self.base_rates) != n or any(not r > 0 for r in self.base_rates):
            raise ConfigError('synth needs %d positive base rates' % n)
        if not 0 <= self.seasonal_amplitude < 1:
            raise ConfigError('seasonal_amplitude must be in [0, 1)')
        if 1 + self.trend_per_year * (self.months - 1) / 12 <= 0:
            raise ConfigError('trend_per_year drives the intensity negative')
        channels = tuple(c if isinstance(c, PlantedChannel) else PlantedChannel(**c) for c in self.channels)
        for c in channels:
            if c.lead_steps < 0 or c.noise_sd < 0 or c.missing_head < 0 or c.missing_tail < 0:
                raise ConfigError('channel %s: lead, noise and missing spans must be >= 0' % c.name)
            if c.missing_head + c.missing_tail >= self.months:
                raise ConfigError('channel %s would have no observed steps' % c.name)
        if len({c.name for c in channels}) != len(channels):
            raise ConfigError('planted channel names must be unique')
        object.__setattr__(self, 'channels', channels)
        object.__setattr__(self, 'static', tuple(self.static))
        object.__setattr__(self, 'start', pd.Timestamp(self.start).date().replace(day=1))
        if not 0 <= int(self.seed) <= MASK64:
            raise ConfigError('seed must be an unsigned 64-bit integer')

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError('unknown synth options: %s' % ', '.join(sorted(unknown)))
        if 'channels' in d:
            d['channels'] = tuple(PlantedChannel(**c) for c in d['channels'])
        for key in ('base_rates', 'static'):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError('invalid synth options: %s' % e)

    def to_dict(self):
        d = asdict(self)
        d['start'] = self.start.isoformat()
        d['base_rates'] = list(self.base_rates)
        d['channels'] = [asdict(c) for c in self.channels]
        d['static'] = list(self.static)
        return d


def default_benchmark(seed=0):
    """the pinned benchmark: 5 districts x 6 counties, 84 months from 2018-01"""
    return SynthConfig(seed=seed)


def _month(start, t):
    y, m = divmod(start.month - 1 + t, 12)
    return date(start.year + y, m + 1, 1)


@dataclass
class SynthOutput:
    config: SynthConfig
    hierarchy: GeoHierarchy
    events: list
    channels: dict = field(default_factory=dict)
    static: dict = field(default_factory=dict)
    ledger: dict = field(default_factory=dict)

    def events_csv(self):
        rows = ['date,region'] + ['%s,%s' % (e.timestamp.isoformat(), e.region.code) for e in self.events]
        return '\n'.join(rows) + '\n'

    def channel_csv(self, name):
        lines = ['region,date,value']
        for code, values in self.channels[name].items():
            for t, v in enumerate(values):
                lines.append('%s,%s,%s' % (code, _month(self.config.start, t).isoformat(), '' if v is None else repr(v)))
        return '\n'.join(lines) + '\n'

    def files(self):
        """
        :return: dict[relative path, str] of every output file
        """
        out = {
            'events.csv': self.events_csv(),
            'hierarchy.csv': self.hierarchy.to_csv(),
            'static.csv': static_to_csv(self.static),
            'ledger.json': json.dumps(self.ledger, sort_keys=True, indent=1) + '\n',
        }
        for name in self.channels:
            out[os.path.join('channels', name + '.csv')] = self.channel_csv(name)
        return out

    def write(self, out_dir):
        paths = []
        for rel, text in self.files().items():
            path = os.path.join(out_dir, rel)
            write_atomic(path, text)
            paths.append(path)
        return paths


def generate(cfg):
    """
    :param cfg: SynthConfig
    :return: SynthOutput
    """
    rng = SplitMix64(cfg.seed)
    nd, nc = cfg.n_districts, cfg.counties_per_district
    mapping = {}
    for d in range(nd):
        for j in range(nc):
            mapping['c%03d' % (d * nc + j + 1)] = 'd%02d' % (d + 1)
    hierarchy = GeoHierarchy(mapping)
    codes = list(mapping)
    lead = max([c.lead_steps for c in cfg.channels] or [0])

    phases = {code: rng.integer(12) for code in codes}
    intensity = {}
    for code, base in zip(codes, cfg.base_rates):
        phase = 2 * math.pi * phases[code] / 12
        intensity[code] = [base * (1 + cfg.seasonal_amplitude * math.sin(2 * math.pi * t / 12 + phase))
                           * (1 + cfg.trend_per_year * t / 12) for t in range(cfg.months + lead)]

    counts = {code: [rng.poisson(intensity[code][t]) for t in range(cfg.months)] for code in codes}

    events = []
    for code in codes:
        region = county(code)
        for t, n in enumerate(counts[code]):
            first = _month(cfg.start, t)
            days = calendar.monthrange(first.year, first.month)[1]
            for _ in range(n):
                events.append(EventRecord(first.replace(day=1 + rng.integer(days)), region))
    events.sort(key=lambda e: (e.timestamp, e.region.code))

    channels = {}
    for ch in cfg.channels:
        per_county = {}
        for code in codes:
            values = []
            for t in range(cfg.months):
                v = ch.gain * intensity[code][t + ch.lead_steps] + ch.noise_sd * rng.normal()
                blank = t < ch.missing_head or t >= cfg.months - ch.missing_tail
                values.append(None if blank else v)
            per_county[code] = values
        channels[ch.name] = per_county

    static = {}
    for name in cfg.static:
        for code in codes:
            static[(county(code), name)] = round(rng.uniform(), 6)

    ledger = {
        'config': cfg.to_dict(),
        'counties': {code: {'district': mapping[code], 'base_rate': base, 'phase_index': phases[code],
                            'intensity': intensity[code][:cfg.months], 'counts': counts[code],
                            'total': sum(counts[code])}
                     for code, base in zip(codes, cfg.base_rates)},
        'channels': channels,
        'static': {'%s|%s' % (r.code, n): v for (r, n), v in static.items()},
    }
    logger.info('synthesized %d events over %d counties and %d months', len(events), len(codes), cfg.months)
    return SynthOutput(cfg, hierarchy, events, channels, static, ledger)
