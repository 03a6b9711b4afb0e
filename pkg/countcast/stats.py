"""
Rank-based comparison of model configurations over regions

    friedman: omnibus chi-square test on per-row ranks (lowest RMSE = rank 1, ties averaged)
    nemenyi: pairwise p-values from the studentized range distribution with infinite df
"""
import json
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import integrate, special, stats

from countcast.errors import InputError
from countcast.utils import fmt4, format_p

logger = logging.getLogger(__name__)

P_THRESHOLD = 1e-4
SAME_ARCHITECTURE_MARK = '*'


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """
    values: (N regions, k configurations) of per-region mean RMSE
    """
    values: np.ndarray
    labels: tuple
    rows: tuple = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2:
            raise InputError('score matrix must be two dimensional')
        n, k = values.shape
        if n < 2 or k < 2:
            raise InputError('score matrix needs at least 2 rows and 2 columns (got %dx%d)' % (n, k))
        if not np.all(np.isfinite(values)):
            raise InputError('score matrix holds non-finite values')
        labels = tuple(str(x) for x in self.labels)
        if len(labels) != k or len(set(labels)) != k:
            raise InputError('score matrix needs %d unique labels' % k)
        rows = tuple(str(x) for x in self.rows) if self.rows is not None else tuple(str(i) for i in range(n))
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'rows', rows)

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def from_frame(cls, frame):
        return cls(frame.to_numpy(dtype=float), tuple(frame.columns), tuple(frame.index))


def rank_rows(values):
    """ascending ranks per row, ties averaged; each row sums to k(k+1)/2"""
    return stats.rankdata(np.asarray(values, dtype=float), method='average', axis=1)


def friedman_statistic(ranks):
    n, k = ranks.shape
    mean_ranks = ranks.mean(axis=0)
    return 12.0 * n / (k * (k + 1)) * float(np.sum((mean_ranks - (k + 1) / 2.0) ** 2))


@dataclass(frozen=True, eq=False)
class FriedmanResult:
    statistic: float
    p: float
    mean_ranks: np.ndarray


def friedman(m):
    """
    :param m: ScoreMatrix
    :return: FriedmanResult, p from the chi-square survival with k - 1 degrees of freedom
    """
    ranks = rank_rows(m.values)
    k = ranks.shape[1]
    stat = friedman_statistic(ranks)
    p = float(special.gammaincc((k - 1) / 2.0, stat / 2.0))
    return FriedmanResult(stat, min(max(p, 0.0), 1.0), ranks.mean(axis=0))


def studentized_range_cdf(x, k):
    """
    P(Q < x) for the range of k standard normals (infinite degrees of freedom)

        k * integral phi(z) [Phi(z) - Phi(z - x)]^(k-1) dz
    """
    if x <= 0:
        return 0.0

    def integrand(z):
        return stats.norm.pdf(z) * (stats.norm.cdf(z) - stats.norm.cdf(z - x)) ** (k - 1)

    value, _ = integrate.quad(integrand, -12.0, 12.0 + x, epsabs=1e-10, epsrel=1e-10, limit=200)
    return min(max(k * value, 0.0), 1.0)


def nemenyi(m):
    """
    pairwise p-values; the statistic for a pair is its mean-rank difference over
    sqrt(k(k+1)/(6N)), taken times sqrt(2) into the studentized range

    :return: pandas.DataFrame k x k, symmetric with unit diagonal
    """
    ranks = rank_rows(m.values)
    n, k = ranks.shape
    mean_ranks = ranks.mean(axis=0)
    se = np.sqrt(k * (k + 1) / (6.0 * n))
    p = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            q = abs(mean_ranks[i] - mean_ranks[j]) / se
            p[i, j] = p[j, i] = min(max(1.0 - studentized_range_cdf(q * np.sqrt(2.0), k), 0.0), 1.0)
    return pd.DataFrame(p, index=list(m.labels), columns=list(m.labels))


def architecture_of(label):
    """leading component of a `model/regime/covariates` label"""
    return str(label).split('/')[0]


@dataclass
class LevelComparison:
    level: str
    n: int
    friedman: FriedmanResult
    order: list
    pvalues: pd.DataFrame

    def formatted(self, architecture=architecture_of):
        """p-value table in mean-rank order, '<0.0001' below threshold, same-architecture cells marked"""
        table = self.pvalues.loc[self.order, self.order]
        out = pd.DataFrame('', index=table.index, columns=table.columns)
        for a in table.index:
            for b in table.columns:
                if a == b:
                    out.loc[a, b] = '-'
                    continue
                cell = format_p(table.loc[a, b], P_THRESHOLD)
                if architecture(a) == architecture(b):
                    cell += SAME_ARCHITECTURE_MARK
                out.loc[a, b] = cell
        out.index.name = 'configuration'
        return out


class ComparisonReport:
    def __init__(self, levels, architecture=architecture_of):
        self.levels = levels
        self.architecture = architecture

    def __iter__(self):
        return iter(self.levels)

    def __len__(self):
        return len(self.levels)

    def text(self):
        lines = []
        for c in self.levels:
            k = len(c.order)
            lines.append('level: %s (N=%d, k=%d)' % (c.level, c.n, k))
            lines.append('friedman statistic: %s, p: %s' % (fmt4(c.friedman.statistic), format_p(c.friedman.p)))
            lines.append('ranking (mean rank, lower is better):')
            ranks = dict(zip(c.pvalues.index, c.friedman.mean_ranks))
            for i, label in enumerate(c.order, 1):
                lines.append('  %d. %s %s' % (i, label, fmt4(ranks[label])))
            lines.append('nemenyi p-values:')
            lines.append(c.formatted(self.architecture).to_csv(lineterminator='\n').rstrip('\n'))
            lines.append('')
        lines.append('%s same architecture' % SAME_ARCHITECTURE_MARK)
        return '\n'.join(lines) + '\n'

    def to_dict(self):
        return {c.level: {
            'n': c.n,
            'friedman': {'statistic': c.friedman.statistic, 'p': c.friedman.p},
            'mean_ranks': dict(zip(c.pvalues.index, (float(r) for r in c.friedman.mean_ranks))),
            'order': c.order,
            'nemenyi': {a: {b: float(c.pvalues.loc[a, b]) for b in c.pvalues.columns} for a in c.pvalues.index},
        } for c in self.levels}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + '\n'


def comparison_report(matrices, architecture=architecture_of):
    """
    :param matrices: dict[str level, ScoreMatrix], each level tested independently
    :return: ComparisonReport
    """
    levels = []
    for level, m in matrices.items():
        result = friedman(m)
        # stable: equal mean ranks keep input order
        order = [m.labels[i] for i in np.argsort(result.mean_ranks, kind='stable')]
        logger.info('%s: friedman %.4f p=%.4g over %d regions', level, result.statistic, result.p, m.shape[0])
        levels.append(LevelComparison(str(level), m.shape[0], result, order, nemenyi(m)))
    return ComparisonReport(levels, architecture)
