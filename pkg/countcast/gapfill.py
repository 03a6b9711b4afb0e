"""
Filling leading and trailing gaps of covariate channels

three methods: a constant first/last-year mean, a round-robin iterative imputer over all
channels of a region, and per-channel exponential smoothing run forward (trailing gap) and on
the reversed series (leading gap)
"""
import logging
import warnings
from dataclasses import dataclass
from enum import Enum
from itertools import product

import numpy as np
import pandas as pd
from sklearn.exceptions import ConvergenceWarning
from sklearn.experimental import enable_iterative_imputer  # noqa: F401
from sklearn.impute import IterativeImputer
from sklearn.linear_model import LinearRegression
from statsmodels.tsa.holtwinters import ExponentialSmoothing

from countcast.covariates import Channel
from countcast.errors import DegenerateInputWarning, GapError, InputError

logger = logging.getLogger(__name__)

YEAR = 12
MIN_SMOOTHING_POINTS = 4
# descending so that exact ties resolve to the largest weights
WEIGHT_GRID = tuple(round(1.0 - i / 10, 1) for i in range(11))


class FillMethod(str, Enum):
    CONSTANT_MEAN = 'constant'
    ITERATIVE = 'iterative'
    EXPSMOOTH = 'expsmooth'


def end_gaps(values):
    """
    :param values: np.ndarray with NaN gaps
    :return: (head, tail) lengths of the leading and trailing gaps
    """
    missing = np.isnan(values)
    if missing.all():
        raise GapError('channel has no observed steps')
    observed = np.flatnonzero(~missing)
    head, tail = int(observed[0]), int(values.size - 1 - observed[-1])
    if missing[head:values.size - tail].any():
        raise GapError('channel has an interior gap between steps %d and %d' % (head, values.size - tail - 1))
    return head, tail


def fill_constant(channel, year=YEAR):
    """
    leading gap <- mean of the first `year` observed steps, trailing gap <- mean of the last ones
    """
    head, tail = end_gaps(channel.values)
    if head == 0 and tail == 0:
        return channel
    values = channel.values.copy()
    n = values.size
    observed = values[head:n - tail]
    if head:
        values[:head] = observed[:year].mean()
    if tail:
        values[n - tail:] = observed[-year:].mean()
    return channel.with_values(values)


@dataclass(frozen=True)
class SmootherFit:
    """chosen weights and the statsmodels fit run with them"""
    alpha: float
    beta: float
    gamma: float
    result: object

    @property
    def level(self):
        return float(self.result.level[-1])

    @property
    def trend(self):
        return float(self.result.trend[-1])

    @property
    def seasonal(self):
        if self.gamma is None:
            return None
        m = self.result.model.seasonal_periods
        return np.asarray(self.result.season[-m:], dtype=float)

    @property
    def sse(self):
        return float(self.result.sse)

    def forecast(self, steps):
        return np.asarray(self.result.forecast(steps), dtype=float)


def _initial_state(y, period):
    """
    known starting state: without seasonality the first forecast reproduces y[0] and leaves
    (level, trend) = (y[0], y[1] - y[0]); with it the recursions start at step `period`, seasonal
    indices being deviations from the line through the first two period means
    """
    if period is None:
        return y, 2 * y[0] - y[1], y[1] - y[0], None
    m = period
    first, second = y[:m].mean(), y[m:2 * m].mean()
    trend0 = (second - first) / m
    season = y[:m] - (first + trend0 * (np.arange(m) - (m - 1) / 2))
    return y[m:], first + trend0 * (m - 1) / 2, trend0, season


def _grid_sse(y, level0, trend0, season0):
    """in-sample one-step SSE of every grid point, with the statsmodels additive recursions"""
    seasonal = season0 is not None
    grid = np.array(list(product(WEIGHT_GRID, WEIGHT_GRID, WEIGHT_GRID if seasonal else (0.0,))))
    alpha, beta, gamma = grid[:, 0], grid[:, 1], grid[:, 2]
    level = np.full(len(grid), level0)
    trend = np.full(len(grid), trend0)
    m = season0.size if seasonal else 1
    season = np.zeros((y.size + m, len(grid)))
    if seasonal:
        season[:m] = season0[:, None]
    sse = np.zeros(len(grid))
    for t in range(y.size):
        s = season[t]
        f = level + trend + s
        sse += (y[t] - f) ** 2
        new_level = alpha * (y[t] - s) + (1 - alpha) * (level + trend)
        season[t + m] = gamma * (y[t] - level - trend) + (1 - gamma) * s
        trend = beta * (new_level - level) + (1 - beta) * trend
        level = new_level
    return grid, sse


def fit_expsmooth(observed, period=YEAR):
    """
    Holt additive-trend smoothing, with additive seasonality when at least two full periods are
    observed; weights picked from {1.0, 0.9, ..., 0.0} by minimum in-sample one-step SSE, then
    the chosen model is fitted with statsmodels' ExponentialSmoothing

    :param observed: sequence of float without gaps
    :param period: int season length, or None for no seasonal component
    :return: SmootherFit
    """
    y = np.array(observed, dtype=float)  # contiguous, so a reversed view sums in the same order
    n = y.size
    if n < MIN_SMOOTHING_POINTS:
        raise InputError('exponential smoothing needs at least %d points (got %d)' % (MIN_SMOOTHING_POINTS, n))
    if np.isnan(y).any():
        raise GapError('exponential smoothing input must be gap free')

    period = period if period is not None and n >= 2 * period else None
    endog, level0, trend0, season0 = _initial_state(y, period)
    grid, sse = _grid_sse(endog, level0, trend0, season0)
    alpha, beta, gamma = (float(w) for w in grid[int(np.argmin(sse))])
    gamma = gamma if period is not None else None

    model = ExponentialSmoothing(endog, trend='add', seasonal='add' if period else None, seasonal_periods=period,
                                 initialization_method='known', initial_level=level0, initial_trend=trend0,
                                 initial_seasonal=season0)
    # an exact fit has sse 0 and a log(0) information criterion
    with np.errstate(divide='ignore', invalid='ignore'):
        result = model.fit(smoothing_level=alpha, smoothing_trend=beta, smoothing_seasonal=gamma, optimized=False)
    logger.debug('expsmooth on %d points: alpha %.1f beta %.1f gamma %s sse %.4g', n, alpha, beta, gamma,
                 result.sse)
    return SmootherFit(alpha, beta, gamma, result)


def fill_expsmooth(channel, period=YEAR):
    """
    trailing gap <- forward forecast of the observed segment, leading gap <- forecast of the
    reversed segment, reversed back
    """
    head, tail = end_gaps(channel.values)
    if head == 0 and tail == 0:
        return channel
    values = channel.values.copy()
    n = values.size
    observed = values[head:n - tail]
    if observed.size < MIN_SMOOTHING_POINTS:
        warnings.warn('channel %s has %d observed steps; using constant fill'
                      % (channel.name, observed.size), DegenerateInputWarning)
        return fill_constant(channel)
    if tail:
        values[n - tail:] = fit_expsmooth(observed, period).forecast(tail)
    if head:
        values[:head] = fit_expsmooth(observed[::-1], period).forecast(head)[::-1]
    return channel.with_values(values)


@dataclass
class ImputationModel:
    names: list
    means: np.ndarray
    coefficients: dict
    filled: np.ndarray
    rounds: int
    converged: bool


def fit_iterative_imputer(channels, max_rounds=10, tol=1e-3):
    """
    round-robin imputation with sklearn's IterativeImputer: missing cells start at their column
    mean, then each channel with gaps is regressed (OLS with intercept) on all others over its
    observed rows and its missing cells are overwritten with the predictions. A channel whose
    design is singular keeps its column mean.

    :param channels: list[Channel], at least two, each with one observed value or more
    :param max_rounds: int
    :param tol: float, stop once max |change| drops below tol * max |observed value|
    :return: ImputationModel
    """
    if len(channels) < 2:
        raise InputError('iterative imputation needs at least two channels')
    names = [ch.name for ch in channels]
    x = np.column_stack([ch.values for ch in channels])
    missing = np.isnan(x)
    for j, name in enumerate(names):
        if missing[:, j].all():
            raise GapError('channel %s has no observed steps' % name)

    means = np.nanmean(x, axis=0)
    start = np.where(missing, means, x)
    model = ImputationModel(names, means, {}, start, 0, True)
    if not missing.any():
        return model

    ones = np.ones((x.shape[0], 1))
    for j, name in enumerate(names):
        gaps = missing[:, j]
        if not gaps.any():
            continue
        rows = np.hstack([ones, np.delete(start, j, axis=1)])[~gaps]
        if np.linalg.matrix_rank(rows) < rows.shape[1]:
            warnings.warn('singular design for channel %s; using its column mean' % name, DegenerateInputWarning)
            model.coefficients[name] = None
            x[gaps, j] = means[j]
    if not np.isnan(x).any():
        model.filled = x
        return model

    imputer = IterativeImputer(estimator=LinearRegression(), initial_strategy='mean', imputation_order='roman',
                               max_iter=max_rounds, tol=tol, random_state=0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter('always', ConvergenceWarning)
        model.filled = imputer.fit_transform(x)
    model.rounds = int(imputer.n_iter_)
    model.converged = not any(issubclass(w.category, ConvergenceWarning) for w in caught)
    for triplet in imputer.imputation_sequence_:
        fitted = triplet.estimator
        model.coefficients[names[triplet.feat_idx]] = np.r_[fitted.intercept_, fitted.coef_]
    logger.debug('imputation of %s: %d rounds, converged %s', ', '.join(names), model.rounds, model.converged)
    return model


def fill_iterative(channels, max_rounds=10, tol=1e-3):
    """
    :return: list[Channel] with every gap filled; observed cells are left untouched
    """
    model = fit_iterative_imputer(channels, max_rounds=max_rounds, tol=tol)
    out = []
    for j, ch in enumerate(channels):
        values = np.where(ch.missing, model.filled[:, j], ch.values)
        out.append(ch.with_values(values))
    return out


def fill_channel(channel, method, companions=(), period=YEAR):
    """
    fill one channel by any method; `companions` are the other channels of the same region and
    are only used by the iterative imputer
    """
    method = FillMethod(method)
    if method is FillMethod.CONSTANT_MEAN:
        return fill_constant(channel)
    if method is FillMethod.EXPSMOOTH:
        return fill_expsmooth(channel, period=period)
    if not companions:
        warnings.warn('no companion channels for %s; using constant fill' % channel.name, DegenerateInputWarning)
        return fill_constant(channel)
    return fill_iterative([channel] + list(companions))[0]


def fill_region(channels, method, period=YEAR):
    """
    fill every channel of one region
    :param channels: list[Channel]
    :return: list[Channel] in the same order
    """
    method = FillMethod(method)
    if method is FillMethod.ITERATIVE and len(channels) >= 2:
        if not any(ch.missing.any() for ch in channels):
            return list(channels)
        return fill_iterative(channels)
    return [fill_channel(ch, method, period=period) for ch in channels]


def evaluate_fill(channel, method, holdout=YEAR, at='end', companions=(), period=YEAR):
    """
    blank `holdout` real steps at one end of the observed segment, fill them back and score

    :param at: 'end' or 'start'
    :return: float RMSE on the channel's max-abs normalized scale
    """
    from countcast.backtest import rmse

    head, tail = end_gaps(channel.values)
    n = len(channel)
    truth = channel.values[head:n - tail]
    if truth.size <= holdout:
        raise InputError('channel %s has %d observed steps, holdout needs more than %d'
                         % (channel.name, truth.size, holdout))
    window = slice(truth.size - holdout, truth.size) if at == 'end' else slice(0, holdout)

    blanked = truth.copy()
    blanked[window] = np.nan
    others = [Channel(c.name, c.values[head:n - tail]) for c in companions]
    filled = fill_channel(Channel(channel.name, blanked), method, companions=others, period=period)

    scale = float(np.max(np.abs(truth)))
    scale = scale if scale > 0 else 1.0
    return rmse(filled.values[window] / scale, truth[window] / scale)


def fill_comparison(channels, holdout=YEAR, period=YEAR, methods=tuple(FillMethod)):
    """
    holdout RMSE of every method on every channel
    :param channels: list[Channel] of one region; each is scored with the others as companions
    :return: pandas.DataFrame rows channel, columns method
    """
    table = pd.DataFrame(index=[ch.name for ch in channels], columns=[FillMethod(m).value for m in methods],
                         dtype=float)
    table.index.name = 'channel'
    for ch in channels:
        companions = [c for c in channels if c is not ch]
        for m in methods:
            table.loc[ch.name, FillMethod(m).value] = evaluate_fill(ch, m, holdout=holdout, companions=companions,
                                                                    period=period)
    return table
