import numpy as np
import pytest

from countcast.covariates import Channel, missing_flag
from countcast.errors import DegenerateInputWarning, GapError, InputError
from countcast.gapfill import (FillMethod, end_gaps, evaluate_fill, fill_channel, fill_comparison, fill_constant,
                               fill_expsmooth, fill_iterative, fill_region, fit_expsmooth, fit_iterative_imputer)

NAN = np.nan


def seasonal_channel(length=72, name='dispensing'):
    t = np.arange(length)
    return Channel(name, 10 + 0.5 * t + 3 * np.sin(2 * np.pi * t / 12))


def test_end_gaps():
    assert end_gaps(np.array([NAN, NAN, 1.0, 2.0, NAN])) == (2, 1)
    assert end_gaps(np.array([1.0, 2.0])) == (0, 0)
    with pytest.raises(GapError):
        end_gaps(np.array([1.0, NAN, 2.0]))
    with pytest.raises(GapError):
        end_gaps(np.array([NAN, NAN]))


def test_fill_constant_means():
    ch = fill_constant(Channel('x', [NAN, 1, 2, 3, NAN]))
    assert ch.values.tolist() == [2, 1, 2, 3, 2]
    assert ch.origin.tolist() == [False, True, True, True, False]


def test_fill_constant_uses_one_year_at_each_end():
    values = np.r_[NAN, np.arange(24.0), NAN]
    ch = fill_constant(Channel('x', values))
    assert ch.values[0] == np.arange(12.0).mean()
    assert ch.values[-1] == np.arange(12.0, 24.0).mean()


def test_expsmooth_recovers_linear_both_ends():
    truth = 3.0 + 2.0 * np.arange(10)
    values = truth.copy()
    values[:3] = NAN
    values[-3:] = NAN
    filled = fill_expsmooth(Channel('x', values))
    np.testing.assert_allclose(filled.values, truth, atol=1e-9)


def test_expsmooth_seasonal_fit():
    fit = fit_expsmooth(seasonal_channel().values)
    assert fit.seasonal is not None and fit.seasonal.size == 12
    assert fit.sse < 1.0
    short = fit_expsmooth(seasonal_channel(20).values)
    assert short.seasonal is None and short.gamma is None


def test_expsmooth_too_short_falls_back():
    with pytest.warns(DegenerateInputWarning):
        ch = fill_expsmooth(Channel('x', [NAN, 1, 3, NAN]))
    assert ch.values.tolist() == [2, 1, 3, 2]
    with pytest.raises(InputError):
        fit_expsmooth([1.0, 2.0])


def test_expsmooth_beats_constant_on_trend_and_season():
    ch = seasonal_channel()
    for at in ('end', 'start'):
        smooth = evaluate_fill(ch, FillMethod.EXPSMOOTH, holdout=12, at=at)
        const = evaluate_fill(ch, FillMethod.CONSTANT_MEAN, holdout=12, at=at)
        assert smooth < const


def test_iterative_recovers_linear_relation():
    a = seasonal_channel(48, 'a')
    b_truth = 2 * a.values + 1
    b = b_truth.copy()
    b[-12:] = NAN
    b[:5] = NAN
    filled_a, filled_b = fill_iterative([a, Channel('b', b)])
    np.testing.assert_array_equal(filled_a.values, a.values)
    np.testing.assert_allclose(filled_b.values, b_truth, atol=1e-6)


def test_iterative_needs_companions():
    with pytest.raises(InputError):
        fill_iterative([Channel('a', [1.0, NAN])])
    with pytest.warns(DegenerateInputWarning):
        ch = fill_channel(Channel('a', [1.0, 3.0, NAN]), FillMethod.ITERATIVE)
    assert ch.values.tolist() == [1, 3, 2]


def test_constant_channel_scores_zero():
    ch = Channel('flat', np.full(48, 7.0))
    for method in (FillMethod.CONSTANT_MEAN, FillMethod.EXPSMOOTH):
        assert evaluate_fill(ch, method) == pytest.approx(0.0, abs=1e-12)


def test_evaluate_fill_needs_enough_history():
    with pytest.raises(InputError):
        evaluate_fill(Channel('x', np.arange(12.0)), FillMethod.CONSTANT_MEAN, holdout=12)


def test_fill_region_keeps_observed_cells():
    a = seasonal_channel(36, 'a')
    values = a.values * 0.5
    values[:6] = NAN
    for method in FillMethod:
        out = fill_region([a, Channel('b', values)], method)
        assert not np.isnan(out[1].values).any()
        np.testing.assert_array_equal(out[1].values[6:], values[6:])
        assert out[1].origin[:6].tolist() == [False] * 6


def test_fill_comparison_table():
    a = seasonal_channel(48, 'a')
    b = Channel('b', 2 * a.values + 1)
    table = fill_comparison([a, b])
    assert list(table.index) == ['a', 'b']
    assert list(table.columns) == ['constant', 'iterative', 'expsmooth']
    assert table.loc['b', 'iterative'] == pytest.approx(0.0, abs=1e-6)
    assert (table.to_numpy() >= 0).all()


def test_expsmooth_leading_fill_is_the_reversed_trailing_fill():
    values = seasonal_channel(48).values.copy()
    values[:7] = NAN
    forward = fill_expsmooth(Channel('x', values))
    backward = fill_expsmooth(Channel('x', values[::-1]))
    np.testing.assert_array_equal(forward.values[:7], backward.values[::-1][:7])
    np.testing.assert_array_equal(forward.values, backward.values[::-1])


def test_fills_are_idempotent():
    values = seasonal_channel(48).values.copy()
    values[:5] = NAN
    values[-4:] = NAN
    for fill in (fill_constant, fill_expsmooth):
        once = fill(Channel('x', values))
        twice = fill(once)
        np.testing.assert_array_equal(twice.values, once.values)
        np.testing.assert_array_equal(twice.origin, once.origin)


def test_filling_keeps_the_missing_flag():
    a = seasonal_channel(36, 'a')
    values = a.values * 0.5
    values[:6] = NAN
    values[-3:] = NAN
    b = Channel('b', values)
    before = missing_flag(b).values
    for method in FillMethod:
        filled = fill_region([a, b], method)[1]
        assert not filled.missing.any()
        np.testing.assert_array_equal(missing_flag(filled).values, before)


@pytest.mark.parametrize('length', [10, 40])
def test_expsmooth_constant_channel_fills_with_the_constant(length):
    values = np.full(length, 4.25)
    values[-5:] = NAN
    filled = fill_expsmooth(Channel('flat', values))
    np.testing.assert_allclose(filled.values[-5:], 4.25, atol=1e-12)


def test_expsmooth_exact_ramp_picks_unit_weights():
    fit = fit_expsmooth(2.0 + 3.0 * np.arange(8))
    assert (fit.alpha, fit.beta) == (1.0, 1.0)
    assert fit.sse == pytest.approx(0.0, abs=1e-18)
    np.testing.assert_allclose(fit.forecast(3), 2.0 + 3.0 * np.arange(8, 11), atol=1e-9)


def test_singular_design_falls_back_to_column_mean():
    b = np.array([1.0, 2.0, 4.0, 8.0, NAN, NAN])
    with pytest.warns(DegenerateInputWarning):
        model = fit_iterative_imputer([Channel('flat', np.full(6, 3.0)), Channel('b', b)])
    assert model.coefficients['b'] is None
    np.testing.assert_array_equal(model.filled[4:, 1], np.nanmean(b))
    np.testing.assert_array_equal(model.filled[:4, 1], b[:4])


def test_imputer_reports_rounds_and_coefficients():
    a = seasonal_channel(48, 'a')
    b = 2 * a.values + 1
    b[-12:] = NAN
    model = fit_iterative_imputer([a, Channel('b', b)])
    assert model.converged
    assert 1 <= model.rounds <= 10
    np.testing.assert_allclose(model.coefficients['b'], [1.0, 2.0], atol=1e-8)
