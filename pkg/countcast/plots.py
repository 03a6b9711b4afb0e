"""
SVG charts of a backtest

    prediction chart: actual series with stitched window predictions of one region
    window chart: mean RMSE over regions per window origin
"""
import io
import logging

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

logger = logging.getLogger(__name__)

# fixed salt and no timestamp so reruns produce identical bytes
matplotlib.rcParams['svg.hashsalt'] = 'countcast'
matplotlib.rcParams['svg.fonttype'] = 'none'


def _to_svg(fig):
    buf = io.StringIO()
    fig.savefig(buf, format='svg', metadata={'Date': None})
    plt.close(fig)
    return buf.getvalue()


def _dates(grid, steps):
    labels = grid.labels()
    return pd.to_datetime([labels[s] for s in steps])


def prediction_chart(report, panel, region):
    """
    :param report: BacktestReport
    :param panel: normalized SeriesPanel the report was run on
    :param region: RegionId
    :return: str SVG
    """
    grid = panel.grid
    actual = panel.series[region]
    predicted = report.predictions(region)

    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(_dates(grid, range(grid.length)), actual, color='black', linewidth=1.2, label='actual', gid='actual')
    ax.plot(_dates(grid, predicted.index), predicted.to_numpy(), color='tab:blue', linewidth=1.2,
            label='predicted', gid='predicted')
    ax.set_title('%s: %s' % (region.code, report.label))
    ax.set_ylabel('normalized count')
    ax.legend(loc='upper left', frameon=False)
    fig.tight_layout()
    return _to_svg(fig)


def window_rmse_chart(report):
    """
    :param report: BacktestReport
    :return: str SVG
    """
    means = report.window_means()
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(_dates(report.grid, list(means)), list(means.values()), color='tab:red', marker='o', markersize=3,
            linewidth=1.2, gid='window_rmse')
    ax.set_title('mean RMSE per window: %s' % report.label)
    ax.set_ylabel('RMSE')
    fig.tight_layout()
    return _to_svg(fig)
