"""
Global multi-series forecasters

every model maps one input window (L target steps, L steps of each covariate channel and the
static vector of a region) to the next H target steps; samples from all regions are pooled
into one training set
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from countcast.errors import GapError, InputError, TrainingError
from countcast.layers import Linear, Module
from countcast.optim import Adam
from countcast.utils import write_atomic

logger = logging.getLogger(__name__)

RIDGE = 1e-6
MODEL_FORMAT = 'countcast-model/1'


class ModelKind(str, Enum):
    LAGGED_REGRESSION = 'regression'
    NLINEAR = 'nlinear'
    TFT_LITE = 'tft'


@dataclass(frozen=True)
class WindowSpec:
    input_len: int = 12
    horizon: int = 3

    def __post_init__(self):
        if self.input_len < 1 or self.horizon < 1:
            raise InputError('input_len and horizon must be >= 1 (got %d, %d)' % (self.input_len, self.horizon))

    @property
    def span(self):
        return self.input_len + self.horizon


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, 'betas', tuple(float(b) for b in self.betas))
        if self.epochs < 1 or self.batch_size < 1:
            raise InputError('epochs and batch_size must be >= 1')
        if self.learning_rate < 0 or self.eps <= 0:
            raise InputError('learning_rate must be >= 0 and eps > 0')
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise InputError('betas must be two values in [0, 1)')
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InputError('seed must be an unsigned 64-bit integer')

    @classmethod
    def from_dict(cls, d):
        return cls(**(d or {}))


@dataclass(frozen=True)
class SupervisedSample:
    region: object
    origin: int
    target_window: np.ndarray
    covariate_windows: np.ndarray
    static_vec: np.ndarray
    label: np.ndarray


@dataclass
class SampleBatch:
    """
    stacked samples
        target (N, L), covariates (N, C, L), static (N, S), label (N, H)
    """
    target: np.ndarray
    covariates: np.ndarray
    static: np.ndarray
    label: np.ndarray
    regions: list = field(default_factory=list)
    origins: np.ndarray = None

    def __len__(self):
        return self.target.shape[0]

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        if not samples:
            raise InputError('no samples')
        return cls(
            target=np.stack([s.target_window for s in samples]).astype(float),
            covariates=np.stack([s.covariate_windows for s in samples]).astype(float),
            static=np.stack([s.static_vec for s in samples]).astype(float),
            label=np.stack([s.label for s in samples]).astype(float),
            regions=[s.region for s in samples],
            origins=np.array([s.origin for s in samples], dtype=int),
        )

    def take(self, idx):
        return SampleBatch(self.target[idx], self.covariates[idx], self.static[idx], self.label[idx],
                           [self.regions[i] for i in idx], self.origins[idx])


def as_batch(samples):
    return samples if isinstance(samples, SampleBatch) else SampleBatch.from_samples(samples)


def _resolve_names(covariates, channels, statics):
    if covariates is None:
        return [], []
    channels = covariates.dynamic_names() if channels is None else list(channels)
    statics = covariates.static_names() if statics is None else list(statics)
    return channels, statics


def window_samples(panel, covariates, spec, origin, channels=None, statics=None, regions=None):
    """
    one sample per region for the window whose first forecast step is `origin`

    inputs come from steps [origin - L, origin); label steps beyond the panel are NaN
    """
    channels, statics = _resolve_names(covariates, channels, statics)
    L, H = spec.input_len, spec.horizon
    T = len(panel)
    if origin < L:
        raise InputError('origin %d leaves fewer than %d input steps' % (origin, L))
    if covariates is not None and covariates.grid.length < origin:
        raise InputError('covariates cover %d steps, origin %d needs %d' % (covariates.grid.length, origin, origin))
    regions = panel.regions if regions is None else regions
    samples = []
    for region in regions:
        series = panel.series[region]
        label = np.full(H, np.nan)
        available = max(0, min(H, T - origin))
        label[:available] = series[origin:origin + available]
        if channels:
            cov = np.vstack([covariates.channel(region, n).values[origin - L:origin] for n in channels])
            if np.isnan(cov).any():
                raise GapError('covariates of %s have gaps before origin %d; fill them first' % (region, origin))
        else:
            cov = np.zeros((0, L))
        samples.append(SupervisedSample(
            region=region,
            origin=origin,
            target_window=series[origin - L:origin].copy(),
            covariate_windows=cov,
            static_vec=covariates.static_vector(region, statics) if statics else np.zeros(0),
            label=label,
        ))
    return samples


def make_supervised(panel, covariates, spec, channels=None, statics=None):
    """
    pooled training windows of every region at every origin L..T-H

    :param panel: normalized SeriesPanel
    :param covariates: gap-free CovariateSet on the same grid, or None
    :param spec: WindowSpec
    :param channels: list[str] dynamic channel names (default every channel, sorted)
    :param statics: list[str] static names (default every static, sorted)
    :return: list[SupervisedSample], regions in sorted order, origins ascending within a region
    """
    if not panel.normalized:
        raise InputError('make_supervised needs a normalized panel')
    T = len(panel)
    if T < spec.span:
        raise InputError('panel has %d steps, a window needs %d' % (T, spec.span))
    channels, statics = _resolve_names(covariates, channels, statics)
    origins = range(spec.input_len, T - spec.horizon + 1)
    samples = []
    for region in panel.regions:
        for origin in origins:
            samples.extend(window_samples(panel, covariates, spec, origin, channels, statics, regions=[region]))
    logger.debug('%d samples from %d regions x %d origins', len(samples), len(panel.regions), len(origins))
    return samples


def mse(pred, label):
    return float(np.mean((pred - label) ** 2))


class Forecaster:
    """
    common interface: fit(samples) -> self, predict(samples) -> (N, H) array
    """
    kind = None

    def __init__(self, spec=None, cfg=None):
        self.spec = spec or WindowSpec()
        self.cfg = cfg or TrainConfig()
        self.loss_curve = []
        self.dims = {}

    def fit(self, samples):
        raise NotImplementedError

    def predict(self, samples):
        raise NotImplementedError

    def parameters(self):
        """
        :return: list[(str, np.ndarray)] in declaration order
        """
        raise NotImplementedError

    def restore(self, dims):
        """allocate parameters for the given dims so that they can be overwritten"""
        raise NotImplementedError

    def _check(self, batch):
        if batch.target.shape[1] != self.spec.input_len:
            raise InputError('samples have %d input steps, model expects %d'
                             % (batch.target.shape[1], self.spec.input_len))

    def __repr__(self):
        return '%s(%s, %s)' % (type(self).__name__, self.spec, self.cfg)


def flat_features(batch):
    n = len(batch)
    return np.hstack([batch.target, batch.covariates.reshape(n, -1), batch.static])


class LaggedRegression(Forecaster):
    """
    one affine map from [target window | covariate windows | static] to the H outputs,
    least squares with ridge damping on the mean normal equations
    """
    kind = ModelKind.LAGGED_REGRESSION

    def __init__(self, spec=None, cfg=None, ridge=RIDGE):
        super().__init__(spec, cfg)
        self.ridge = ridge
        self.weight = None

    @staticmethod
    def design(batch):
        return np.hstack([flat_features(batch), np.ones((len(batch), 1))])

    def fit(self, samples):
        batch = as_batch(samples)
        self._check(batch)
        a = self.design(batch)
        n = a.shape[0]
        gram = a.T @ a / n + self.ridge * np.eye(a.shape[1])
        self.weight = np.linalg.solve(gram, a.T @ batch.label / n)
        self.dims = {'n_in': a.shape[1] - 1, 'horizon': batch.label.shape[1]}
        self.loss_curve = [mse(a @ self.weight, batch.label)]
        return self

    def predict(self, samples):
        batch = as_batch(samples)
        self._check(batch)
        return self.design(batch) @ self.weight

    def parameters(self):
        return [('weight', self.weight)]

    def restore(self, dims):
        self.dims = dict(dims)
        self.weight = np.zeros((dims['n_in'] + 1, dims['horizon']))


class NLinearNet(Module):
    """
    last-value anchoring around one affine layer: the last target value is subtracted from
    the target window and added back to every output; covariates enter unanchored
    """

    def __init__(self, n_in, horizon, rng, zero_init=False):
        super().__init__()
        self.linear = self.add_module('linear', Linear(n_in, horizon, rng))
        if zero_init:
            for p in self.linear.params.values():
                p[...] = 0.0

    def forward(self, batch):
        anchor = batch.target[:, -1:]
        x = np.hstack([batch.target - anchor, batch.covariates.reshape(len(batch), -1), batch.static])
        return self.linear(x) + anchor

    def backward(self, grad):
        self.linear.backward(grad)


def fit_network(network, batch, cfg, rng):
    """
    minibatch Adam on mean squared error

    :param rng: np.random.Generator already used to initialize `network`; it drives the shuffle
    :return: list[float] full-batch MSE after each epoch
    """
    opt = Adam(network, lr=cfg.learning_rate, b1=cfg.betas[0], b2=cfg.betas[1], eps=cfg.eps)
    n = len(batch)
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            sub = batch.take(order[start:start + cfg.batch_size])
            network.zero_grad()
            pred = network.forward(sub)
            loss = mse(pred, sub.label)
            if not np.isfinite(loss):
                raise TrainingError('non-finite training loss', epoch=epoch, batch=b, loss=loss)
            network.backward(2.0 * (pred - sub.label) / pred.size)
            opt.step()
        full = mse(network.forward(batch), batch.label)
        if not np.isfinite(full):
            raise TrainingError('non-finite epoch loss', epoch=epoch, loss=full)
        curve.append(full)
        logger.debug('epoch %d/%d mse %.6g', epoch, cfg.epochs, full)
    return curve


class NeuralForecaster(Forecaster):
    """a Module trained by fit_network; subclasses provide build(dims, rng)"""

    def __init__(self, spec=None, cfg=None):
        super().__init__(spec, cfg)
        self.network = None

    def dims_of(self, batch):
        raise NotImplementedError

    def build(self, dims, rng):
        raise NotImplementedError

    def fit(self, samples):
        batch = as_batch(samples)
        self._check(batch)
        self.dims = self.dims_of(batch)
        rng = np.random.default_rng(int(self.cfg.seed))
        self.network = self.build(self.dims, rng)
        self.loss_curve = fit_network(self.network, batch, self.cfg, rng)
        return self

    def predict(self, samples):
        batch = as_batch(samples)
        self._check(batch)
        return self.network.forward(batch)

    def parameters(self):
        return self.network.named_parameters()

    def restore(self, dims):
        self.dims = dict(dims)
        self.network = self.build(self.dims, np.random.default_rng(0))


class NLinear(NeuralForecaster):
    kind = ModelKind.NLINEAR

    def __init__(self, spec=None, cfg=None, zero_init=False):
        super().__init__(spec, cfg)
        self.zero_init = zero_init

    def dims_of(self, batch):
        return {'n_in': flat_features(batch).shape[1], 'horizon': batch.label.shape[1]}

    def build(self, dims, rng):
        return NLinearNet(dims['n_in'], dims['horizon'], rng, zero_init=self.zero_init)


def build_model(kind, spec=None, cfg=None, **kwargs):
    """
    :param kind: ModelKind or its value
    :return: unfitted Forecaster
    """
    from countcast.tft import TftLite

    kind = ModelKind(kind)
    classes = {ModelKind.LAGGED_REGRESSION: LaggedRegression, ModelKind.NLINEAR: NLinear,
               ModelKind.TFT_LITE: TftLite}
    return classes[kind](spec, cfg, **kwargs)


def train(kind, samples, cfg=None, spec=None):
    """
    fit a fresh model of `kind`
    :return: (Forecaster, list[float] per-epoch loss curve)
    """
    batch = as_batch(samples)
    spec = spec or WindowSpec(input_len=batch.target.shape[1], horizon=batch.label.shape[1])
    model = build_model(kind, spec, cfg).fit(batch)
    logger.info('trained %s on %d samples, final mse %.6g', model.kind.value, len(batch), model.loss_curve[-1])
    return model, model.loss_curve


def save_model(model, path):
    """
    one JSON header line followed by every parameter array, in declaration order, as
    little-endian float64
    """
    params = model.parameters()
    header = {
        'format': MODEL_FORMAT,
        'kind': model.kind.value,
        'spec': asdict(model.spec),
        'cfg': dict(asdict(model.cfg), betas=list(model.cfg.betas)),
        'seed': int(model.cfg.seed),
        'dims': model.dims,
        'params': [[name, list(p.shape)] for name, p in params],
    }
    body = b''.join(np.ascontiguousarray(p, dtype='<f8').tobytes() for _, p in params)
    write_atomic(path, json.dumps(header, sort_keys=True).encode('utf-8') + b'\n' + body)


def load_model(path):
    with open(path, 'rb') as f:
        raw = f.read()
    head, _, body = raw.partition(b'\n')
    try:
        header = json.loads(head.decode('utf-8'))
    except ValueError:
        raise InputError('%s is not a saved model' % path)
    if header.get('format') != MODEL_FORMAT:
        raise InputError('%s has unknown model format %r' % (path, header.get('format')))

    model = build_model(header['kind'], WindowSpec(**header['spec']), TrainConfig.from_dict(header['cfg']))
    model.restore(header['dims'])
    offset = 0
    for (name, p), (stored, shape) in zip(model.parameters(), header['params']):
        if name != stored or list(p.shape) != shape:
            raise InputError('%s: parameter %s%s does not match %s%s' % (path, stored, shape, name, list(p.shape)))
        size = int(np.prod(shape)) * 8
        p[...] = np.frombuffer(body[offset:offset + size], dtype='<f8').reshape(shape)
        offset += size
    if offset != len(body):
        raise InputError('%s: %d trailing bytes after parameters' % (path, len(body) - offset))
    return model
