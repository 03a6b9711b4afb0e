"""
Reduced temporal fusion transformer

    embeddings      one linear map per input variable (target + covariate channels) to d
    static context  gated residual unit over the static vector (skipped when there is none)
    selection       softmax over variables from a gated residual unit on the flattened
                    embeddings, conditioned on the static context
    attention       one multi-head self-attention block with a gated residual connection
    position-wise   gated residual unit
    head            linear map from the last step's hidden state to H outputs

no recurrent encoder, quantile heads or known-future decoder; point forecasts only
"""
import numpy as np

from countcast.layers import (GLU, GatedResidual, LayerNorm, Linear, Module, MultiHeadAttention,
                              VariableEmbedding, softmax, softmax_backward)
from countcast.models import ModelKind, NeuralForecaster

HIDDEN = 16
HEADS = 2


def variable_inputs(batch):
    """(N, L, V) with the target first, then each covariate channel"""
    return np.concatenate([batch.target[:, :, None], batch.covariates.transpose(0, 2, 1)], axis=2)


class TftNet(Module):
    def __init__(self, n_vars, n_static, horizon, rng, hidden=HIDDEN, heads=HEADS):
        super().__init__()
        d = hidden
        self.n_vars, self.n_static, self.d = n_vars, n_static, d
        self.embedding = self.add_module('embedding', VariableEmbedding(n_vars, d, rng))
        self.static_context = self.add_module('static_context', GatedResidual(n_static, d, d, rng)) if n_static else None
        self.selection = self.add_module('selection', GatedResidual(n_vars * d, d, n_vars, rng,
                                                                    n_context=d if n_static else None))
        self.attention = self.add_module('attention', MultiHeadAttention(d, heads, rng))
        self.attention_gate = self.add_module('attention_gate', GLU(d, d, rng))
        self.attention_norm = self.add_module('attention_norm', LayerNorm(d))
        self.positionwise = self.add_module('positionwise', GatedResidual(d, d, d, rng))
        self.head = self.add_module('head', Linear(d, horizon, rng))
        self.selection_weights = None

    @property
    def attention_weights(self):
        """(N, heads, L, L) from the last forward pass"""
        return self.attention.weights

    def forward(self, batch):
        x = variable_inputs(batch)
        n, length, v = x.shape
        self._e = self.embedding(x)
        context = self.static_context(batch.static) if self.static_context is not None else None
        logits = self.selection(self._e.reshape(n, length, v * self.d), context)
        self.selection_weights = softmax(logits)
        self._h = (self.selection_weights[..., None] * self._e).sum(axis=2)
        self._h2 = self.attention_norm(self._h + self.attention_gate(self.attention(self._h)))
        self._h3 = self.positionwise(self._h2)
        return self.head(self._h3[:, -1, :])

    def backward(self, grad):
        n, length, v, d = self._e.shape
        gh3 = np.zeros_like(self._h3)
        gh3[:, -1, :] = self.head.backward(grad)
        gh2 = self.positionwise.backward(gh3)[0]
        gz = self.attention_norm.backward(gh2)
        gh = gz + self.attention.backward(self.attention_gate.backward(gz))

        w = self.selection_weights
        gw = (gh[:, :, None, :] * self._e).sum(axis=-1)
        ge = w[..., None] * gh[:, :, None, :]
        gflat, gcontext = self.selection.backward(softmax_backward(w, gw))
        ge = ge + gflat.reshape(n, length, v, d)
        self.embedding.backward(ge)
        if self.static_context is not None:
            self.static_context.backward(gcontext)


class TftLite(NeuralForecaster):
    kind = ModelKind.TFT_LITE

    def __init__(self, spec=None, cfg=None, hidden=HIDDEN, heads=HEADS):
        super().__init__(spec, cfg)
        self.hidden, self.heads = hidden, heads

    def dims_of(self, batch):
        return {'n_vars': 1 + batch.covariates.shape[1], 'n_static': batch.static.shape[1],
                'horizon': batch.label.shape[1], 'hidden': self.hidden, 'heads': self.heads}

    def build(self, dims, rng):
        return TftNet(dims['n_vars'], dims['n_static'], dims['horizon'], rng,
                      hidden=dims.get('hidden', HIDDEN), heads=dims.get('heads', HEADS))
