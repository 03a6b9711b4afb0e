"""
Minimal numpy layers with hand-written backward passes

a module caches what its backward pass needs during forward, so every forward call must be
followed by at most one backward call before the next forward; gradients accumulate into
`grads` until `zero_grad`
"""
import numpy as np


class Module:
    def __init__(self):
        self.params = {}
        self.grads = {}
        self._modules = {}

    def add_module(self, name, module):
        self._modules[name] = module
        return module

    def add_param(self, name, value):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def named_parameters(self, prefix=''):
        """
        parameters in declaration order, depth first
        :return: list[(str, np.ndarray)]
        """
        out = [(prefix + name, p) for name, p in self.params.items()]
        for name, m in self._modules.items():
            out.extend(m.named_parameters(prefix + name + '.'))
        return out

    def named_gradients(self, prefix=''):
        out = [(prefix + name, g) for name, g in self.grads.items()]
        for name, m in self._modules.items():
            out.extend(m.named_gradients(prefix + name + '.'))
        return out

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0
        for m in self._modules.values():
            m.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """y = x W + b over the last axis, any number of leading axes"""

    def __init__(self, n_in, n_out, rng, bias=True):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.add_param('weight', uniform_init(rng, max(n_in, 1), (n_in, n_out)))
        if bias:
            self.add_param('bias', uniform_init(rng, max(n_in, 1), (n_out,)))
        self._x = None

    def forward(self, x):
        self._x = x
        y = x @ self.params['weight']
        if 'bias' in self.params:
            y = y + self.params['bias']
        return y

    def backward(self, grad):
        x2 = self._x.reshape(-1, self.n_in)
        g2 = grad.reshape(-1, self.n_out)
        self.grads['weight'] += x2.T @ g2
        if 'bias' in self.params:
            self.grads['bias'] += g2.sum(axis=0)
        return grad @ self.params['weight'].T


class ELU(Module):
    def forward(self, x):
        self._x = x
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))

    def backward(self, grad):
        return grad * np.where(self._x > 0, 1.0, np.exp(np.minimum(self._x, 0.0)))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(z, axis=-1):
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(y, grad, axis=-1):
    """gradient w.r.t. the logits given the softmax output y"""
    return y * (grad - (grad * y).sum(axis=axis, keepdims=True))


class GLU(Module):
    """gated linear unit: sigmoid(x Wa + ba) * (x Wv + bv)"""

    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self.gate = self.add_module('gate', Linear(n_in, n_out, rng))
        self.value = self.add_module('value', Linear(n_in, n_out, rng))

    def forward(self, x):
        self._s = sigmoid(self.gate(x))
        self._v = self.value(x)
        return self._s * self._v

    def backward(self, grad):
        dv = grad * self._s
        da = grad * self._v * self._s * (1.0 - self._s)
        return self.gate.backward(da) + self.value.backward(dv)


class LayerNorm(Module):
    def __init__(self, n, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.add_param('gain', np.ones(n))
        self.add_param('bias', np.zeros(n))

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._inv
        return self._xhat * self.params['gain'] + self.params['bias']

    def backward(self, grad):
        n = grad.shape[-1]
        lead = tuple(range(grad.ndim - 1))
        self.grads['gain'] += (grad * self._xhat).sum(axis=lead)
        self.grads['bias'] += grad.sum(axis=lead)
        dxhat = grad * self.params['gain']
        return self._inv / n * (n * dxhat
                                - dxhat.sum(axis=-1, keepdims=True)
                                - self._xhat * (dxhat * self._xhat).sum(axis=-1, keepdims=True))


class GatedResidual(Module):
    """
    gated residual unit: LayerNorm(skip(a) + GLU(W1 ELU(W2 a + W3 c)))

    the context c is one vector per sample and is broadcast over any middle axes of a
    """

    def __init__(self, n_in, n_hidden, n_out, rng, n_context=None):
        super().__init__()
        self.skip = self.add_module('skip', Linear(n_in, n_out, rng)) if n_in != n_out else None
        self.hidden = self.add_module('hidden', Linear(n_in, n_hidden, rng))
        self.context = self.add_module('context', Linear(n_context, n_hidden, rng, bias=False)) if n_context else None
        self.elu = ELU()
        self.dense = self.add_module('dense', Linear(n_hidden, n_hidden, rng))
        self.glu = self.add_module('glu', GLU(n_hidden, n_out, rng))
        self.norm = self.add_module('norm', LayerNorm(n_out))

    def forward(self, a, c=None):
        h = self.hidden(a)
        if self.context is not None:
            hc = self.context(c)
            self._ctx_shape = (hc.shape[0],) + (1,) * (a.ndim - 2) + (hc.shape[-1],)
            h = h + hc.reshape(self._ctx_shape)
        h = self.dense(self.elu(h))
        residual = self.skip(a) if self.skip is not None else a
        return self.norm(residual + self.glu(h))

    def backward(self, grad):
        """
        :return: (grad w.r.t. a, grad w.r.t. c or None)
        """
        g = self.norm.backward(grad)
        ga = self.skip.backward(g) if self.skip is not None else g
        gh = self.elu.backward(self.dense.backward(self.glu.backward(g)))
        ga = ga + self.hidden.backward(gh)
        gc = None
        if self.context is not None:
            middle = tuple(range(1, gh.ndim - 1))
            gc = self.context.backward(gh.sum(axis=middle) if middle else gh)
        return ga, gc


class MultiHeadAttention(Module):
    """scaled dot-product self-attention over axis 1 of (N, L, d) inputs"""

    def __init__(self, d, heads, rng):
        super().__init__()
        if d % heads:
            raise ValueError('hidden size %d is not divisible by %d heads' % (d, heads))
        self.d, self.heads, self.dh = d, heads, d // heads
        self.query = self.add_module('query', Linear(d, d, rng))
        self.key = self.add_module('key', Linear(d, d, rng))
        self.value = self.add_module('value', Linear(d, d, rng))
        self.out = self.add_module('out', Linear(d, d, rng))
        self.weights = None

    def _split(self, x):
        n, length, _ = x.shape
        return x.reshape(n, length, self.heads, self.dh).transpose(0, 2, 1, 3)

    def _merge(self, x):
        n, _, length, _ = x.shape
        return x.transpose(0, 2, 1, 3).reshape(n, length, self.d)

    def forward(self, x):
        self._q = self._split(self.query(x))
        self._k = self._split(self.key(x))
        self._v = self._split(self.value(x))
        scores = self._q @ self._k.transpose(0, 1, 3, 2) / np.sqrt(self.dh)
        self.weights = softmax(scores)
        return self.out(self._merge(self.weights @ self._v))

    def backward(self, grad):
        gctx = self._split(self.out.backward(grad))
        gweights = gctx @ self._v.transpose(0, 1, 3, 2)
        gv = self.weights.transpose(0, 1, 3, 2) @ gctx
        gscores = softmax_backward(self.weights, gweights) / np.sqrt(self.dh)
        gq = gscores @ self._k
        gk = gscores.transpose(0, 1, 3, 2) @ self._q
        return (self.query.backward(self._merge(gq))
                + self.key.backward(self._merge(gk))
                + self.value.backward(self._merge(gv)))


class VariableEmbedding(Module):
    """one linear map per scalar input variable: (N, L, V) -> (N, L, V, d)"""

    def __init__(self, n_vars, d, rng):
        super().__init__()
        self.add_param('weight', uniform_init(rng, 1, (n_vars, d)))
        self.add_param('bias', uniform_init(rng, 1, (n_vars, d)))

    def forward(self, x):
        self._x = x
        return x[..., None] * self.params['weight'] + self.params['bias']

    def backward(self, grad):
        self.grads['weight'] += (grad * self._x[..., None]).sum(axis=(0, 1))
        self.grads['bias'] += grad.sum(axis=(0, 1))
        return (grad * self.params['weight']).sum(axis=-1)
