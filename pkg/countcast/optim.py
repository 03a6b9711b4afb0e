import numpy as np


class Adam:
    """
    Adam with bias-corrected moments, updating a Module's parameters in place

        m = b1 m + (1 - b1) g
        v = b2 v + (1 - b2) g^2
        p -= lr * m_hat / (sqrt(v_hat) + eps)
    """

    def __init__(self, module, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.module = module
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for _, p in module.named_parameters()]
        self.v = [np.zeros_like(p) for _, p in module.named_parameters()]

    def step(self):
        self.t += 1
        params = self.module.named_parameters()
        grads = self.module.named_gradients()
        for i, ((_, p), (_, g)) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g ** 2
            m_hat = self.m[i] / (1 - self.b1 ** self.t)
            v_hat = self.v[i] / (1 - self.b2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
