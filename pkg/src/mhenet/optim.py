"""Adam optimizer over a parameter store, with the step-decay schedule."""

import numpy as np


class Adam:
    """Adam with bias correction.  Only learnable store entries are updated;
    buffers (the gradient bases, running statistics) are never touched."""

    def __init__(self, store, lr=5e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = store.learnable()
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(t.data) for name, t in self.params}
        self._v = {name: np.zeros_like(t.data) for name, t in self.params}

    def zero_grad(self):
        for _, t in self.params:
            t.zero_grad()

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, t in self.params:
            if t.grad is None:
                continue
            g = t.grad
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            t.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def lr_at_epoch(base_lr, epoch, decay_every=40, factor=0.1):
    """Step decay: the rate drops by ``factor`` after every ``decay_every``
    completed epochs (epoch is 1-based; epochs 1..40 run at the base rate)."""
    if epoch < 1:
        raise ValueError("epoch is 1-based")
    return base_lr * factor ** ((epoch - 1) // decay_every)
