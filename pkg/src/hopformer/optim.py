"""AdamW with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass
class OptimizerState:
    lr: float
    weight_decay: float
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class AdamW:
    """``p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p``.

    The decay term uses the parameter value from before the step.
    """

    def __init__(self, params, lr=1e-3, weight_decay=1e-5, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        if not self.params:
            raise ValidationError("AdamW needs at least one parameter")
        if lr < 0 or weight_decay < 0:
            raise ValidationError(f"lr and weight_decay must be >= 0, got {lr}, {weight_decay}")
        self.state = OptimizerState(lr, weight_decay, tuple(betas), eps,
                                    m=[np.zeros_like(p.data) for p in self.params],
                                    v=[np.zeros_like(p.data) for p in self.params])

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        st = self.state
        missing = [p.name or str(i) for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise ValidationError(f"AdamW.step: no gradient for parameter(s) {missing}")
        st.step += 1
        b1, b2 = st.betas
        c1 = 1.0 - b1 ** st.step
        c2 = 1.0 - b2 ** st.step
        for p, m, v in zip(self.params, st.m, st.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + st.eps)
            p.data = (p.data - st.lr * update - st.lr * st.weight_decay * p.data).astype(
                p.data.dtype, copy=False)
