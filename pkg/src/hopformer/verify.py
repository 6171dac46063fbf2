"""Randomized equivalence suites run by ``hopformer oracle-check``.

``fact1_suite``
    Hop tokens built by sparse propagation, passed through the fixed
    attention matrix with a summation readout, against the dense evaluation
    of a decoupled GCN with identity feature map.

``propagation_suite``
    Every hop slice of the token tensor against dense matrix powers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import normalize
from .hop2token import hop2token
from .model import fixed_attention_forward
from .rng import make_rng
from .synthetic import erdos_renyi
from .training import decoupled_gcn_oracle

FACT1_TOL = 1e-8
PROPAGATION_TOL = 1e-10


@dataclass
class SuiteResult:
    name: str
    trials: int
    max_error: float
    tolerance: float
    metric: str

    @property
    def passed(self):
        return self.max_error <= self.tolerance

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name} trials={self.trials} "
                f"{self.metric}={self.max_error:.3e} tol={self.tolerance:.0e}")


def _rel_err(got, want):
    scale = max(np.abs(want).max(), 1e-300)
    return float(np.abs(got - want).max() / scale)


def fact1_suite(trials=50, seed=0, max_n=32, max_k=4, max_d=8):
    worst = 0.0
    for t in range(trials):
        rng = make_rng(seed, "fact1", t)
        n = int(rng.integers(2, max_n + 1))
        K = int(rng.integers(0, max_k + 1))
        d = int(rng.integers(1, max_d + 1))
        g = erdos_renyi(n, float(rng.uniform(0.05, 0.6)), d, seed=int(rng.integers(2**31)))
        a = normalize(g)
        betas = rng.standard_normal(K + 1)
        got = fixed_attention_forward(hop2token(a, g.features, K).data, betas)
        want = decoupled_gcn_oracle(a, g.features, betas)
        worst = max(worst, _rel_err(got, want))
    return SuiteResult("fact1", trials, worst, FACT1_TOL, "max_rel_err")


def propagation_suite(trials=50, seed=0, max_n=64, max_k=6, max_d=8):
    worst = 0.0
    for t in range(trials):
        rng = make_rng(seed, "propagation", t)
        n = int(rng.integers(1, max_n + 1))
        K = int(rng.integers(0, max_k + 1))
        d = int(rng.integers(1, max_d + 1))
        g = erdos_renyi(n, float(rng.uniform(0.0, 0.5)), d, seed=int(rng.integers(2**31)))
        a = normalize(g)
        tokens = hop2token(a, g.features, K).data
        dense = a.to_dense()
        power = np.eye(n)
        for k in range(K + 1):
            worst = max(worst, float(np.abs(tokens[:, k, :] - power @ g.features).max()))
            power = power @ dense
    return SuiteResult("propagation", trials, worst, PROPAGATION_TOL, "max_abs_err")
