"""
Adam with bias correction
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ShapeError

Arrays = dict[str, np.ndarray]


@dataclass(frozen=True)
class AdamState:
    m: Arrays = field(default_factory=dict)
    v: Arrays = field(default_factory=dict)
    t: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def initial(cls, params: Arrays, learning_rate: float = 1e-3, **kwargs) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
            learning_rate=learning_rate,
            **kwargs
        )


def adam_step(params: Arrays, grads: Arrays, state: AdamState) -> tuple[Arrays, AdamState]:
    """One update; returns new parameters and state, inputs are left untouched.

    m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2;  theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
    """
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t

    new_params, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {theta.shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * np.square(g)
        m_hat = m / correction1
        v_hat = v / correction2
        step = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new_params[name] = (theta - step).astype(theta.dtype, copy=False)
        new_m[name] = m.astype(theta.dtype, copy=False)
        new_v[name] = v.astype(theta.dtype, copy=False)

    return new_params, replace(state, m=new_m, v=new_v, t=t)
