import numpy as np

from .tensor import Parameter


def adam_step(
    params: list[Parameter],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> None:
    """One bias-corrected Adam update; clears the gradients afterwards.

    A parameter without a gradient is treated as having a zero gradient, so
    its moments still decay and its step count still advances.
    """
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1**t)
        v_hat = p.adam_v / (1.0 - beta2**t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + epsilon)).astype(p.data.dtype, copy=False)
        p.grad = None


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon

    def step(self, params: list[Parameter]) -> None:
        adam_step(params, self.lr, self.beta1, self.beta2, self.epsilon)
