"""
Adam optimiser over a ModelState's parameter dictionary.
"""
import numpy as np

from app.errors import ShapeError

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-7


def adam_step(state, gradients, lr=0.001, beta1=BETA1, beta2=BETA2, epsilon=EPSILON):
    """
    One bias-corrected Adam update.

    The input state is left untouched; a new state with incremented step
    counter is returned.

    Args:
        state (ModelState): Current parameters and moments.
        gradients (dict): Gradient per parameter name.
        lr (float): Learning rate.

    Returns:
        ModelState: Updated state.
    """
    updated = state.copy()
    updated.step = state.step + 1
    t = updated.step
    for name, param in state.params.items():
        grad = gradients[name]
        if grad.shape != param.shape:
            raise ShapeError(f"Gradient for {name} has the wrong shape", grad.shape, param.shape)
        m = state.m.get(name, np.zeros_like(param))
        v = state.v.get(name, np.zeros_like(param))
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        updated.params[name] = (param - lr * m_hat / (np.sqrt(v_hat) + epsilon)).astype(param.dtype)
        updated.m[name] = m.astype(param.dtype)
        updated.v[name] = v.astype(param.dtype)
    return updated
