"""
Scaled dot-product and multi-head attention with backward passes.

Sequences use the (batch, length, features) layout; per-head projections are
stored as (heads, d_model, d_k) tensors.
"""
from dataclasses import dataclass

import numpy as np

from app.errors import ShapeError
from app.nn.layers import softmax


def scaled_dot_attention(Q, K, V):
    """
    softmax(Q K^T / sqrt(d_k)) V over the last two axes.

    Returns:
        tuple: (output, probabilities, cache)
    """
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ShapeError("attention inner dimensions disagree", Q.shape, K.shape, V.shape)
    scale = 1.0 / np.sqrt(Q.shape[-1])
    scores = (Q @ np.swapaxes(K, -1, -2)) * scale
    probabilities = softmax(scores, axis=-1)
    return probabilities @ V, probabilities, (Q, K, V, probabilities, scale)


def scaled_dot_attention_backward(dout, cache):
    """Returns (dQ, dK, dV)."""
    Q, K, V, probabilities, scale = cache
    dV = np.swapaxes(probabilities, -1, -2) @ dout
    dP = dout @ np.swapaxes(V, -1, -2)
    dS = probabilities * (dP - np.sum(dP * probabilities, axis=-1, keepdims=True))
    dQ = (dS @ K) * scale
    dK = (np.swapaxes(dS, -1, -2) @ Q) * scale
    return dQ, dK, dV


@dataclass
class AttentionParams:
    """
    Projection tensors of one multi-head attention block.

    W_Q, W_K: (h, d_model, d_k); W_V: (h, d_model, d_v); W_O: (h * d_v, d_model)
    """
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    W_O: np.ndarray
    b_Q: np.ndarray
    b_K: np.ndarray
    b_V: np.ndarray
    b_O: np.ndarray

    NAMES = ("W_Q", "W_K", "W_V", "W_O", "b_Q", "b_K", "b_V", "b_O")

    @property
    def heads(self):
        return self.W_Q.shape[0]

    @property
    def d_model(self):
        return self.W_Q.shape[1]

    @property
    def d_v(self):
        return self.W_V.shape[2]

    def validate(self):
        h, d_model, d_k = self.W_Q.shape
        if self.W_K.shape != (h, d_model, d_k) or self.W_V.shape[:2] != (h, d_model):
            raise ShapeError("attention projections disagree", self.W_Q.shape, self.W_K.shape, self.W_V.shape)
        if self.W_O.shape != (h * self.d_v, d_model):
            raise ShapeError("W_O input must be heads * d_v", self.W_O.shape, (h * self.d_v, d_model))

    @classmethod
    def from_mapping(cls, mapping, prefix=""):
        return cls(**{name: mapping[prefix + name] for name in cls.NAMES})


def _project(x, weight, bias):
    # (B, S, D) x (h, D, k) -> (B, h, S, k)
    return np.einsum("bsd,hdk->bhsk", x, weight) + bias[None, :, None, :]


def multi_head_attention(x_q, x_kv, params):
    """
    concat(head_1, ..., head_h) W_O with head_i = Att(x_q W_Q_i, x_kv W_K_i, x_kv W_V_i).

    Returns:
        tuple: (output (B, S_q, d_model), probabilities (B, h, S_q, S_kv), cache)
    """
    params.validate()
    if x_q.shape[-1] != params.d_model or x_kv.shape[-1] != params.d_model:
        raise ShapeError("attention input width differs from d_model", x_q.shape, x_kv.shape, (params.d_model,))
    q = _project(x_q, params.W_Q, params.b_Q)
    k = _project(x_kv, params.W_K, params.b_K)
    v = _project(x_kv, params.W_V, params.b_V)
    heads, probabilities, attention_cache = scaled_dot_attention(q, k, v)
    b, h, s, dv = heads.shape
    concat = heads.transpose(0, 2, 1, 3).reshape(b, s, h * dv)
    out = concat @ params.W_O + params.b_O
    return out, probabilities, (x_q, x_kv, params, attention_cache, concat)


def multi_head_attention_backward(dout, cache):
    """
    Returns:
        tuple: (dx_q, dx_kv, gradients keyed like AttentionParams fields)
    """
    x_q, x_kv, params, attention_cache, concat = cache
    b, s, _ = concat.shape
    h, dv = params.heads, params.d_v
    grads = {
        "W_O": concat.reshape(-1, h * dv).T @ dout.reshape(-1, dout.shape[-1]),
        "b_O": dout.sum(axis=(0, 1)),
    }
    dheads = (dout @ params.W_O.T).reshape(b, s, h, dv).transpose(0, 2, 1, 3)
    dq, dk, dv_ = scaled_dot_attention_backward(dheads, attention_cache)

    grads["W_Q"] = np.einsum("bsd,bhsk->hdk", x_q, dq)
    grads["W_K"] = np.einsum("bsd,bhsk->hdk", x_kv, dk)
    grads["W_V"] = np.einsum("bsd,bhsk->hdk", x_kv, dv_)
    grads["b_Q"] = dq.sum(axis=(0, 2))
    grads["b_K"] = dk.sum(axis=(0, 2))
    grads["b_V"] = dv_.sum(axis=(0, 2))

    dx_q = np.einsum("bhsk,hdk->bsd", dq, params.W_Q)
    dx_kv = np.einsum("bhsk,hdk->bsd", dk, params.W_K) + np.einsum("bhsk,hdk->bsd", dv_, params.W_V)
    return dx_q, dx_kv, grads
