"""One-layer multi-head softmax attention in reduced parameterisation.

Head ``h`` carries a query-key matrix ``Q_h`` (d x d) and a value vector
``w_h`` (length K). Token ``k`` attends over the N prompt tokens with
``s_k^h = softmax(V^T Q_h v_k)`` and the prediction is

    yhat_k = sum_h w_{h,k} <y, s_k^h>.

Arrays are stacked head-first: ``q`` is ``(H, d, d)``, ``w`` is ``(H, K)`` and
attention probabilities are ``(H, K, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError
from .rng import stream


@dataclass(frozen=True, eq=False)
class Params:
    q: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if q.ndim != 3 or q.shape[1] != q.shape[2]:
            raise DimensionError(f"q must have shape (H, d, d), got {q.shape}")
        if w.ndim != 2 or w.shape[0] != q.shape[0]:
            raise DimensionError(f"w must have shape (H, K) with H={q.shape[0]}, got {w.shape}")
        if q.shape[0] < 1:
            raise DimensionError("need at least one head")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "w", w)

    @property
    def H(self) -> int:
        return self.q.shape[0]

    @property
    def d(self) -> int:
        return self.q.shape[1]

    @property
    def K(self) -> int:
        return self.w.shape[1]

    def copy(self) -> Params:
        return Params(self.q.copy(), self.w.copy())


@dataclass(frozen=True, eq=False)
class AttentionState:
    """Cached attention for one parameter value.

    ``s[h, k]`` is the probability vector of head h for token k. ``b`` holds
    ``Zbar @ C_k`` stacked as ``(K, N, H)`` when a ``zbar`` was supplied.
    A state is only valid for the ``Params`` it was built from.
    """

    s: np.ndarray
    b: np.ndarray | None = None

    @property
    def c(self) -> np.ndarray:
        """``C_k`` matrices stacked as ``(K, N, H)``."""
        return self.s.transpose(1, 2, 0)


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=float)
    if np.isnan(x).any():
        raise NumericError("softmax input contains NaN")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def attention_logits(params: Params, tokens: np.ndarray, N: int) -> np.ndarray:
    """``V^T Q_h v_k`` for every head and token, shape ``(H, K, N)``."""
    if tokens.shape[0] != params.d:
        raise DimensionError(f"token dimension {tokens.shape[0]} != Q dimension {params.d}")
    if tokens.shape[1] != params.K:
        raise DimensionError(f"dictionary has {tokens.shape[1]} tokens, w has {params.K}")
    qv = params.q @ tokens  # (H, d, K)
    return qv.transpose(0, 2, 1) @ tokens[:, :N]


def attention_state(params: Params, dictionary, zbar=None) -> AttentionState:
    s = softmax(attention_logits(params, dictionary.tokens, dictionary.N), axis=-1)
    b = None
    if zbar is not None:
        zbar = np.asarray(zbar)
        if zbar.shape != (dictionary.N, dictionary.N):
            raise DimensionError(f"zbar must be {dictionary.N}x{dictionary.N}")
        b = np.einsum("ij,kjh->kih", zbar, s.transpose(1, 2, 0))
    return AttentionState(s, b)


def a_hat(params: Params, state: AttentionState) -> np.ndarray:
    """Effective attention matrix, column k = sum_h w_{h,k} s_k^h. Shape (N, K)."""
    if state.s.shape[:2] != params.w.shape:
        raise DimensionError("attention state does not match params")
    return np.sum(params.w[:, :, None] * state.s, axis=0).T


def predict(params: Params, state: AttentionState, y_prompt) -> np.ndarray:
    y_prompt = np.asarray(y_prompt, dtype=float)
    if y_prompt.shape != (state.s.shape[2],):
        raise DimensionError(f"expected {state.s.shape[2]} prompt labels, got {y_prompt.shape}")
    return y_prompt @ a_hat(params, state)


def init_params(H: int, d: int, K: int, beta: float, seed: int) -> Params:
    """Gaussian ``Q_h`` entries with stdev ``beta`` and all-zero ``w``."""
    if not beta > 0:
        raise ValueError("beta must be > 0")
    rng = stream(seed, "init")
    q = beta * rng.standard_normal((H, d, d))
    return Params(q, np.zeros((H, K)))


def softmax_jacobian_action(s, V, v_k) -> np.ndarray:
    """``d s_j / d Q`` for each j, as an ``(N, d, d)`` stack.

    Entry j is ``s_j * sum_i s_i (v_j - v_i) v_k^T = s_j (v_j - V s) v_k^T``.
    """
    s = np.asarray(s, dtype=float)
    V = np.asarray(V, dtype=float)
    centred = V - (V @ s)[:, None]
    return np.einsum("j,dj,e->jde", s, centred, np.asarray(v_k, dtype=float))
