"""Closed-form population loss and its gradients.

With ``G = Z^T Z + m tau I_N`` and ``Zbar = G^{1/2}`` the expected squared
error over tasks and label noise reduces to

    L(theta) = 1/(2K) sum_k ||Zbar delta_k||^2 + L*,
    delta_k  = Ahat(theta)[:, k] - A[:, k],
    A        = G^{-1} (Z^T Zhat + (m tau I_N, 0)).

The constant ``L*`` does not depend on the parameters. Gradients are taken in
the original ``(Q, w)`` coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigError, DimensionError, SingularityError
from .model import AttentionState, Params, a_hat, attention_state
from .problem import Dictionary, LambdaDist
from .rng import stream


@dataclass(frozen=True, eq=False)
class LossContext:
    z: np.ndarray
    zhat: np.ndarray
    zbar: np.ndarray
    a: np.ndarray
    lstar: float
    fbar_max: float
    zbar_norm: float
    ztz_hat_norm: float
    a_norm: float
    z_norm: float
    tau: float

    @property
    def m(self) -> int:
        return self.z.shape[0]

    @property
    def N(self) -> int:
        return self.z.shape[1]

    @property
    def K(self) -> int:
        return self.zhat.shape[1]

    @property
    def zq(self) -> np.ndarray:
        return self.zhat[:, self.N :]

    @property
    def zbar_sq(self) -> np.ndarray:
        return self.zbar @ self.zbar


def psd_sqrt(g: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root by eigendecomposition, negative round-off clamped."""
    evals, evecs = np.linalg.eigh((g + g.T) / 2)
    root = np.sqrt(np.clip(evals, 0.0, None))
    return (evecs * root) @ evecs.T


def context_from_table(zhat, N: int, tau: float) -> LossContext:
    zhat = np.asarray(zhat, dtype=float)
    if zhat.ndim != 2 or not 1 <= N < zhat.shape[1]:
        raise DimensionError("zhat must be (m, K) with 1 <= N < K")
    if tau < 0:
        raise ConfigError("tau must be >= 0")
    m, K = zhat.shape
    z = zhat[:, :N]
    g = z.T @ z + m * tau * np.eye(N)
    try:
        factor = linalg.cho_factor(g)
    except linalg.LinAlgError:
        factor = None
    if factor is None or np.linalg.cond(g) > 1e15:
        rank = np.linalg.matrix_rank(z)
        raise SingularityError(
            f"Z^T Z + m*tau*I is singular: tau={tau} and rank(Z)={rank} < N={N}"
        )
    rhs = z.T @ zhat
    rhs[:, :N] += m * tau * np.eye(N)
    a = linalg.cho_solve(factor, rhs)

    # Per-token constant ||z_k||^2 + m tau - r_k^T G^{-1} r_k, with the extra
    # m tau e_k in r_k only for prompt tokens. The m tau outside r_k comes from
    # E||eps_k||^2 and is present for query tokens too.
    total = 0.0
    for k in range(K):
        zk = zhat[:, k]
        r = z.T @ zk
        if k < N:
            r[k] += m * tau
        total += zk @ zk + m * tau - r @ linalg.cho_solve(factor, r)
    lstar = total / (2 * K)

    zbar = psd_sqrt(g)
    return LossContext(
        z=z,
        zhat=zhat,
        zbar=zbar,
        a=a,
        lstar=float(lstar),
        fbar_max=float(np.linalg.norm(zbar, axis=0).max()),
        zbar_norm=float(np.linalg.norm(zbar, 2)),
        ztz_hat_norm=float(np.linalg.norm(z.T @ zhat, 2)),
        a_norm=float(np.linalg.norm(a, 2)),
        z_norm=float(np.linalg.norm(z, 2)),
        tau=float(tau),
    )


def build_context(dictionary: Dictionary, tau: float) -> LossContext:
    return context_from_table(dictionary.zhat, dictionary.N, tau)


def delta(ctx: LossContext, ahat: np.ndarray) -> np.ndarray:
    """Residuals ``delta_k`` stacked as columns, shape (N, K)."""
    if ahat.shape != ctx.a.shape:
        raise DimensionError(f"ahat has shape {ahat.shape}, expected {ctx.a.shape}")
    return ahat - ctx.a


def loss_gap(ctx: LossContext, dlt: np.ndarray) -> float:
    """``L(theta) - L*`` computed directly, without cancellation against L*."""
    r = ctx.zbar @ dlt
    return float(np.sum(r * r) / (2 * ctx.K))


def population_loss(ctx: LossContext, dlt: np.ndarray) -> float:
    return loss_gap(ctx, dlt) + ctx.lstar


def grad_w(ctx: LossContext, state: AttentionState, dlt: np.ndarray) -> np.ndarray:
    """dL/dw, shape (H, K); entry (h, k) = (Zbar s_k^h) . (Zbar delta_k) / K."""
    g = ctx.zbar_sq @ dlt
    return np.sum(state.s * g.T[None, :, :], axis=2) / ctx.K


def grad_q(
    ctx: LossContext,
    state: AttentionState,
    dlt: np.ndarray,
    params: Params,
    tokens: np.ndarray,
) -> np.ndarray:
    """dL/dQ, shape (H, d, d).

    Uses ``sum_j c_j s_j (v_j - V s) = V (c * s - (c . s) s)`` per head and
    token, where ``c_j = (Zbar delta_k) . zbar_j``.
    """
    N = ctx.N
    V = tokens[:, :N]
    g = ctx.zbar_sq @ dlt  # g[j, k] = (Zbar delta_k) . zbar_j
    coef = params.w[:, :, None] * state.s * g.T[None, :, :]  # (H, K, N)
    u = coef - coef.sum(axis=2, keepdims=True) * state.s
    vu = V @ u.transpose(0, 2, 1)  # (H, d, K)
    return (vu @ tokens.T) / ctx.K


@dataclass(frozen=True, eq=False)
class Evaluation:
    state: AttentionState
    ahat: np.ndarray
    delta: np.ndarray
    gap: float
    loss: float
    grad_q: np.ndarray
    grad_w: np.ndarray


def evaluate(params: Params, dictionary: Dictionary, ctx: LossContext, grads=True) -> Evaluation:
    state = attention_state(params, dictionary, ctx.zbar)
    ahat = a_hat(params, state)
    dlt = delta(ctx, ahat)
    gap = loss_gap(ctx, dlt)
    gq = gw = None
    if grads:
        gw = grad_w(ctx, state, dlt)
        gq = grad_q(ctx, state, dlt, params, dictionary.tokens)
    return Evaluation(state, ahat, dlt, gap, gap + ctx.lstar, gq, gw)


def mc_loss(
    params: Params,
    dictionary: Dictionary,
    dist: LambdaDist,
    tau: float,
    n_samples: int,
    seed: int,
    batch: int = 50_000,
) -> tuple[float, float]:
    """Monte Carlo estimate of the population loss and its standard error.

    Samples ``(lam, eps)`` directly and evaluates the model on noisy labels,
    so it shares nothing with the closed form except the attention weights.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    state = attention_state(params, dictionary)
    ahat = a_hat(params, state)
    rng = stream(seed, "mc-loss")
    m, K = dictionary.zhat.shape
    N = dictionary.N
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        n = min(batch, n_samples - done)
        lam = dist.sample(rng, m, size=n)
        eps = np.sqrt(tau) * rng.standard_normal((n, m, K))
        labels = np.einsum("sm,smk->sk", lam, dictionary.zhat[None] + eps)
        pred = labels[:, :N] @ ahat
        per = np.sum((pred - labels) ** 2, axis=1) / (2 * K)
        total += per.sum()
        total_sq += np.sum(per * per)
        done += n
    mean = total / n_samples
    if n_samples == 1:
        return float(mean), float("nan")
    var = (total_sq - n_samples * mean * mean) / (n_samples - 1)
    return float(mean), float(np.sqrt(max(var, 0.0) / n_samples))
