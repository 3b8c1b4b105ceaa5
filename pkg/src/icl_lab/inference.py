"""Inference-time behaviour: ridge oracles and the limits the trained model reaches.

A fully trained model predicts ``ystar = A^T y``: it copies the N prompt
labels and extrapolates the rest with ridge regression at regulariser
``m * tau``. The noise-matched regulariser is ``N * tau``; the resulting
``ybest`` is what an oracle that knows tau would predict.

Normalisations differ on purpose: ``gap_star`` is ``(1/2K)||yhat - ystar||^2``
while ``gap_best`` is ``(1/K)||ystar - ybest||^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigError, DimensionError, SingularityError
from .loss import LossContext
from .model import Params, attention_state, predict
from .problem import Dictionary, PromptInstance


@dataclass(frozen=True)
class InferenceConfig:
    B: float = 3.0
    eps: float = 1e-4
    delta_prob: float = 0.05
    n_prompts: int = 10

    def __post_init__(self):
        if not self.B > 0:
            raise ConfigError("B must be > 0")
        if not self.eps > 0:
            raise ConfigError("eps must be > 0")
        if not 0 < self.delta_prob < 1:
            raise ConfigError("delta_prob must lie in (0, 1)")
        if int(self.n_prompts) != self.n_prompts or self.n_prompts < 1:
            raise ConfigError("n_prompts must be a positive integer")


@dataclass(frozen=True, eq=False)
class InferenceResult:
    y_hat: np.ndarray
    y_star: np.ndarray
    y_best: np.ndarray
    lambda_hat: np.ndarray
    lambda_tau: np.ndarray
    gap_star: float
    gap_best: float

    def to_dict(self) -> dict:
        return {
            "y_hat": self.y_hat.tolist(),
            "y_star": self.y_star.tolist(),
            "y_best": self.y_best.tolist(),
            "lambda_hat": self.lambda_hat.tolist(),
            "lambda_tau": self.lambda_tau.tolist(),
            "gap_star": self.gap_star,
            "gap_best": self.gap_best,
        }


def ridge(z, y, reg: float) -> np.ndarray:
    """``(reg I_m + Z Z^T)^{-1} Z y``.

    Minimises ``(1/2N) sum_i (y_i - lam . z_i)^2 + reg/(2N) ||lam||^2``. When
    ``N < m`` the equivalent dual form ``Z (reg I_N + Z^T Z)^{-1} y`` is solved
    instead, since its Gram matrix is the smaller one.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    m, n = z.shape
    if y.shape != (n,):
        raise DimensionError(f"y must have length {n}")
    if reg < 0:
        raise ConfigError("reg must be >= 0")
    if reg == 0 and np.linalg.matrix_rank(z) < m:
        raise SingularityError(f"Z Z^T is singular (rank {np.linalg.matrix_rank(z)} < m={m}) and reg = 0")
    if n < m:
        gram = reg * np.eye(n) + z.T @ z
        return z @ linalg.solve(gram, y, assume_a="pos")
    gram = reg * np.eye(m) + z @ z.T
    return linalg.solve(gram, z @ y, assume_a="pos")


def ridge_objective(z, y, lam, reg: float) -> float:
    n = z.shape[1]
    r = y - z.T @ lam
    return float(r @ r / (2 * n) + reg / (2 * n) * lam @ lam)


def y_star(ctx: LossContext, y_prompt) -> np.ndarray:
    y_prompt = np.asarray(y_prompt, dtype=float)
    if y_prompt.shape != (ctx.N,):
        raise DimensionError(f"expected {ctx.N} prompt labels")
    return ctx.a.T @ y_prompt


def _block_prediction(ctx: LossContext, y_prompt, lam) -> np.ndarray:
    return np.concatenate([np.asarray(y_prompt, dtype=float), ctx.zq.T @ lam])


def y_star_ridge(ctx: LossContext, y_prompt) -> np.ndarray:
    """``ystar`` through the ridge route, independent of the matrix A."""
    return _block_prediction(ctx, y_prompt, ridge(ctx.z, y_prompt, ctx.m * ctx.tau))


def y_best(ctx: LossContext, y_prompt, tau: float | None = None) -> np.ndarray:
    tau = ctx.tau if tau is None else tau
    return _block_prediction(ctx, y_prompt, ridge(ctx.z, y_prompt, ctx.N * tau))


def gap_star(y_hat, ystar) -> float:
    diff = np.asarray(y_hat) - np.asarray(ystar)
    return float(diff @ diff / (2 * len(diff)))


def gap_best(ystar, ybest) -> float:
    diff = np.asarray(ystar) - np.asarray(ybest)
    return float(diff @ diff / len(diff))


def evaluate(params: Params, dictionary: Dictionary, ctx: LossContext, prompt: PromptInstance) -> InferenceResult:
    y = prompt.labels_prompt
    state = attention_state(params, dictionary)
    yh = predict(params, state, y)
    lam_hat = ridge(ctx.z, y, ctx.m * ctx.tau)
    lam_tau = ridge(ctx.z, y, ctx.N * ctx.tau)
    # prefix is copied verbatim so it matches the prompt labels bit for bit
    ys = np.concatenate([y, (ctx.a.T @ y)[ctx.N :]])
    yb = _block_prediction(ctx, y, lam_tau)
    return InferenceResult(
        y_hat=yh,
        y_star=ys,
        y_best=yb,
        lambda_hat=lam_hat,
        lambda_tau=lam_tau,
        gap_star=gap_star(yh, ys),
        gap_best=gap_best(ys, yb),
    )


def smw_block(ctx: LossContext) -> np.ndarray:
    """``(I_N, Z^T (m tau I_m + Z Z^T)^{-1} Z^Q)``, the push-through form of A."""
    m, n = ctx.z.shape
    gram = ctx.m * ctx.tau * np.eye(m) + ctx.z @ ctx.z.T
    right = ctx.z.T @ linalg.solve(gram, ctx.zq, assume_a="pos")
    return np.hstack([np.eye(n), right])


def verify_smw(ctx: LossContext) -> float:
    """Frobenius distance between the solved A and its push-through form."""
    return float(np.linalg.norm(ctx.a - smw_block(ctx)))


def label_norm_bound(B: float, tau: float, N: int, delta_prob: float, z_norm: float) -> float:
    """High-probability bound on ``||y||`` for prompts with ``||lam|| <= B``."""
    lg = math.log(1 / delta_prob)
    return B * (z_norm + math.sqrt(tau) * math.sqrt(N + 2 * math.sqrt(N * lg) + 2 * lg))
