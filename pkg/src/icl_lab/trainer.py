"""Full-batch gradient descent on the closed-form loss, with rate certification.

Q and w get separate step sizes ``eta_q`` and ``eta_w = gamma^2 eta_q``. In
``auto-theory`` mode gamma is set to the smallest value the convergence
theory admits and ``eta_q = 1/L`` for the chosen smoothness constant; the run
is then certified against the linear bound

    Delta^(t) <= (1 - eta_w zeta0 / (2K))^t Delta^(0).

Along the way each logged step records the quantities the theory bounds
(gradient norms, PL ratio, spectral floor, weight growth, Q drift) so tests
can check them on the actual trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolation, ConfigError, DivergenceError
from .loss import LossContext, evaluate
from .model import AttentionState, Params
from .problem import Dictionary

LR_MODES = ("manual", "auto-theory")
VARIANTS = ("tight", "simplified")

CERT_RTOL = 1e-9
DIVERGENCE_FACTOR = 10.0
# keeps round-off around an exact optimum (delta0 = 0) from tripping the guard
DIVERGENCE_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainerConfig:
    T: int = 1000
    lr_mode: str = "auto-theory"
    smoothness_variant: str = "tight"
    eta_q: float | None = None
    eta_w: float | None = None
    log_every: int | None = None

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 0:
            raise ConfigError("T must be a non-negative integer")
        if self.lr_mode not in LR_MODES:
            raise ConfigError(f"lr_mode must be one of {LR_MODES}, got {self.lr_mode!r}")
        if self.smoothness_variant not in VARIANTS:
            raise ConfigError(f"smoothness_variant must be one of {VARIANTS}")
        if self.lr_mode == "manual":
            for name in ("eta_q", "eta_w"):
                value = getattr(self, name)
                if value is None or not value > 0:
                    raise ConfigError(f"manual mode needs {name} > 0")
        if self.log_every is not None and (int(self.log_every) != self.log_every or self.log_every < 1):
            raise ConfigError("log_every must be a positive integer")

    @property
    def gamma(self) -> float | None:
        if self.eta_q is None or self.eta_w is None:
            return None
        return math.sqrt(self.eta_w / self.eta_q)

    @property
    def checkpoint_every(self) -> int:
        return self.log_every if self.log_every is not None else max(1, self.T // 500)


@dataclass(eq=False)
class TrainReport:
    steps: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    deltas: list = field(default_factory=list)
    rate_bound: list = field(default_factory=list)
    zeta_trace: list = field(default_factory=list)
    grad_q_norm: list = field(default_factory=list)
    grad_w_norm: list = field(default_factory=list)
    pl_lhs: list = field(default_factory=list)
    pl_rhs: list = field(default_factory=list)
    # per logged step: (max_h ||dL/dQ_h||_F, its bound)
    q_grad_check: list = field(default_factory=list)
    # per logged step: (max_h ||dl/dalpha_h||_2, its bound)
    w_grad_check: list = field(default_factory=list)
    alpha_norm: list = field(default_factory=list)
    q_drift: list = field(default_factory=list)
    zeta0: float = float("nan")
    delta0: float = float("nan")
    lstar: float = float("nan")
    gamma: float = float("nan")
    eta_q: float = float("nan")
    eta_w: float = float("nan")
    smoothness: float = float("nan")
    rate: float = float("nan")
    alpha_bound: float = float("nan")
    q_drift_bound: float = float("nan")
    lr_mode: str = "auto-theory"
    variant: str = "tight"
    certified: bool = False
    certification: str = "theory"
    final_params: Params | None = None

    @property
    def contraction(self) -> float:
        return 1.0 - self.rate

    def summary(self) -> dict:
        keys = (
            "zeta0", "delta0", "lstar", "gamma", "eta_q", "eta_w", "smoothness", "rate",
            "alpha_bound", "q_drift_bound", "lr_mode", "variant", "certified", "certification",
        )
        out = {k: getattr(self, k) for k in keys}
        out["T"] = self.steps[-1] if self.steps else 0
        out["final_delta"] = self.deltas[-1] if self.deltas else None
        out["final_loss"] = self.losses[-1] if self.losses else None
        out["min_zeta"] = min(self.zeta_trace) if self.zeta_trace else None
        return out


def spectral_floor(b: np.ndarray) -> float:
    """``min_k lambda_min(B_k B_k^T)`` for ``b`` stacked as (K, N, H)."""
    gram = np.einsum("knh,kmh->knm", b, b)
    return float(np.linalg.eigvalsh(gram)[:, 0].min())


def zeta0(state0: AttentionState, ctx: LossContext | None = None) -> float:
    b = state0.b
    if b is None:
        if ctx is None:
            raise ValueError("state has no B matrices; pass the loss context")
        b = np.einsum("ij,kjh->kih", ctx.zbar, state0.c)
    return spectral_floor(b)


def gamma_lower_bound(ctx: LossContext, zeta0: float, H: int, K: int, delta0: float) -> float:
    if not zeta0 > 0:
        raise AssumptionViolation(f"zeta0 = {zeta0!r} <= 0: some B_k lacks full row rank")
    if delta0 < 0:
        raise ConfigError("delta0 must be >= 0")
    inner = (
        128 * math.sqrt(2) / (math.sqrt(2) - 1)
        * ctx.zbar_norm**2 * math.sqrt(H) * ctx.fbar_max * K**1.5 * delta0
    )
    return zeta0 ** (-1.25) * math.sqrt(inner)


def alpha_bound(ctx: LossContext, zeta0: float, gamma: float, K: int, delta0: float) -> float:
    """Radius that bounds every ``||alpha_h||`` along a certified run."""
    return math.sqrt(2 * K) * 4 * ctx.zbar_norm * math.sqrt(delta0) / (gamma * zeta0)


def smoothness_L(
    ctx: LossContext,
    zeta0: float,
    gamma: float,
    H: int,
    K: int,
    N: int,
    delta0: float,
    variant: str = "tight",
) -> float:
    if not zeta0 > 0 or not gamma > 0 or delta0 < 0 or min(H, K, N) < 1:
        raise ConfigError("smoothness constant needs zeta0 > 0, gamma > 0, delta0 >= 0")
    zn = ctx.zbar_norm
    if variant == "simplified":
        mt = ctx.m * ctx.tau
        lead = 8 * math.sqrt(2) * H * math.sqrt(K) * zn**2 / zeta0 * math.sqrt(delta0) + 1 + ctx.ztz_hat_norm / mt
        l2 = lead**2 * zn**4 * (8 / K * gamma**2 + 4096 / (gamma * zeta0**2) * K**2 * N * delta0)
        l2 += 2 * H**2 * zn**4 * (gamma**4 / K**2 + 16384 / (gamma * zeta0**4) * K**3 * zn**2 * delta0**2)
    elif variant == "tight":
        alpha = alpha_bound(ctx, zeta0, gamma, K, delta0)
        an = ctx.a_norm
        agh = alpha * gamma * H
        l2 = 2 * ((2 * gamma * zn**2 * (2 * agh + an)) ** 2 / K + gamma**4 * H**2 * zn**4 / K**2)
        l2 += 8 * gamma * ctx.fbar_max * zn * max(1.0, 4 * K * alpha**2) * (agh**2 + 4 * N * (agh + an) ** 2)
    else:
        raise ConfigError(f"unknown smoothness variant {variant!r}")
    return math.sqrt(l2)


def to_reparam(params: Params, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    if not gamma > 0:
        raise ConfigError("gamma must be > 0")
    return params.q, params.w / gamma


def from_reparam(q: np.ndarray, alpha: np.ndarray, gamma: float) -> Params:
    if not gamma > 0:
        raise ConfigError("gamma must be > 0")
    return Params(q, gamma * alpha)


def reparam_roundtrip(params: Params, gamma: float) -> Params:
    return from_reparam(*to_reparam(params, gamma), gamma)


def gd_step(params: Params, grad_q: np.ndarray, grad_w: np.ndarray, eta_q: float, eta_w: float) -> Params:
    return Params(params.q - eta_q * grad_q, params.w - eta_w * grad_w)


def iteration_complexity(
    B: float,
    delta0: float,
    ctx: LossContext,
    eps: float,
    delta_prob: float,
    eta_w: float,
    zeta0: float,
    K: int,
    N: int,
    tau: float,
) -> int:
    """Training steps after which ``(1/2K)||yhat - ystar||^2 <= eps`` w.p. ``1 - delta_prob``."""
    if not (B > 0 and eps > 0 and tau > 0 and 0 < delta_prob < 1):
        raise ConfigError("iteration_complexity needs B, eps, tau > 0 and 0 < delta_prob < 1")
    rate = eta_w * zeta0 / (2 * K)
    if not 0 < rate < 1:
        raise ConfigError(f"contraction factor 1 - {rate} is outside (0, 1)")
    lg = math.log(1 / delta_prob)
    y_scale = ctx.z_norm + math.sqrt(tau) * math.sqrt(2 * math.sqrt(N * lg) + 2 * lg + N)
    arg = B**2 * delta0 * y_scale**2 / (ctx.m * tau * eps)
    if arg <= 1:
        return 0
    return math.ceil(math.log(arg) / -math.log1p(-rate))


def train(
    params0: Params,
    ctx: LossContext,
    dictionary: Dictionary,
    cfg: TrainerConfig,
    callback=None,
) -> TrainReport:
    """Run ``cfg.T`` GD steps from ``params0``.

    ``callback(t, params)`` is invoked at every logged step.
    """
    H, K, N = params0.H, ctx.K, ctx.N
    ev = evaluate(params0, dictionary, ctx)
    z0 = spectral_floor(ev.state.b)
    d0 = ev.gap
    rep = TrainReport(zeta0=z0, delta0=d0, lstar=ctx.lstar, lr_mode=cfg.lr_mode, variant=cfg.smoothness_variant)

    if cfg.lr_mode == "auto-theory":
        if not z0 > 0:
            raise AssumptionViolation(f"zeta0 = {z0:.3e} <= 0; initial B_k not full row rank (need H >= N)")
        gamma = gamma_lower_bound(ctx, z0, H, K, d0)
        if gamma == 0.0:
            # already at the infimum; any gamma is admissible
            gamma = 1.0
        lsm = smoothness_L(ctx, z0, gamma, H, K, N, d0, cfg.smoothness_variant)
        eta_q = 1.0 / lsm
        eta_w = gamma**2 * eta_q
        rep.smoothness = lsm
        rep.certification = "theory"
    else:
        eta_q, eta_w = cfg.eta_q, cfg.eta_w
        gamma = cfg.gamma
        rep.certification = "empirical"
    rep.gamma, rep.eta_q, rep.eta_w = gamma, eta_q, eta_w
    rep.rate = eta_w * max(z0, 0.0) / (2 * K)
    if rep.rate >= 2:
        raise ConfigError(f"eta_w * zeta0 / 2K = {rep.rate:.3g} >= 2")
    if z0 > 0:
        rep.alpha_bound = alpha_bound(ctx, z0, gamma, K, d0)
        sigma = z0 * gamma**2 / K
        rep.q_drift_bound = 8 * math.sqrt(2) * gamma * rep.alpha_bound * ctx.fbar_max / sigma * math.sqrt(d0)

    every = cfg.checkpoint_every
    params = params0
    q0 = params0.q
    for t in range(cfg.T + 1):
        if t > 0:
            ev = evaluate(params, dictionary, ctx)
        gap = ev.gap
        if not (np.isfinite(gap) and np.all(np.isfinite(ev.grad_q)) and np.all(np.isfinite(ev.grad_w))):
            raise DivergenceError(f"non-finite loss or gradient at step {t}", step=t)
        if gap > DIVERGENCE_FACTOR * max(d0, DIVERGENCE_FLOOR * (1 + abs(ctx.lstar))):
            raise DivergenceError(f"loss gap {gap:.3e} exceeds {DIVERGENCE_FACTOR} x initial gap at step {t}", step=t)
        if t % every == 0 or t == cfg.T:
            _log_step(rep, t, params, ev, ctx, gamma, q0)
            if callback is not None:
                callback(t, params)
        if t < cfg.T:
            params = gd_step(params, ev.grad_q, ev.grad_w, eta_q, eta_w)

    rep.final_params = params
    rep.certified = all(
        d <= b * (1 + CERT_RTOL) for d, b in zip(rep.deltas, rep.rate_bound)
    )
    return rep


def _log_step(rep: TrainReport, t, params, ev, ctx, gamma, q0):
    K = ctx.K
    gap = ev.gap
    zeta_t = spectral_floor(ev.state.b)
    r = ctx.zbar @ ev.delta
    sq = float(np.sum(r * r))

    gq_h = np.linalg.norm(ev.grad_q.reshape(params.H, -1), axis=1)
    ga_h = gamma * np.linalg.norm(ev.grad_w, axis=1)  # d l / d alpha_h = gamma dL/dw_h
    rep.steps.append(t)
    rep.losses.append(gap + ctx.lstar)
    rep.deltas.append(gap)
    rep.rate_bound.append(rep.contraction**t * rep.delta0)
    rep.zeta_trace.append(zeta_t)
    rep.grad_q_norm.append(float(np.linalg.norm(ev.grad_q)))
    rep.grad_w_norm.append(float(np.linalg.norm(ev.grad_w)))
    rep.pl_lhs.append(float(np.sum(ga_h**2)))
    rep.pl_rhs.append(gamma**2 / K**2 * zeta_t * sq)
    max_w = float(np.abs(params.w).max())
    rep.q_grad_check.append((float(gq_h.max()), 2 * math.sqrt(2) * max_w * ctx.fbar_max * math.sqrt(gap)))
    rep.w_grad_check.append((float(ga_h.max()), ctx.zbar_norm * gamma * math.sqrt(2 / K * gap)))
    rep.alpha_norm.append(float(np.linalg.norm(params.w, axis=1).max() / gamma))
    rep.q_drift.append(float(np.linalg.norm((params.q - q0).reshape(params.H, -1), axis=1).max()))
