"""Synthetic in-context regression problems.

A problem instance is a dictionary of ``K`` unit-norm tokens in ``R^d`` with a
random representation table ``zhat = f(V)`` of shape ``(m, K)``. The first
``N`` tokens are the prompt tokens. Each task draws coefficients ``lam`` and
per-token noise ``eps_k ~ N(0, tau I_m)`` and labels every token with
``y_k = lam . (zhat[:, k] + eps_k)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .rng import stream

log = logging.getLogger(__name__)

DISTINCT_TOL = 1e-12
MAX_REGENERATIONS = 64

LAMBDA_KINDS = ("standard-gaussian", "rademacher", "shifted-gaussian")


@dataclass(frozen=True)
class ProblemConfig:
    K: int
    d: int
    N: int
    m: int
    tau: float
    seed: int = 0

    def __post_init__(self):
        for name in ("K", "d", "N", "m"):
            value = getattr(self, name)
            if int(value) != value:
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if not 1 <= self.N < self.K:
            raise ConfigError("N must satisfy 1 ≤ N < K")
        for name in ("K", "d", "m"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)!r}")
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Token matrix ``(d, K)`` and representation table ``(m, K)``.

    ``regenerations`` counts how many times generation was retried because
    two token columns coincided.
    """

    tokens: np.ndarray
    zhat: np.ndarray
    N: int
    seed: int | None = None
    regenerations: int = 0

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.zhat.ndim != 2:
            raise DimensionError("tokens and zhat must be matrices")
        if self.tokens.shape[1] != self.zhat.shape[1]:
            raise DimensionError(
                f"tokens has {self.tokens.shape[1]} columns but zhat has {self.zhat.shape[1]}"
            )
        if not 1 <= self.N < self.K:
            raise DimensionError("N must satisfy 1 <= N < K")

    @property
    def K(self) -> int:
        return self.tokens.shape[1]

    @property
    def d(self) -> int:
        return self.tokens.shape[0]

    @property
    def m(self) -> int:
        return self.zhat.shape[0]

    @property
    def prompt_tokens(self) -> np.ndarray:
        return self.tokens[:, : self.N]

    @property
    def z(self) -> np.ndarray:
        return self.zhat[:, : self.N]

    @property
    def zq(self) -> np.ndarray:
        return self.zhat[:, self.N :]


@dataclass(frozen=True)
class LambdaDist:
    kind: str = "standard-gaussian"
    mean: tuple = field(default=())
    stdev: float = 1.0

    def __post_init__(self):
        if self.kind not in LAMBDA_KINDS:
            raise ConfigError(f"unknown lambda distribution {self.kind!r}")
        object.__setattr__(self, "mean", tuple(float(x) for x in self.mean))
        if self.kind == "shifted-gaussian":
            if not self.mean:
                raise ConfigError("shifted-gaussian needs a mean vector")
            if not self.stdev > 0:
                raise ConfigError("shifted-gaussian stdev must be > 0")

    @property
    def in_distribution(self) -> bool:
        """Zero mean and unit second moment per entry, as training requires."""
        return self.kind != "shifted-gaussian"

    def second_moment(self, m: int) -> float:
        """``E ||lam||^2`` for an ``m``-dimensional draw."""
        if self.kind == "shifted-gaussian":
            return float(np.sum(np.square(self.mean)) + m * self.stdev**2)
        return float(m)

    def sample(self, rng: np.random.Generator, m: int, size=None) -> np.ndarray:
        shape = (m,) if size is None else (size, m)
        if self.kind == "standard-gaussian":
            return rng.standard_normal(shape)
        if self.kind == "rademacher":
            return rng.choice(np.array([-1.0, 1.0]), size=shape)
        if len(self.mean) != m:
            raise ConfigError(
                f"shifted-gaussian mean has length {len(self.mean)}, expected m={m}"
            )
        return np.asarray(self.mean) + self.stdev * rng.standard_normal(shape)


@dataclass(frozen=True, eq=False)
class PromptInstance:
    lam: np.ndarray
    noise: np.ndarray
    labels_all: np.ndarray
    N: int
    seed: int | None = None

    @property
    def labels_prompt(self) -> np.ndarray:
        return self.labels_all[: self.N]


def _columns_distinct(tokens: np.ndarray, tol: float = DISTINCT_TOL) -> bool:
    diff = np.abs(tokens[:, :, None] - tokens[:, None, :]).max(axis=0)
    np.fill_diagonal(diff, np.inf)
    return bool(diff.min() > tol)


def gen_dictionary(cfg: ProblemConfig) -> Dictionary:
    """Gaussian tokens normalised to the unit sphere and a Gaussian table.

    Generation is retried on a fresh sub-stream when two token columns
    coincide, which only happens in practice for ``d = 1``.
    """
    for attempt in range(MAX_REGENERATIONS):
        rng = stream(cfg.seed, "dictionary", attempt)
        tokens = rng.standard_normal((cfg.d, cfg.K))
        tokens /= np.linalg.norm(tokens, axis=0, keepdims=True)
        zhat = rng.standard_normal((cfg.m, cfg.K))
        if _columns_distinct(tokens):
            if attempt:
                log.warning("dictionary seed %d regenerated %d time(s)", cfg.seed, attempt)
            return Dictionary(tokens, zhat, cfg.N, seed=cfg.seed, regenerations=attempt)
    raise ConfigError(
        f"could not draw {cfg.K} distinct unit tokens in R^{cfg.d} "
        f"after {MAX_REGENERATIONS} attempts"
    )


def check_row_distinct(dictionary, tol: float = DISTINCT_TOL) -> bool:
    """True iff some row of the prompt token block has N distinct entries."""
    v = dictionary.prompt_tokens if isinstance(dictionary, Dictionary) else np.asarray(dictionary)
    n = v.shape[1]
    if n == 1:
        return True
    srt = np.sort(v, axis=1)
    gaps = np.diff(srt, axis=1).min(axis=1)
    return bool(np.any(gaps > tol))


def make_prompt(dictionary: Dictionary, lam, noise, seed=None) -> PromptInstance:
    lam = np.asarray(lam, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if lam.shape != (dictionary.m,):
        raise DimensionError(f"lambda must have length m={dictionary.m}")
    if noise.shape != dictionary.zhat.shape:
        raise DimensionError(f"noise must have shape {dictionary.zhat.shape}")
    # column by column so each label is exactly lam . (zhat_k + eps_k)
    cols = dictionary.zhat + noise
    labels = np.array([lam @ cols[:, k] for k in range(cols.shape[1])])
    return PromptInstance(lam, noise, labels, dictionary.N, seed=seed)


def sample_prompt(
    dictionary: Dictionary,
    dist: LambdaDist,
    tau: float,
    seed: int,
    clip_norm: float | None = None,
) -> PromptInstance:
    """Draw one task. ``clip_norm`` rescales ``lam`` onto the ball of that radius."""
    if tau < 0:
        raise ConfigError("tau must be >= 0")
    rng = stream(seed, "prompt")
    lam = dist.sample(rng, dictionary.m)
    if clip_norm is not None:
        norm = np.linalg.norm(lam)
        if norm > clip_norm:
            lam = lam * (clip_norm / norm)
    noise = np.sqrt(tau) * rng.standard_normal(dictionary.zhat.shape)
    return make_prompt(dictionary, lam, noise, seed=seed)
