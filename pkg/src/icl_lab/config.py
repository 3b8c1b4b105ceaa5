"""Experiment configuration files.

The grammar is INI-like: ``[section]`` headers, ``key = value`` lines and
``#`` comments (whole-line or trailing). Keys are case-sensitive. Lists are
comma-separated. ``none`` clears an optional value. Every key not listed in
``SCHEMA`` is an error, and so is a repeated key or section.

Sections and their keys::

    [experiment]  kind, out_dir
    [problem]     K, d, N, m, tau, seed
    [lambda]      kind, mean, stdev          (training distribution)
    [ood]         kind, mean, stdev          (inference-only distribution)
    [model]       H, beta
    [trainer]     T, lr_mode, smoothness_variant, eta_q, eta_w, log_every
    [inference]   B, eps, delta_prob, n_prompts
    [sweep]       n_values, h_values, seeds

Anything omitted takes the default of the corresponding dataclass.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .inference import InferenceConfig
from .problem import LambdaDist, ProblemConfig
from .trainer import TrainerConfig

EXPERIMENT_KINDS = ("train-curve", "sweep-n", "sweep-h", "verify")


@dataclass(frozen=True)
class ModelConfig:
    H: int = 16
    beta: float = 1.0

    def __post_init__(self):
        if int(self.H) != self.H or self.H < 1:
            raise ConfigError(f"H must be a positive integer, got {self.H!r}")
        if not self.beta > 0:
            raise ConfigError(f"beta must be > 0, got {self.beta!r}")


@dataclass(frozen=True)
class SweepConfig:
    n_values: tuple = (10, 15, 20, 25, 30, 40)
    h_values: tuple = ()
    seeds: tuple = (0, 1, 2, 3, 4)

    def __post_init__(self):
        for name in ("n_values", "h_values", "seeds"):
            vals = tuple(getattr(self, name))
            object.__setattr__(self, name, vals)
            for v in vals:
                if int(v) != v or v < (0 if name == "seeds" else 1):
                    raise ConfigError(f"{name} entries must be {'non-negative' if name == 'seeds' else 'positive'} integers, got {v!r}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str = "train-curve"
    out_dir: str = "out"
    problem: ProblemConfig = field(default_factory=lambda: ProblemConfig(K=40, d=20, N=12, m=8, tau=0.01))
    lambda_dist: LambdaDist = field(default_factory=LambdaDist)
    ood: LambdaDist | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"experiment.kind must be one of {EXPERIMENT_KINDS}, got {self.kind!r}")
        if not self.out_dir:
            raise ConfigError("experiment.out_dir must not be empty")
        if not self.lambda_dist.in_distribution:
            raise ConfigError("lambda.kind: shifted-gaussian is out-of-distribution and only allowed in [ood]")
        m = self.problem.m
        ood = self.ood
        if ood is None:
            ood = LambdaDist("shifted-gaussian", mean=(1.0,) * m, stdev=2.0)
        elif ood.kind == "shifted-gaussian" and len(ood.mean) == 1 and m > 1:
            ood = replace(ood, mean=ood.mean * m)
        if ood.kind == "shifted-gaussian" and len(ood.mean) != m:
            raise ConfigError(f"ood.mean has length {len(ood.mean)}, expected m={m}")
        object.__setattr__(self, "ood", ood)


# section -> key -> (target, attribute, value type)
SCHEMA = {
    "experiment": {"kind": ("spec", "kind", str), "out_dir": ("spec", "out_dir", str)},
    "problem": {k: ("problem", k, t) for k, t in
                (("K", int), ("d", int), ("N", int), ("m", int), ("tau", float), ("seed", int))},
    "lambda": {"kind": ("lambda_dist", "kind", str), "mean": ("lambda_dist", "mean", "floats"),
               "stdev": ("lambda_dist", "stdev", float)},
    "ood": {"kind": ("ood", "kind", str), "mean": ("ood", "mean", "floats"), "stdev": ("ood", "stdev", float)},
    "model": {"H": ("model", "H", int), "beta": ("model", "beta", float)},
    "trainer": {
        "T": ("trainer", "T", int),
        "lr_mode": ("trainer", "lr_mode", str),
        "smoothness_variant": ("trainer", "smoothness_variant", str),
        "eta_q": ("trainer", "eta_q", "opt_float"),
        "eta_w": ("trainer", "eta_w", "opt_float"),
        "log_every": ("trainer", "log_every", "opt_int"),
    },
    "inference": {"B": ("inference", "B", float), "eps": ("inference", "eps", float),
                  "delta_prob": ("inference", "delta_prob", float),
                  "n_prompts": ("inference", "n_prompts", int)},
    "sweep": {"n_values": ("sweep", "n_values", "ints"), "h_values": ("sweep", "h_values", "ints"),
              "seeds": ("sweep", "seeds", "ints")},
}

_CLASSES = {
    "problem": ProblemConfig,
    "lambda_dist": LambdaDist,
    "ood": LambdaDist,
    "model": ModelConfig,
    "trainer": TrainerConfig,
    "inference": InferenceConfig,
    "sweep": SweepConfig,
}


def _int(text: str) -> int:
    # int() alone would accept "1_000"; keep the grammar to plain digits
    t = text.strip()
    if not t.lstrip("+-").isdigit():
        raise ValueError(f"not an integer: {text!r}")
    return int(t)


def _convert(kind, text: str):
    text = text.strip()
    if kind is str:
        if not text:
            raise ValueError("empty value")
        return text
    if kind is int:
        return _int(text)
    if kind is float:
        return float(text)
    if kind in ("opt_float", "opt_int"):
        if text.lower() == "none":
            return None
        return float(text) if kind == "opt_float" else _int(text)
    if kind in ("floats", "ints"):
        if not text:
            return ()
        conv = float if kind == "floats" else _int
        return tuple(conv(part) for part in text.split(","))
    raise AssertionError(kind)


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(
        interpolation=None,
        comment_prefixes=("#",),
        inline_comment_prefixes=("#",),
        delimiters=("=",),
        strict=True,
        empty_lines_in_values=False,
        default_section="\x00no-default",
    )
    cp.optionxform = str
    return cp


def parse_spec(text: str) -> ExperimentSpec:
    cp = _parser()
    try:
        cp.read_string(text, source="<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"line {exc.lineno}: key outside any [section]") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"line {exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"line {exc.lineno}: duplicate key {exc.option!r} in [{exc.section}]") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"line {lineno}: cannot parse {line!r}") from None

    values: dict = {"spec": {}}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            target, attr, kind = SCHEMA[section][key]
            try:
                value = _convert(kind, raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from None
            values.setdefault(target, {})[attr] = value

    spec_kwargs = dict(values.pop("spec"))
    defaults = ExperimentSpec.__dataclass_fields__
    for target, kw in values.items():
        cls = _CLASSES[target]
        try:
            if target == "problem":
                base = defaults["problem"].default_factory()
                kw = {**{f.name: getattr(base, f.name) for f in fields(base)}, **kw}
            if target == "ood" and "kind" not in kw:
                kw["kind"] = "shifted-gaussian"
            spec_kwargs[target] = cls(**kw)
        except ConfigError as exc:
            section = "lambda" if target == "lambda_dist" else target
            raise ConfigError(f"[{section}] {exc}") from None
    return ExperimentSpec(**spec_kwargs)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize(spec: ExperimentSpec) -> str:
    """Canonical text for ``spec``; every field is written explicitly."""
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key, (target, attr, _) in keys.items():
            obj = spec if target == "spec" else getattr(spec, target)
            out.append(f"{key} = {_fmt(getattr(obj, attr))}")
        out.append("")
    return "\n".join(out)


def spec_hash(spec: ExperimentSpec) -> str:
    return hashlib.sha256(serialize(spec).encode("utf-8")).hexdigest()


def load_spec(path) -> ExperimentSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())
