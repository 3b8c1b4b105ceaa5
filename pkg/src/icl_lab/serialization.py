"""Versioned JSON schema for the package's value types.

Every document is an object with ``schema_version`` and ``type`` keys.
Matrices are row-major nested lists; ``Params.q`` is a list of H row-major
``d x d`` matrices. Floats are written with Python's shortest round-trip
repr, so load(dump(x)) reproduces every array bit for bit and dumping the
same value twice gives identical bytes.

Types: ``dictionary``, ``prompt``, ``params``, ``context`` and ``model``
(params plus the dictionary and tau they were trained on).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .loss import LossContext
from .model import Params
from .problem import Dictionary, PromptInstance

SCHEMA_VERSION = 1


def _arr(x) -> list:
    return np.asarray(x, dtype=float).tolist()


def _mat(doc, key, ndim):
    try:
        a = np.array(doc[key], dtype=float)
    except KeyError:
        raise ConfigError(f"missing field {key!r}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field {key!r} is not a numeric array: {exc}") from None
    if a.ndim != ndim:
        raise ConfigError(f"field {key!r} must be {ndim}-dimensional, got shape {a.shape}")
    return a


def to_doc(obj) -> dict:
    if isinstance(obj, Dictionary):
        return {
            "schema_version": SCHEMA_VERSION,
            "type": "dictionary",
            "seed": obj.seed,
            "N": obj.N,
            "regenerations": obj.regenerations,
            "tokens": _arr(obj.tokens),
            "zhat": _arr(obj.zhat),
        }
    if isinstance(obj, PromptInstance):
        return {
            "schema_version": SCHEMA_VERSION,
            "type": "prompt",
            "seed": obj.seed,
            "N": obj.N,
            "lambda": _arr(obj.lam),
            "noise": _arr(obj.noise),
            "labels_all": _arr(obj.labels_all),
        }
    if isinstance(obj, Params):
        return {
            "schema_version": SCHEMA_VERSION,
            "type": "params",
            "H": obj.H,
            "q": _arr(obj.q),
            "w": _arr(obj.w),
        }
    if isinstance(obj, LossContext):
        return {
            "schema_version": SCHEMA_VERSION,
            "type": "context",
            "tau": obj.tau,
            "N": obj.N,
            "zhat": _arr(obj.zhat),
            "zbar": _arr(obj.zbar),
            "a": _arr(obj.a),
            "lstar": obj.lstar,
            "fbar_max": obj.fbar_max,
            "zbar_norm": obj.zbar_norm,
            "ztz_hat_norm": obj.ztz_hat_norm,
            "a_norm": obj.a_norm,
            "z_norm": obj.z_norm,
        }
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def model_doc(params: Params, dictionary: Dictionary, tau: float) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "type": "model",
        "tau": float(tau),
        "params": to_doc(params),
        "dictionary": to_doc(dictionary),
    }


def from_doc(doc: dict):
    if not isinstance(doc, dict):
        raise ConfigError("document must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    kind = doc.get("type")
    if kind == "dictionary":
        return Dictionary(
            _mat(doc, "tokens", 2), _mat(doc, "zhat", 2), int(doc["N"]),
            seed=doc.get("seed"), regenerations=int(doc.get("regenerations", 0)),
        )
    if kind == "prompt":
        return PromptInstance(
            _mat(doc, "lambda", 1), _mat(doc, "noise", 2), _mat(doc, "labels_all", 1),
            int(doc["N"]), seed=doc.get("seed"),
        )
    if kind == "params":
        q = _mat(doc, "q", 3)
        w = _mat(doc, "w", 2)
        if "H" in doc and int(doc["H"]) != q.shape[0]:
            raise ConfigError(f"H={doc['H']} but q holds {q.shape[0]} matrices")
        return Params(q, w)
    if kind == "context":
        zhat = _mat(doc, "zhat", 2)
        n = int(doc["N"])
        return LossContext(
            z=zhat[:, :n].copy(), zhat=zhat, zbar=_mat(doc, "zbar", 2), a=_mat(doc, "a", 2),
            lstar=float(doc["lstar"]), fbar_max=float(doc["fbar_max"]),
            zbar_norm=float(doc["zbar_norm"]), ztz_hat_norm=float(doc["ztz_hat_norm"]),
            a_norm=float(doc["a_norm"]), z_norm=float(doc["z_norm"]), tau=float(doc["tau"]),
        )
    if kind == "model":
        return from_doc(doc["params"]), from_doc(doc["dictionary"]), float(doc["tau"])
    raise ConfigError(f"unknown document type {kind!r}")


def dumps(obj) -> str:
    doc = obj if isinstance(obj, dict) else to_doc(obj)
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def loads(text: str):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return from_doc(doc)


def save(obj, path) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def load(path):
    return loads(Path(path).read_text(encoding="utf-8"))
