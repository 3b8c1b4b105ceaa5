"""Experiment runners behind the CLI.

``run(spec)`` dispatches on ``spec.kind``, writes every artifact into
``spec.out_dir`` and returns a :class:`RunManifest` listing each file with
its sha256. The manifest itself is written last as ``manifest.json`` and is
the only file in the directory it does not list.

Sweeps run their independent jobs on a thread pool whose size is capped by
the ``ICL_LAB_THREADS`` environment variable. Results are collected in job
order, so outputs do not depend on scheduling.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, inference, serialization
from .config import ExperimentSpec, serialize, spec_hash
from .errors import IclLabError, NumericError
from .loss import build_context, evaluate, mc_loss
from .model import Params, a_hat, attention_state, init_params
from .problem import Dictionary, ProblemConfig, check_row_distinct, gen_dictionary, sample_prompt
from .rng import ALGORITHM, stream, sub_seed
from .svg import line_plot
from .trainer import TrainerConfig, gd_step, from_reparam, to_reparam, train

log = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = (
    "t", "loss", "delta", "rate_bound", "zeta_t", "grad_q_norm", "grad_w_norm", "pl_lhs", "pl_rhs",
)


@dataclass
class RunManifest:
    kind: str
    spec_hash: str
    seeds: list
    version: str = __version__
    rng: str = ALGORITHM
    files: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "spec_hash": self.spec_hash,
            "seeds": self.seeds,
            "version": self.version,
            "rng": self.rng,
            "files": dict(sorted(self.files.items())),
            "failures": self.failures,
            "summary": self.summary,
            "ok": self.ok,
        }


def max_threads() -> int:
    raw = os.environ.get("ICL_LAB_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            log.warning("ignoring non-integer ICL_LAB_THREADS=%r", raw)
        else:
            return max(1, n)
    return os.cpu_count() or 1


def _parallel_map(fn, jobs):
    jobs = list(jobs)
    workers = min(max_threads(), max(1, len(jobs)))
    if workers == 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def fmt(x) -> str:
    """CSV cell: exact repr for floats so outputs round-trip."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


class _Writer:
    def __init__(self, out_dir, manifest: RunManifest):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest = manifest

    def text(self, name: str, content: str):
        data = content.encode("utf-8")
        (self.root / name).write_bytes(data)
        self.manifest.files[name] = hashlib.sha256(data).hexdigest()

    def json(self, name: str, doc):
        self.text(name, json.dumps(doc, sort_keys=True, indent=1, default=_json_default) + "\n")

    def finish(self):
        doc = json.dumps(self.manifest.to_dict(), sort_keys=True, indent=1, default=_json_default)
        (self.root / "manifest.json").write_text(doc + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _finite(x):
    """JSON has no inf/nan; report them as strings."""
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def trajectory_rows(rep):
    return zip(
        rep.steps, rep.losses, rep.deltas, rep.rate_bound, rep.zeta_trace,
        rep.grad_q_norm, rep.grad_w_norm, rep.pl_lhs, rep.pl_rhs,
    )


def _prompts(dictionary, dist, tau, seed, n, purpose, clip):
    return [sample_prompt(dictionary, dist, tau, sub_seed(seed, purpose, i), clip_norm=clip) for i in range(n)]


def mean_gap_star(params, dictionary, ctx, prompts) -> float:
    state = attention_state(params, dictionary)
    ahat = a_hat(params, state)
    gaps = []
    for p in prompts:
        y = p.labels_prompt
        ys = np.concatenate([y, (ctx.a.T @ y)[ctx.N :]])
        gaps.append(inference.gap_star(ahat.T @ y, ys))
    return float(np.mean(gaps))


# --------------------------------------------------------------------- train-curve


def run_train_curve(spec: ExperimentSpec, w: _Writer, dump_attention=False):
    pc = spec.problem
    dictionary = gen_dictionary(pc)
    ctx = build_context(dictionary, pc.tau)
    params0 = init_params(spec.model.H, pc.d, pc.K, spec.model.beta, pc.seed)
    n = spec.inference.n_prompts
    clip = spec.inference.B
    p_in = _prompts(dictionary, spec.lambda_dist, pc.tau, pc.seed, n, "prompt-in", clip)
    p_ood = _prompts(dictionary, spec.ood, pc.tau, pc.seed, n, "prompt-ood", clip)

    gaps = []

    def on_log(t, params):
        gaps.append((t, mean_gap_star(params, dictionary, ctx, p_in), mean_gap_star(params, dictionary, ctx, p_ood)))

    rep = train(params0, ctx, dictionary, spec.trainer, callback=on_log)

    w.text("trajectory.csv", csv_text(TRAJECTORY_COLUMNS, trajectory_rows(rep)))
    w.text("inference_gaps.csv", csv_text(("t", "gap_star_in", "gap_star_ood"), gaps))
    summary = {k: _finite(v) for k, v in rep.summary().items()}
    summary["final_gap_star_in"] = gaps[-1][1]
    summary["final_gap_star_ood"] = gaps[-1][2]
    w.json("report.json", summary)
    series = {"delta": (rep.steps, rep.deltas)}
    if rep.certification == "theory":
        series["rate bound"] = (rep.steps, rep.rate_bound)
    w.text("loss_curve.svg", line_plot(series, title="loss gap", xlabel="step t", ylabel="delta", logy=True))
    ts = [g[0] for g in gaps]
    w.text(
        "gap_curve.svg",
        line_plot(
            {"in-distribution": (ts, [g[1] for g in gaps]), "out-of-distribution": (ts, [g[2] for g in gaps])},
            title="inference gap to ridge limit", xlabel="step t", ylabel="gap_star", logy=True,
        ),
    )
    w.text("model.json", serialization.dumps(serialization.model_doc(rep.final_params, dictionary, pc.tau)))
    if dump_attention:
        w.text("attention.csv", attention_csv(rep.final_params, dictionary))
    if rep.certification == "theory" and not rep.certified:
        w.manifest.failures.append("rate certification failed")
    return summary


def attention_csv(params: Params, dictionary: Dictionary) -> str:
    """``C_k`` entries in long format: token k, prompt index j, head h."""
    c = attention_state(params, dictionary).c
    K, N, H = c.shape
    rows = ((k, j, h, c[k, j, h]) for k in range(K) for j in range(N) for h in range(H))
    return csv_text(("k", "j", "h", "c"), rows)


# ------------------------------------------------------------------------ sweep-n


def sweep_n_job(spec: ExperimentSpec, seed: int, N: int):
    pc = spec.problem
    cfg = ProblemConfig(K=pc.K, d=pc.d, N=N, m=pc.m, tau=pc.tau, seed=seed)
    dictionary = gen_dictionary(cfg)
    ctx = build_context(dictionary, pc.tau)
    prompts = _prompts(dictionary, spec.lambda_dist, pc.tau, seed, spec.inference.n_prompts, "prompt-sweep-n", None)
    gaps = []
    for p in prompts:
        y = p.labels_prompt
        gaps.append(inference.gap_best(inference.y_star(ctx, y), inference.y_best(ctx, y)))
    return float(np.mean(gaps))


def run_sweep_n(spec: ExperimentSpec, w: _Writer):
    grid = list(spec.sweep.n_values)
    jobs = [(s, n) for s in spec.sweep.seeds for n in grid]

    def job(args):
        try:
            return sweep_n_job(spec, *args)
        except IclLabError as exc:
            return exc

    results = _parallel_map(job, jobs)
    rows, per_seed = [], {}
    for (s, n), r in zip(jobs, results):
        if isinstance(r, Exception):
            w.manifest.failures.append(f"seed={s} N={n}: {r}")
            continue
        rows.append((s, n, r))
        per_seed.setdefault(s, []).append((n, r))
    w.text("gap_vs_n.csv", csv_text(("seed", "N", "gap_best"), rows))
    w.text(
        "gap_vs_n.svg",
        line_plot(
            {f"seed {s}": ([p[0] for p in pts], [p[1] for p in pts]) for s, pts in per_seed.items()},
            title=f"gap to noise-matched ridge, m={spec.problem.m}", xlabel="N", ylabel="gap_best",
        ),
    )
    argmins = {s: min(pts, key=lambda p: p[1])[0] for s, pts in per_seed.items()}
    summary = {"argmin_N": argmins, "m": spec.problem.m}
    w.json("sweep_n.json", summary)
    return summary


# ------------------------------------------------------------------------ sweep-h


def default_h_values(N: int) -> tuple:
    return tuple(sorted({1, max(1, N // 2), N, 2 * N}))


def sweep_h_job(spec: ExperimentSpec, seed: int, H: int):
    pc = replace(spec.problem, seed=seed)
    dictionary = gen_dictionary(pc)
    ctx = build_context(dictionary, pc.tau)
    params0 = init_params(H, pc.d, pc.K, spec.model.beta, seed)
    rep = train(params0, ctx, dictionary, spec.trainer)
    return rep.delta0, rep.deltas[-1]


def run_sweep_h(spec: ExperimentSpec, w: _Writer):
    hs = list(spec.sweep.h_values) or list(default_h_values(spec.problem.N))
    jobs = [(s, h) for s in spec.sweep.seeds for h in hs]

    def job(args):
        try:
            return sweep_h_job(spec, *args)
        except IclLabError as exc:
            return exc

    results = _parallel_map(job, jobs)
    rows, per_seed = [], {}
    for (s, h), r in zip(jobs, results):
        if isinstance(r, Exception):
            w.manifest.failures.append(f"seed={s} H={h}: {r}")
            continue
        d0, dT = r
        rows.append((s, h, d0, dT, dT / d0 if d0 > 0 else 0.0))
        per_seed.setdefault(s, []).append((h, dT / d0 if d0 > 0 else 0.0))
    w.text("final_delta_vs_h.csv", csv_text(("seed", "H", "delta0", "final_delta", "ratio"), rows))
    w.text(
        "final_delta_vs_h.svg",
        line_plot(
            {f"seed {s}": ([p[0] for p in pts], [p[1] for p in pts]) for s, pts in per_seed.items()},
            title=f"final loss gap after T={spec.trainer.T}, N={spec.problem.N}",
            xlabel="H", ylabel="delta(T) / delta(0)", logy=True,
        ),
    )
    summary = {"h_values": hs, "T": spec.trainer.T}
    w.json("sweep_h.json", summary)
    return summary


# ------------------------------------------------------------------------- verify


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def fd_gradients(params: Params, dictionary, ctx, coords, h=1e-5):
    """Central differences of the loss gap at the given (block, index) coordinates."""
    out = []
    for block, idx in coords:
        vals = []
        for sign in (1, -1):
            q, wv = params.q.copy(), params.w.copy()
            (q if block == "q" else wv)[idx] += sign * h
            vals.append(evaluate(Params(q, wv), dictionary, ctx, grads=False).gap)
        out.append((vals[0] - vals[1]) / (2 * h))
    return np.array(out)


def verify_suite(spec: ExperimentSpec, max_fd_coords: int = 400) -> list[Check]:
    pc = spec.problem
    dictionary = gen_dictionary(pc)
    ctx = build_context(dictionary, pc.tau)
    H = spec.model.H
    checks = []

    def add(name, value, threshold, passed=None):
        ok = value <= threshold if passed is None else passed
        checks.append(Check(name, bool(ok), float(value), float(threshold)))

    add("unit-norm tokens", np.abs(np.linalg.norm(dictionary.tokens, axis=0) - 1).max(), 1e-12)
    diff = np.abs(dictionary.tokens[:, :, None] - dictionary.tokens[:, None, :]).max(axis=0)
    np.fill_diagonal(diff, np.inf)
    add("distinct tokens", -diff.min(), -1e-12)
    add("row-distinct prompt block", 0.0, 0.0, passed=check_row_distinct(dictionary))
    g = ctx.z.T @ ctx.z + ctx.m * ctx.tau * np.eye(ctx.N)
    add("zbar squared equals gram", np.linalg.norm(ctx.zbar @ ctx.zbar - g), 1e-8)
    add("zbar psd", -np.linalg.eigvalsh(ctx.zbar).min(), 1e-10)
    add("zbar symmetric", np.abs(ctx.zbar - ctx.zbar.T).max(), 1e-12)
    add("smw identity", inference.verify_smw(ctx) / (1 + np.linalg.norm(ctx.a)), 1e-8)

    rng = stream(pc.seed, "verify")
    worst = np.inf
    for _ in range(20):
        p = Params(rng.standard_normal((H, pc.d, pc.d)), rng.standard_normal((H, pc.K)))
        worst = min(worst, evaluate(p, dictionary, ctx, grads=False).loss - ctx.lstar)
    add("loss >= lstar", -worst, 0.0)

    p = Params(rng.standard_normal((H, pc.d, pc.d)), rng.standard_normal((H, pc.K)))
    ev = evaluate(p, dictionary, ctx)
    coords = [("q", i) for i in np.ndindex(p.q.shape)] + [("w", i) for i in np.ndindex(p.w.shape)]
    if len(coords) > max_fd_coords:
        pick = rng.choice(len(coords), size=max_fd_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    analytic = np.array([(ev.grad_q if b == "q" else ev.grad_w)[i] for b, i in coords])
    add("gradient vs finite differences", _rel(analytic, fd_gradients(p, dictionary, ctx, coords)), 1e-6)

    est, se = mc_loss(p, dictionary, spec.lambda_dist, pc.tau, 100_000, pc.seed)
    add("closed form vs monte carlo (stderr units)", abs(est - ev.loss) / se, 3.0)

    prompt = sample_prompt(dictionary, spec.lambda_dist, pc.tau, sub_seed(pc.seed, "verify-prompt"))
    res = inference.evaluate(p, dictionary, ctx, prompt)
    y = prompt.labels_prompt
    add("y_star prefix", np.abs(res.y_star[: pc.N] - y).max(), 0.0)
    add("y_best prefix", np.abs(res.y_best[: pc.N] - y).max(), 0.0)
    add("y_star two paths", np.abs(inference.y_star(ctx, y) - inference.y_star_ridge(ctx, y)).max(), 1e-10)
    for name, reg in (("m tau", ctx.m * ctx.tau), ("N tau", ctx.N * ctx.tau)):
        lam = inference.ridge(ctx.z, y, reg)
        base = inference.ridge_objective(ctx.z, y, lam, reg)
        u = rng.standard_normal((1000, ctx.m))
        u *= 1e-3 / np.linalg.norm(u, axis=1, keepdims=True)
        worse = min(inference.ridge_objective(ctx.z, y, lam + du, reg) for du in u) - base
        add(f"ridge optimality ({name})", -worse, 1e-15)

    gamma = 1.7
    eta_q = 1e-3
    q_a, al = to_reparam(p, gamma)
    stepped = gd_step(p, ev.grad_q, ev.grad_w, eta_q, gamma**2 * eta_q)
    uni = from_reparam(q_a - eta_q * ev.grad_q, al - eta_q * gamma * ev.grad_w, gamma)
    add("reparameterised step equivalence", max(np.abs(stepped.q - uni.q).max(), np.abs(stepped.w - uni.w).max()), 1e-10)

    params0 = init_params(H, pc.d, pc.K, spec.model.beta, pc.seed)
    try:
        rep = train(params0, ctx, dictionary, spec.trainer)
    except NumericError as exc:
        add(f"training run ({exc})", 1.0, 0.0)
        return checks
    if rep.certification == "theory":
        add("rate certification", 0.0, 0.0, passed=rep.certified)
        add("spectral floor >= zeta0/2", -min(rep.zeta_trace), -rep.zeta0 / 2)
        add("alpha bound", max(rep.alpha_norm) / rep.alpha_bound, 1.0)
        add("q drift bound", max(rep.q_drift) / rep.q_drift_bound, 1.0)
    add("q-gradient bound", max(v / b if b > 0 else (0.0 if v == 0 else np.inf) for v, b in rep.q_grad_check), 1 + 1e-9)
    add("w-gradient bound", max(v / b if b > 0 else (0.0 if v == 0 else np.inf) for v, b in rep.w_grad_check), 1 + 1e-9)
    add("pl inequality", max(r - l for l, r in zip(rep.pl_lhs, rep.pl_rhs)) / max(max(rep.pl_rhs), 1e-300), 1e-9)
    return checks


def run_verify(spec: ExperimentSpec, w: _Writer):
    checks = verify_suite(spec)
    w.text("verify.csv", csv_text(("check", "passed", "value", "threshold"),
                                  ((c.name, c.passed, c.value, c.threshold) for c in checks)))
    for c in checks:
        if not c.passed:
            w.manifest.failures.append(f"{c.name}: {c.value!r} > {c.threshold!r}")
    return {"checks": len(checks), "passed": sum(c.passed for c in checks)}


RUNNERS = {
    "train-curve": run_train_curve,
    "sweep-n": run_sweep_n,
    "sweep-h": run_sweep_h,
    "verify": run_verify,
}


def run(spec: ExperimentSpec, dump_attention: bool = False) -> RunManifest:
    seeds = [spec.problem.seed] if spec.kind in ("train-curve", "verify") else list(spec.sweep.seeds)
    manifest = RunManifest(kind=spec.kind, spec_hash=spec_hash(spec), seeds=seeds)
    w = _Writer(spec.out_dir, manifest)
    w.text("spec.cfg", serialize(spec))
    try:
        if spec.kind == "train-curve":
            manifest.summary = run_train_curve(spec, w, dump_attention=dump_attention)
        else:
            manifest.summary = RUNNERS[spec.kind](spec, w)
    except IclLabError as exc:
        manifest.failures.append(f"{type(exc).__name__}: {exc}")
        w.finish()
        raise
    w.finish()
    return manifest


def with_trainer(spec: ExperimentSpec, **overrides) -> ExperimentSpec:
    """Copy of ``spec`` with some trainer fields replaced (used by CLI flags)."""
    if not overrides:
        return spec
    return replace(spec, trainer=TrainerConfig(**{**spec.trainer.__dict__, **overrides}))
