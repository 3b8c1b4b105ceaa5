"""Command line entry point: ``icl-lab <subcommand> ...``.

Exit codes: 0 success, 1 invariant failure, 2 configuration error,
3 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from . import __version__, inference, serialization
from .config import ExperimentSpec, load_spec
from .errors import ConfigError, IclLabError
from .experiments import attention_csv, csv_text, run, with_trainer
from .loss import build_context, evaluate
from .model import Params, init_params
from .problem import Dictionary, gen_dictionary, sample_prompt
from .trainer import LR_MODES, VARIANTS

log = logging.getLogger("icl_lab")


def _spec(args, kind) -> ExperimentSpec:
    spec = load_spec(args.config) if args.config else ExperimentSpec(kind=kind)
    spec = replace(spec, kind=kind)
    if getattr(args, "out", None):
        spec = replace(spec, out_dir=args.out)
    overrides = {}
    if getattr(args, "lr_mode", None):
        overrides["lr_mode"] = args.lr_mode
    if getattr(args, "variant", None):
        overrides["smoothness_variant"] = args.variant
    if getattr(args, "T", None) is not None:
        overrides["T"] = args.T
    return with_trainer(spec, **overrides)


def _experiment(kind):
    def handler(args):
        spec = _spec(args, kind)
        manifest = run(spec, dump_attention=getattr(args, "dump_attention", False))
        print(json.dumps({"out_dir": spec.out_dir, "ok": manifest.ok, "failures": manifest.failures,
                          "files": sorted(manifest.files)}, indent=1))
        return 0 if manifest.ok else 1

    return handler


def _load_model(path) -> tuple[Params, Dictionary, float]:
    obj = serialization.load(path)
    if not isinstance(obj, tuple):
        raise ConfigError(f"{path} is not a model document")
    return obj


def cmd_infer(args):
    params, dictionary, tau = _load_model(args.model)
    prompt = serialization.load(args.prompt)
    if prompt.labels_all.shape != (dictionary.K,) or prompt.N != dictionary.N:
        raise ConfigError("prompt does not match the model's dictionary")
    ctx = build_context(dictionary, tau)
    res = inference.evaluate(params, dictionary, ctx, prompt)
    text = json.dumps(res.to_dict(), indent=1) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _model_or_init(args):
    if args.model:
        return _load_model(args.model)
    spec = load_spec(args.config) if args.config else ExperimentSpec()
    pc = spec.problem
    dictionary = gen_dictionary(pc)
    return init_params(spec.model.H, pc.d, pc.K, spec.model.beta, pc.seed), dictionary, pc.tau


def cmd_loss_report(args):
    params, dictionary, tau = _model_or_init(args)
    ctx = build_context(dictionary, tau)
    ev = evaluate(params, dictionary, ctx)
    sys.stdout.write(csv_text(
        ("loss", "lstar", "delta", "grad_q_norm", "grad_w_norm"),
        [(ev.loss, ctx.lstar, ev.gap, float(np.linalg.norm(ev.grad_q)), float(np.linalg.norm(ev.grad_w)))],
    ))
    if args.dump_attention:
        with open(args.dump_attention, "w", encoding="utf-8") as fh:
            fh.write(attention_csv(params, dictionary))
    return 0


def cmd_sample_prompt(args):
    spec = load_spec(args.config) if args.config else ExperimentSpec()
    if args.model:
        _, dictionary, tau = _load_model(args.model)
    else:
        dictionary, tau = gen_dictionary(spec.problem), spec.problem.tau
    dist = spec.ood if args.ood else spec.lambda_dist
    clip = spec.inference.B if args.clip else None
    prompt = sample_prompt(dictionary, dist, tau, args.seed, clip_norm=clip)
    text = serialization.dumps(prompt)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="icl-lab", description="Softmax-attention in-context regression workbench.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment(name, help_text, train_flags=True):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="experiment config file")
        sp.add_argument("--out", help="output directory (overrides experiment.out_dir)")
        if train_flags:
            sp.add_argument("--lr-mode", choices=LR_MODES)
            sp.add_argument("--variant", choices=VARIANTS, help="smoothness constant for auto-theory rates")
            sp.add_argument("--T", type=int, help="number of GD steps")
        sp.set_defaults(func=_experiment(name.replace("train", "train-curve") if name == "train" else name))
        return sp

    tr = experiment("train", "train and write trajectory.csv, report.json, loss_curve.svg")
    tr.add_argument("--dump-attention", action="store_true", help="also write final C_k matrices to attention.csv")
    experiment("sweep-n", "gap to the noise-matched ridge predictor versus N", train_flags=False)
    experiment("sweep-h", "final loss gap versus head count")
    experiment("verify", "run the invariant suite; exit 1 on any failure")

    sp = sub.add_parser("infer", help="evaluate a trained model on one prompt")
    sp.add_argument("--model", required=True)
    sp.add_argument("--prompt", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("loss-report", help="print loss, lstar, delta and gradient norms as CSV")
    sp.add_argument("--config")
    sp.add_argument("--model")
    sp.add_argument("--dump-attention", metavar="FILE", help="write C_k matrices as CSV")
    sp.set_defaults(func=cmd_loss_report)

    sp = sub.add_parser("sample-prompt", help="draw a prompt and write it as JSON")
    sp.add_argument("--config")
    sp.add_argument("--model", help="take the dictionary from a model file")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--ood", action="store_true", help="use the [ood] distribution")
    sp.add_argument("--clip", action="store_true", help="rescale lambda onto the ball of radius inference.B")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sample_prompt)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except IclLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
