"""Regenerate the frozen files under fixtures/.

Byte fixtures (dictionaries, prompt, params digest) come from the package's
own serialiser. Every number in oracle_values.json comes from tests/oracle.py,
which does not import the package. Run from the repository root:

    python3 scripts/freeze_fixtures.py
"""

import hashlib
import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import oracle  # noqa: E402

from icl_lab import serialization  # noqa: E402
from icl_lab.model import init_params  # noqa: E402
from icl_lab.problem import LambdaDist, ProblemConfig, gen_dictionary, sample_prompt  # noqa: E402

FIX = ROOT / "fixtures"

SMALL = dict(K=3, d=2, N=2, m=2, tau=0.5, seed=1)
DESK = dict(K=8, d=4, N=4, m=2, tau=0.1, seed=123, H=6, beta=1.0)
STEP = dict(H=2, eta_q=0.1, eta_w=0.05, seed=5)


def main():
    FIX.mkdir(exist_ok=True)
    small = gen_dictionary(ProblemConfig(**SMALL))
    serialization.save(small, FIX / "dictionary_small.json")
    prompt = sample_prompt(small, LambdaDist(), 0.01, seed=0)
    serialization.save(prompt, FIX / "prompt_small.json")
    desk_cfg = {k: DESK[k] for k in ("K", "d", "N", "m", "tau", "seed")}
    serialization.save(gen_dictionary(ProblemConfig(**desk_cfg)), FIX / "dictionary_desk.json")

    big = init_params(64, 100, 200, 1.0, seed=7)
    text = serialization.dumps(big)
    (FIX / "params_h64_d100_k200_seed7.json").write_text(json.dumps({
        "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
        "q_shape": list(big.q.shape),
        "w_shape": list(big.w.shape),
        "q_head": big.q.reshape(-1)[:8].tolist(),
        "q_tail": big.q.reshape(-1)[-8:].tolist(),
    }, indent=1) + "\n")

    # ---- oracle values, independent of the package
    tokens, zhat = oracle.dictionary(SMALL["K"], SMALL["d"], SMALL["m"], SMALL["seed"])
    zbar, A, lstar = oracle.context(zhat, SMALL["N"], SMALL["tau"])
    rng = oracle.stream(STEP["seed"], "oracle-step")
    q0 = rng.standard_normal((STEP["H"], SMALL["d"], SMALL["d"]))
    w0 = rng.standard_normal((STEP["H"], SMALL["K"]))
    gq, gw = oracle.gradients(q0, w0, tokens, zhat, SMALL["N"], SMALL["tau"])
    small_vals = {
        "zbar": zbar.tolist(), "a": A.tolist(), "lstar": lstar,
        "lstar_without_query_noise": oracle.lstar_without_query_noise(zhat, SMALL["N"], SMALL["tau"]),
        "step": {**STEP, "q0": q0.tolist(), "w0": w0.tolist(),
                 "q1": (q0 - STEP["eta_q"] * gq).tolist(), "w1": (w0 - STEP["eta_w"] * gw).tolist(),
                 "loss0": oracle.expected_loss(oracle.ahat(q0, w0, tokens, SMALL["N"]), zhat, SMALL["N"], SMALL["tau"])},
    }

    K, d, N, m, tau, H = (DESK[k] for k in ("K", "d", "N", "m", "tau", "H"))
    tokens, zhat = oracle.dictionary(K, d, m, DESK["seed"])
    zbar, A, lstar = oracle.context(zhat, N, tau)
    q = oracle.init_q(H, d, DESK["beta"], DESK["seed"])
    zeta = oracle.zeta0(q, tokens, zhat, N, tau)
    delta0 = oracle.expected_loss(np.zeros((N, K)), zhat, N, tau) - lstar
    zn = np.linalg.norm(zbar, 2)
    fbar = max(np.linalg.norm(zbar[:, j]) for j in range(N))
    gamma = oracle.gamma_bound(zn, H, fbar, K, delta0, zeta)
    lt = oracle.smoothness_tight(zn, np.linalg.norm(A, 2), fbar, gamma, zeta, H, K, N, delta0)
    ls = oracle.smoothness_simplified(zn, np.linalg.norm(zhat[:, :N].T @ zhat, 2), m, tau, gamma, zeta, H, K, N, delta0)
    eta_q = 1 / lt
    eta_w = gamma**2 * eta_q
    z_norm = np.linalg.norm(zhat[:, :N], 2)
    desk_vals = {
        **DESK, "lstar": lstar, "zeta0": zeta, "delta0": delta0, "gamma": gamma,
        "smoothness_tight": lt, "smoothness_simplified": ls, "eta_q": eta_q, "eta_w": eta_w,
        "iteration_complexity": oracle.iteration_count(3.0, delta0, z_norm, m, tau, 1e-4, 0.05, eta_w, zeta, K, N),
        "label_norm_bound": oracle.y_norm_bound(3.0, z_norm, tau, N, 0.05),
        "B": 3.0, "eps": 1e-4, "delta_prob": 0.05,
    }
    doc = {"small": small_vals, "desk": desk_vals}
    (FIX / "oracle_values.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(json.dumps({k: v for k, v in desk_vals.items()}, indent=1))


if __name__ == "__main__":
    main()
