"""Command-line entry point: training, evaluation, analysis, plot-data export.

Commands: train, eval, analyze {entropy|gradmc|membrane|isometry|balance},
plotdata. Every run writes a resolved-config snapshot next to its outputs so
it can be reproduced from the snapshot plus seed alone. Exit codes: 0 on
success, 2 for usage/config errors, 3 for runtime failures. The SPIKEQ_RUNS
environment variable sets the default output root.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import analysis, neuron, rl
from . import network as net_mod
from .config import MODELS, ConfigError, RunConfig, load_config, snapshot
from .encoding import bernoulli_encode
from .env import make_env
from .neuron import SurrogateSpec
from .tensor import Rng


def output_root() -> str:
    return os.environ.get("SPIKEQ_RUNS", "runs")


def _write_csv(path: str, header: list[str], rows) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


# --- train -------------------------------------------------------------------


def _run_one_seed(cfg: RunConfig, seed: int, out_dir: str) -> tuple[int, str, float, float]:
    cfg_seeded = RunConfig(**{**cfg.__dict__, "seed": seed, "out_dir": out_dir})
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.ini"), "w") as fh:
        fh.write(snapshot(cfg_seeded))
    rng = Rng(seed)
    env = cfg_seeded.make_env()
    net = cfg_seeded.build_network(rng.stream("init"))
    best, metrics = rl.train(env, net, cfg_seeded.agent_config(), rng, out_dir=out_dir)
    mean, std = rl.evaluate(
        best, cfg_seeded.make_env(), cfg_seeded.agent_config(), rng.stream("final-eval")
    )
    with open(os.path.join(out_dir, "eval.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mean", "std", "episodes"])
        writer.writerow([mean, std, 10])
    return seed, out_dir, mean, std

def _parse_seed_range(text: str) -> list[int]:
    if ".." in text:
        lo, _, hi = text.partition("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",")]


def cmd_train(args) -> int:
    overrides = list(args.set or [])
    if args.env:
        overrides.append(f"run.env={args.env}")
    if args.model:
        overrides.append(f"run.model={args.model}")
    if args.steps is not None:
        overrides.append(f"agent.total_steps={args.steps}")
    if args.encoder:
        overrides.append(f"agent.encoder={args.encoder}")
    cfg = load_config(args.config, overrides)
    if args.trainable_threshold:
        if cfg.model == "dsqn":
            cfg.trainable_v_th_p = True
        else:
            cfg.trainable_v_th_p = True
            cfg.trainable_v_th_n = True
    seeds = _parse_seed_range(args.seeds) if args.seeds else [args.seed if args.seed is not None else cfg.seed]
    root = args.out or cfg.out_dir or output_root()

    def out_for(seed: int) -> str:
        if len(seeds) == 1 and (args.out or cfg.out_dir):
            return root
        return os.path.join(root, f"{cfg.env}-{cfg.model}-s{seed}")

    results = []
    if len(seeds) == 1:
        results.append(_run_one_seed(cfg, seeds[0], out_for(seeds[0])))
    else:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            futures = [pool.submit(_run_one_seed, cfg, s, out_for(s)) for s in seeds]
            results = [f.result() for f in futures]
    for seed, out_dir, mean, std in results:
        print(f"seed {seed}: eval {mean:.3f} +/- {std:.3f}  ({out_dir})")
    return 0


# --- eval --------------------------------------------------------------------


def cmd_eval(args) -> int:
    if not os.path.exists(args.ckpt):
        raise ConfigError(f"checkpoint not found: {args.ckpt}")
    net = net_mod.load_checkpoint(args.ckpt)
    overrides = []
    if args.env:
        overrides.append(f"run.env={args.env}")
    cfg = load_config(args.config, overrides)
    rng = Rng(args.seed)
    agent_cfg = cfg.agent_config()
    returns = rl.evaluate_returns(net, cfg.make_env(), agent_cfg, rng, episodes=args.episodes)
    arr = np.asarray(returns, dtype=np.float64)
    mean, std = float(arr.mean()), float(arr.std())
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.ckpt)), "eval.csv")
    _write_csv(out, ["episode", "return"], list(enumerate(returns, 1)))
    print(f"{mean:.4f} +/- {std:.4f} over {args.episodes} episodes ({out})")
    return 0


# --- analyze ----------------------------------------------------------------


def _parse_sweep(text: str) -> np.ndarray:
    start, stop, step = (float(x) for x in text.split(":"))
    count = int(round((stop - start) / step)) + 1
    return start + step * np.arange(count)


def cmd_analyze_entropy(args) -> int:
    rates = _parse_sweep(args.r)
    rows = []
    worst = 0.0
    for r in rates:
        hb = analysis.binary_rate_entropy(r)
        ht = analysis.ternary_rate_entropy(r)
        gain = ht - hb
        worst = max(worst, abs(gain - r))
        rows.append([r, hb, ht, gain])
    out = args.out or "entropy.csv"
    _write_csv(out, ["rate", "h_binary", "h_ternary", "gain"], rows)
    print(f"entropy: {len(rows)} rates, max |gain - r| = {worst:.3e} ({out})")
    return 0


def cmd_analyze_gradmc(args) -> int:
    cfg = RunConfig(model=args.model).validate()
    kind = cfg.model_kind()
    g = analysis.GaussianSpec(args.m0, args.sigma)
    rng = Rng(args.seed).stream("gradmc")
    rows = []
    summary = []
    for surrogate in args.surrogates.split(","):
        spec = SurrogateSpec(surrogate.strip(), args.alpha, args.k)
        expected = analysis.expected_surrogate_grad(g, spec, kind, args.v_th_p, args.v_th_n)
        params = neuron.NeuronParams(v_th_p=args.v_th_p,
                                     v_th_n=args.v_th_n if not kind.is_symmetric else args.v_th_p)
        draws = rng.gen.normal(g.m0, g.sigma, size=args.samples)
        values = neuron.surrogate_grad_m(draws, params, kind, spec)
        mc = float(values.mean())
        se = float(values.std() / np.sqrt(args.samples))
        z = (expected - mc) / se if se else 0.0
        rows.append([surrogate, expected, mc, se, z])
        summary.append(f"{surrogate}: quad={expected:.6f} mc={mc:.6f} z={z:+.2f}")
    out = args.out or "gradmc.csv"
    _write_csv(out, ["surrogate", "expected_quad", "expected_mc", "mc_stderr", "z"], rows)
    print("gradmc: " + "; ".join(summary) + f" ({out})")
    return 0


def cmd_analyze_membrane(args) -> int:
    spec = analysis.balanced_input_spec(args.tau, args.inputs, args.v_reset)
    rng = Rng(args.seed).stream("membrane")
    horizon = args.horizon if args.horizon is not None else 2.0 * args.tau
    times = [args.tau / 2.0, args.tau, horizon]
    result = analysis.ou_simulate(spec, args.trials, horizon, rng, sample_times=times)
    rows = []
    for i, t in enumerate(result.times):
        samples = result.samples[i]
        rows.append([
            t,
            float(samples.mean()),
            float(spec.mean_trajectory(t)),
            float(samples.var()),
            float(spec.variance_trajectory(t)),
        ])
    ks, ks_pass = analysis.gaussianity_test(result.samples[-1])
    out = args.out or "membrane.csv"
    _write_csv(out, ["time", "mean_sim", "mean_theory", "var_sim", "var_theory"], rows)
    final = rows[-1]
    var_err = abs(final[3] - final[4]) / final[4] if final[4] else 0.0
    print(
        f"membrane: var rel err at t={final[0]:g}: {var_err:.3%}, "
        f"KS={ks:.4f} ({'gaussian' if ks_pass else 'NOT gaussian'}) ({out})"
    )
    return 0


def cmd_analyze_isometry(args) -> int:
    net = net_mod.load_checkpoint(args.ckpt)
    if not net.model.is_ternary:
        raise ConfigError("isometry analysis expects a ternary network checkpoint")
    rng = Rng(args.seed).stream("isometry")
    p = np.full(net.input_shape, args.rate, dtype=np.float64)
    spikes = np.stack(
        [bernoulli_encode(p, args.window, rng.stream(f"item{i}")) for i in range(args.batch)]
    )
    spec = SurrogateSpec(neuron.STE)
    rows = []
    worst = 0.0
    for li in analysis.isometry_measure(net, spikes, spec):
        phi_theory = 1.0 - li.rate
        varphi_theory = li.rate - li.rate**2
        worst = max(worst, abs(li.phi - phi_theory), abs(li.varphi - varphi_theory))
        rows.append([li.layer, li.rate, li.phi, li.varphi, phi_theory, varphi_theory])
    out = args.out or "isometry.csv"
    _write_csv(out, ["layer", "r", "phi", "varphi", "phi_theory", "varphi_theory"], rows)
    print(f"isometry: {len(rows)} layers, max |measured - theory| = {worst:.3e} ({out})")
    return 0


def cmd_analyze_balance(args) -> int:
    net = net_mod.load_checkpoint(args.ckpt)
    cfg = load_config(args.config, [f"run.env={args.env}"] if args.env else [])
    agent_cfg = cfg.agent_config()
    env = cfg.make_env()
    rng = Rng(args.seed)
    env_rng, enc_rng, act_rng = rng.stream("env"), rng.stream("encoder"), rng.stream("exploration")
    rows = []
    from .encoding import ENCODERS, normalize

    encoder = ENCODERS[agent_cfg.encoder]
    for episode in range(1, args.episodes + 1):
        obs = env.reset(env_rng)
        pos = neg = 0
        terminal = False
        while not terminal:
            spikes = encoder(normalize(obs), agent_cfg.window, enc_rng)
            q, tape = net_mod.forward(spikes, net)
            p, n, _ = analysis.spike_balance(
                tape, args.layer, args.channel, args.row, args.col, args.kh, args.kw
            )
            pos += p
            neg += n
            action = rl.select_action(q, agent_cfg.eval_epsilon, act_rng)
            result = env.step(action)
            obs = result.next_obs
            terminal = result.terminal
        ratio = pos / (pos + neg) if pos + neg else ""
        rows.append([episode, pos, neg, ratio])
    out = args.out or "balance.csv"
    _write_csv(out, ["episode", "pos", "neg", "ratio"], rows)
    total_pos = sum(r[1] for r in rows)
    total_neg = sum(r[2] for r in rows)
    overall = total_pos / (total_pos + total_neg) if total_pos + total_neg else float("nan")
    print(
        f"balance: layer {args.layer} window {args.kh}x{args.kw}: "
        f"pos={total_pos} neg={total_neg} ratio={overall:.3f} ({out})"
    )
    return 0


# --- plotdata ----------------------------------------------------------------

SMOOTH_WINDOW = 100  # episodes in the learning-curve moving average


def _moving_average(values: list[float], window: int) -> list[float]:
    out = []
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(i + 1, window))
    return out


def cmd_plotdata(args) -> int:
    metrics_path = os.path.join(args.run_dir, "metrics.jsonl")
    if not os.path.exists(metrics_path):
        raise ConfigError(f"no metrics.jsonl in {args.run_dir}")
    records = []
    with open(metrics_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    returns = [r["return"] for r in records]
    smooth = _moving_average(returns, SMOOTH_WINDOW)
    _write_csv(
        os.path.join(args.run_dir, "learning_curve.csv"),
        ["episode", "step", "return", "return_smooth"],
        [
            [r["episode"], r["step"], r["return"], s]
            for r, s in zip(records, smooth)
        ],
    )
    _write_csv(
        os.path.join(args.run_dir, "grad_norm.csv"),
        ["step", "grad_norm_avg"],
        [
            [r["step"], r["grad_norm_avg"]]
            for r in records
            if r["grad_norm_avg"] is not None
        ],
    )
    n_layers = len(records[0]["v_th_p_by_layer"]) if records else 0
    for key, name in (("v_th_p_by_layer", "thresholds_pos.csv"),
                      ("v_th_n_by_layer", "thresholds_neg.csv")):
        _write_csv(
            os.path.join(args.run_dir, name),
            ["step"] + [f"layer{i}" for i in range(n_layers)],
            [[r["step"], *r[key]] for r in records],
        )
    print(f"plotdata: {len(records)} episodes -> learning_curve.csv, grad_norm.csv, thresholds_{{pos,neg}}.csv")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikeq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train an agent")
    p_train.add_argument("--config", default=None, help="INI config file")
    p_train.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                         help="override a config value (repeatable)")
    p_train.add_argument("--env", choices=["catch", "gridworld"], default=None)
    p_train.add_argument("--model", choices=list(MODELS), default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--seeds", default=None, metavar="A..B",
                         help="run several seeds in parallel worker threads")
    p_train.add_argument("--steps", type=int, default=None, help="total environment steps")
    p_train.add_argument("--encoder", choices=["bernoulli", "poisson"], default=None)
    p_train.add_argument("--trainable-threshold", action="store_true",
                         help="make the firing threshold(s) trainable (ablation modes)")
    p_train.add_argument("--out", default=None, help="output directory (or root for --seeds)")
    p_train.add_argument("--workers", type=int, default=2)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--env", choices=["catch", "gridworld"], default=None)
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--episodes", type=int, default=10)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", default=None, help="eval.csv path")
    p_eval.set_defaults(func=cmd_eval)

    p_an = sub.add_parser("analyze", help="numerical analyses")
    an_sub = p_an.add_subparsers(dest="analysis", required=True)

    a_ent = an_sub.add_parser("entropy", help="binary vs ternary code entropy sweep")
    a_ent.add_argument("--r", default="0.05:0.5:0.05", metavar="START:STOP:STEP")
    a_ent.add_argument("--out", default=None)
    a_ent.set_defaults(func=cmd_analyze_entropy)

    a_gm = an_sub.add_parser("gradmc", help="expected surrogate gradient: quadrature vs Monte Carlo")
    a_gm.add_argument("--model", choices=list(MODELS), default="datsqn")
    a_gm.add_argument("--m0", type=float, default=0.0)
    a_gm.add_argument("--sigma", type=float, default=1.0)
    a_gm.add_argument("--v-th-p", type=float, default=1.0)
    a_gm.add_argument("--v-th-n", type=float, default=2.0)
    a_gm.add_argument("--surrogates", default="atan,ste,sigmoid")
    a_gm.add_argument("--alpha", type=float, default=2.0)
    a_gm.add_argument("--k", type=float, default=25.0)
    a_gm.add_argument("--samples", type=int, default=1_000_000)
    a_gm.add_argument("--seed", type=int, default=0)
    a_gm.add_argument("--out", default=None)
    a_gm.set_defaults(func=cmd_analyze_gradmc)

    a_mb = an_sub.add_parser("membrane", help="subthreshold membrane statistics vs closed forms")
    a_mb.add_argument("--tau", type=float, default=20.0)
    a_mb.add_argument("--trials", type=int, default=100_000)
    a_mb.add_argument("--inputs", type=int, default=256)
    a_mb.add_argument("--v-reset", type=float, default=-1.0)
    a_mb.add_argument("--horizon", type=float, default=None, help="defaults to 2*tau")
    a_mb.add_argument("--seed", type=int, default=0)
    a_mb.add_argument("--out", default=None)
    a_mb.set_defaults(func=cmd_analyze_membrane)

    a_iso = an_sub.add_parser("isometry", help="spike-Jacobian isometry per layer")
    a_iso.add_argument("--ckpt", required=True)
    a_iso.add_argument("--batch", type=int, default=16)
    a_iso.add_argument("--window", type=int, default=20)
    a_iso.add_argument("--rate", type=float, default=0.5, help="input spike rate")
    a_iso.add_argument("--seed", type=int, default=0)
    a_iso.add_argument("--out", default=None)
    a_iso.set_defaults(func=cmd_analyze_isometry)

    a_bal = an_sub.add_parser("balance", help="excitatory/inhibitory spike counts in a receptive field")
    a_bal.add_argument("--ckpt", required=True)
    a_bal.add_argument("--env", choices=["catch", "gridworld"], default=None)
    a_bal.add_argument("--config", default=None)
    a_bal.add_argument("--layer", type=int, default=0)
    a_bal.add_argument("--channel", type=int, default=0)
    a_bal.add_argument("--row", type=int, default=0)
    a_bal.add_argument("--col", type=int, default=0)
    a_bal.add_argument("--kh", type=int, default=4)
    a_bal.add_argument("--kw", type=int, default=4)
    a_bal.add_argument("--episodes", type=int, default=1)
    a_bal.add_argument("--seed", type=int, default=0)
    a_bal.add_argument("--out", default=None)
    a_bal.set_defaults(func=cmd_analyze_balance)

    p_plot = sub.add_parser("plotdata", help="export tidy CSVs from a run's metrics log")
    p_plot.add_argument("run_dir")
    p_plot.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:  # pragma: no cover
        return 3
    except Exception as exc:  # pragma: no cover
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
