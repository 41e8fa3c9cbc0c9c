"""Command-line entry points for every workflow.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from dataclasses import dataclass, fields as dc_fields

import numpy as np

from . import __version__
from .actions import InfeasibleActionError, Registry, default_registry
from .codec import CodecParams, CodecTrainConfig, beat_windows, train_codec
from .diffusion import GaussianTestBed, VerifyBudget, verify_propositions
from .ecg_ode import Waveform, healthy_params
from .pipeline import Bundle, ValidationError, canonical_json, run_ranking, run_simulation
from .rollout import (LEAD_MIX, ablation_battery, collect_transitions,
                      make_standard_corpus, probe_sigma_eta,
                      rollout as run_rollout, _model_predictor, jitter_params,
                      synth_recording)
from .world_model import TrainConfig, TransitionDataset, train_world_model


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass(frozen=True)
class RunConfig:
    """Strictly-parsed run configuration; unknown keys are rejected and all
    referenced paths must exist at load time."""

    registry: str | None = None
    codec: str | None = None
    world_model: str | None = None
    out_dir: str | None = None
    d: int = 16
    n_steps: int = 100
    k: int = 3
    lam: float = 0.6
    c: float = 0.25
    seeds: tuple[int, ...] = (0,)
    horizons: tuple[int, ...] = (1, 2, 5)
    port: int = 8787
    schema_version: int = 1


def load_run_config(path: str) -> RunConfig:
    with open(path) as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ValueError("run config must be a JSON object")
    known = {f.name for f in dc_fields(RunConfig)}
    unknown = set(obj) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key in ("seeds", "horizons"):
        if key in obj:
            obj[key] = tuple(obj[key])
    cfg = RunConfig(**obj)
    for key in ("registry", "codec", "world_model"):
        p = getattr(cfg, key)
        if p is not None and not os.path.exists(p):
            raise FileNotFoundError(f"config path {key}={p!r} does not exist")
    return cfg


def _load_registry(path: str | None) -> Registry:
    return Registry.load(path) if path else default_registry()


def _write_json(obj: dict, out: str | None) -> None:
    blob = canonical_json(obj)
    if out:
        with open(out, "wb") as fh:
            fh.write(blob)
    else:
        sys.stdout.buffer.write(blob + b"\n")


# -- subcommand implementations ----------------------------------------------


def cmd_gen_data(args) -> int:
    registry = _load_registry(args.registry)
    os.makedirs(args.out_dir, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    if args.kind == "recordings":
        from .actions import enumerate_actions, modulate
        actions = enumerate_actions(registry, registry.mask, [0.5, 1.0, 2.0])
        manifest = []
        for i in range(args.n):
            action = actions[int(rng.integers(len(actions)))]
            params = jitter_params(modulate(healthy_params(), action, registry), rng)
            w = synth_recording(params, beats=args.beats,
                                seed=int(rng.integers(1 << 31)))
            if args.format == "csv":
                name = f"rec_{i:04d}.csv"
                with open(os.path.join(args.out_dir, name), "w") as fh:
                    fh.write(w.to_csv())
            else:
                name = f"rec_{i:04d}.bin"
                w.save(os.path.join(args.out_dir, name))
            manifest.append({"file": name, "action": action.to_dict()})
        with open(os.path.join(args.out_dir, "manifest.json"), "w") as fh:
            json.dump({"seed": args.seed, "recordings": manifest}, fh, indent=2)
        print(f"wrote {args.n} recordings to {args.out_dir}")
    else:
        codec = CodecParams.load(args.codec)
        sigma = probe_sigma_eta(codec, registry, args.seed, args.sigma_eta_rel)
        dataset, _ = collect_transitions(codec, registry, args.seed,
                                         args.patients, args.steps, sigma)
        path = os.path.join(args.out_dir, "transitions.bin")
        dataset.save(path)
        print(f"wrote {len(dataset)} transitions to {path} (sigma_eta={sigma:.5f})")
    return 0


def cmd_train_codec(args) -> int:
    windows = []
    for path in sorted(glob.glob(os.path.join(args.data, "*.bin"))):
        windows.extend(beat_windows(Waveform.load(path), args.window))
    if not windows:
        raise ValueError(f"no beat windows extracted from {args.data}")
    cfg = CodecTrainConfig(d=args.d, hidden=tuple(args.hidden), window=args.window,
                           sample_rate=256.0, kl_weight=args.kl_weight,
                           lr=args.lr, epochs=args.epochs, seed=args.seed)
    codec = train_codec(np.asarray(windows), cfg)
    codec.save(args.out)
    final = codec.losses[-1]
    print(f"codec saved to {args.out} (mse={final['mse']:.6f}, kl={final['kl']:.6f})")
    return 0


def cmd_train_wm(args) -> int:
    registry = _load_registry(args.registry)
    codec = CodecParams.load(args.codec)
    dataset = TransitionDataset.load(args.transitions)
    cfg = TrainConfig(c=args.c, lr=args.lr, epochs=args.epochs, seed=args.seed,
                      n_steps=args.n_steps)
    model = train_world_model(dataset, codec, healthy_params(), registry, cfg,
                              lead_scale=LEAD_MIX[0],
                              checkpoint_dir=args.checkpoint_dir)
    model.save(args.out)
    final = model.log[-1]
    print(f"world model saved to {args.out} "
          f"(loss={final['loss']:.4f}, data={final['data']:.4f}, "
          f"energy={final['energy']:.4f})")
    return 0


def cmd_simulate(args) -> int:
    bundle = Bundle.load(args.codec, args.wm, args.registry)
    req = {"baseline": {"preset": args.baseline}, "action_id": args.action_id,
           "dose": args.dose, "k": args.k, "lambda": args.lam, "seed": args.seed}
    _write_json(run_simulation(bundle, req), args.out)
    return 0


def cmd_rank(args) -> int:
    bundle = Bundle.load(args.codec, args.wm, args.registry)
    req = {"baseline": {"preset": args.baseline}, "k": args.k, "lambda": args.lam,
           "seed": args.seed, "doses": args.doses}
    if args.action_ids:
        req["action_ids"] = args.action_ids
    _write_json(run_ranking(bundle, req), args.out)
    return 0


def cmd_rollout(args) -> int:
    bundle = Bundle.load(args.codec, args.wm, args.registry)
    from .rollout import SyntheticEnv
    rng = np.random.default_rng(args.seed)
    env = SyntheticEnv(codec=bundle.codec,
                       base_params=jitter_params(healthy_params(), rng),
                       registry=bundle.registry,
                       lead_mix=bundle.lead_mix(), sigma_eta=args.sigma_eta)
    predict = _model_predictor(bundle.model, bundle.registry)
    from .actions import enumerate_actions
    singles = [a for a in enumerate_actions(bundle.registry, bundle.registry.mask,
                                            [0.5, 1.0, 2.0]) if a.second is None]
    report = {"schema_version": 1, "seed": args.seed, "horizons": {}}
    for h in args.horizons:
        rows = []
        for r in range(args.n):
            z0 = env.initial_state(seed=int(rng.integers(1 << 31)))
            actions = [singles[int(rng.integers(len(singles)))] for _ in range(h)]
            res = run_rollout(predict, env, z0, actions,
                              seed=int(rng.integers(1 << 31)))
            rows.append({"closed_loop_latent_mse": float(res.latent_sq_errors.mean()),
                         "oracle_latent_mse": float(res.oracle_latent_sq_errors.mean()),
                         "delta": res.delta,
                         "signal_mse": float(res.signal_mse.mean()),
                         "signal_mae": float(res.signal_mae.mean())})
        report["horizons"][str(h)] = rows
    _write_json(report, args.out)
    return 0


def cmd_ablate(args) -> int:
    corpus = make_standard_corpus(seed=args.seed, registry=_load_registry(args.registry))
    index = ablation_battery(corpus, args.out_dir, seeds=tuple(args.seeds),
                             epochs=args.epochs)
    failed = [c for c in index["cells"] if c["status"] != "ok"]
    print(f"battery complete: {len(index['cells'])} cells, {len(failed)} failed; "
          f"tables in {args.out_dir}")
    return 0


def cmd_verify_theory(args) -> int:
    bed = GaussianTestBed(base_mean=[args.base_mean], base_var=[args.base_var],
                          anchor=[args.m], gamma=args.gamma)
    budget = VerifyBudget(langevin_steps=args.steps, burn_in=args.steps // 20,
                          step_size=args.step_size, seed=args.seed)
    report = verify_propositions(bed, budget)
    _write_json(report, args.out)
    if not report["pass"]:
        print("verification FAILED", file=sys.stderr)
        return 2
    print(f"all propositions verified "
          f"(p2 err {report['p2']['max_abs_err']:.2e}, "
          f"p3 tv {report['p3']['tv_distance']:.4f})")
    return 0


def cmd_serve(args) -> int:
    from .service import make_server
    if args.config:
        cfg = load_run_config(args.config)
        codec, wm, registry, port = cfg.codec, cfg.world_model, cfg.registry, cfg.port
    else:
        codec, wm, registry, port = args.codec, args.wm, args.registry, args.port
    if not codec or not wm:
        raise UsageError("serve needs --codec and --wm (or a --config providing them)")
    bundle = Bundle.load(codec, wm, registry)
    server = make_server(bundle, port=port, versions={"cardiosim": __version__})
    print(f"serving on port {server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="cardiosim",
                     description="Synthetic cardiac simulation, latent dynamics, "
                                 "and intervention ranking")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-data", help="generate synthetic recordings or transitions")
    p.add_argument("--kind", choices=["recordings", "transitions"], default="recordings")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--registry")
    p.add_argument("--n", type=int, default=40, help="recording count")
    p.add_argument("--beats", type=int, default=4)
    p.add_argument("--format", choices=["binary", "csv"], default="binary")
    p.add_argument("--codec", help="codec checkpoint (transitions mode)")
    p.add_argument("--patients", type=int, default=8)
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--sigma-eta-rel", type=float, default=0.3)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-codec", help="fit the beat-window codec")
    p.add_argument("--data", required=True, help="directory of waveform .bin files")
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--hidden", type=int, nargs="+", default=[64])
    p.add_argument("--window", type=int, default=256)
    p.add_argument("--kl-weight", type=float, default=0.0)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train_codec)

    p = sub.add_parser("train-wm", help="train the latent dynamics model")
    p.add_argument("--transitions", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--registry")
    p.add_argument("--c", type=float, default=0.25, help="energy weight")
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--n-steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-dir")
    p.set_defaults(fn=cmd_train_wm)

    p = sub.add_parser("simulate", help="simulate one intervention")
    p.add_argument("--codec", required=True)
    p.add_argument("--wm", required=True)
    p.add_argument("--registry")
    p.add_argument("--baseline", default="healthy")
    p.add_argument("--action-id", required=True)
    p.add_argument("--dose", type=float, required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--lambda", dest="lam", type=float, default=0.6)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("rank", help="rank the feasible action space")
    p.add_argument("--codec", required=True)
    p.add_argument("--wm", required=True)
    p.add_argument("--registry")
    p.add_argument("--baseline", default="healthy")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--lambda", dest="lam", type=float, default=0.6)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--doses", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    p.add_argument("--action-ids", nargs="+")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("rollout", help="closed-loop vs oracle evaluation")
    p.add_argument("--codec", required=True)
    p.add_argument("--wm", required=True)
    p.add_argument("--registry")
    p.add_argument("--horizons", type=int, nargs="+", default=[1, 2, 5])
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--sigma-eta", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_rollout)

    p = sub.add_parser("ablate", help="run the ablation battery")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--registry")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--epochs", type=int, default=120)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("verify-theory", help="verify the three theory claims")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--m", type=float, default=2.0, help="energy anchor")
    p.add_argument("--base-mean", type=float, default=0.0)
    p.add_argument("--base-var", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=1_000_000)
    p.add_argument("--step-size", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_verify_theory)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--codec")
    p.add_argument("--wm")
    p.add_argument("--registry")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--config", help="RunConfig JSON (strict keys)")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return 1
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (ValidationError, InfeasibleActionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
