"""Command-line surface.

    streampile stream    --frames 64 --denoiser oracle --out frames.bin
    streampile train     --out ckpt.bin [--stage adaptive|uniform|two-stage]
    streampile distill   --out student.bin [--student pretrained.bin]
    streampile landmarks --input face68.json --out face26.json [--params t.toml]
    streampile bench     --frames 128 --out report.json
    streampile compare   --frames 64 --out report.json

Exit codes: 0 success, 1 configuration error, 2 runtime error.  Every
artifact carries the resolved configuration (JSON reports inline, the
frame binary via a sidecar header file); unknown flags and unknown
config keys are hard errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import frameio
from .bench import bench_pipeline, compare_streaming_offline
from .config import RunConfig, load_config
from .denoisers import GaussianPosteriorDenoiser, GaussianTransportDenoiser, ToyNetDenoiser
from .diffusion import build_schedule
from .distill import distill
from .engine import run_stream
from .errors import ConfigError
from .landmarks import LandmarkSet, MergeTable, RegionTransformParams, retarget
from .toynet import init_params, load_checkpoint, save_checkpoint
from .training import GaussianSequenceSampler, train_temporal_adaptive, train_uniform


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _common_flags(p: _Parser):
    p.add_argument("--config", default=None, help="TOML configuration file")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    for dotted, typ, aliases in [("schedule.K", int, ["--K"]), ("schedule.G", int, ["--G"]),
                                 ("schedule.N", int, ["--N"]), ("schedule.T", int, ["--T"]),
                                 ("prior.rho", float, []), ("prior.d", int, []),
                                 ("model.mask", str, [])]:
        flag = "--" + dotted.replace(".", "-")
        p.add_argument(flag, *aliases, dest=dotted, type=typ, default=None)


def _config_from(args) -> RunConfig:
    overrides = {k: v for k, v in vars(args).items() if "." in k}
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _denoiser_from(cfg: RunConfig, name: str):
    schedule = build_schedule(cfg.schedule.T)
    if name == "oracle":
        return GaussianTransportDenoiser(cfg.prior, schedule), cfg.prior.d
    if name == "oracle-posterior":
        return GaussianPosteriorDenoiser(cfg.prior, schedule), cfg.prior.d
    if name == "toynet":
        if not cfg.checkpoint:
            raise ConfigError("--denoiser toynet requires model.checkpoint in the config")
        if not os.path.exists(cfg.checkpoint):
            raise ConfigError(f"checkpoint not found: {cfg.checkpoint}")
        params = load_checkpoint(cfg.checkpoint)
        return ToyNetDenoiser(params, schedule, mask=cfg.mask), params.d
    raise ConfigError(f"unknown denoiser {name!r}")


def cmd_stream(args) -> int:
    cfg = _config_from(args)
    denoiser, d = _denoiser_from(cfg, args.denoiser)
    L = args.frames
    seed = cfg.seed_for("engine")
    cond = None
    if args.denoiser == "toynet":
        cond = (np.zeros(cfg.model_c) for _ in range(L))
    frames, state = run_stream(cfg.schedule, denoiser, cond, L, seed=seed, d=d,
                               sampler=args.sampler)
    header = {"config": cfg.resolved(), "denoiser": args.denoiser, "frames": L,
              "sampler": args.sampler}
    if args.csv:
        frameio.write_frames_csv(args.out, frames)
    else:
        frameio.write_frames(args.out, frames)
    frameio.write_json_report(args.out + ".header.json", header)
    if args.metrics:
        with frameio.NdjsonWriter(args.metrics) as sink:
            sink({"config": cfg.resolved()})
            for rec in state.step_records:
                sink(rec)
    print(f"stream: wrote {L} frames to {args.out} "
          f"({state.iteration} iterations, {state.denoiser_calls} denoiser calls)")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    schedule = build_schedule(cfg.schedule.T)
    sampler = GaussianSequenceSampler(cfg.prior, K=cfg.schedule.K, cond_dim=cfg.model_c)
    rng = np.random.default_rng(cfg.seed_for("train"))
    params = init_params(np.random.default_rng(cfg.seed_for("init")),
                         d=cfg.model_d, h=cfg.model_h, c=cfg.model_c)
    loss_path = args.losses or (args.out + ".losses.ndjson")
    steps = args.steps if args.steps is not None else cfg.train_steps
    with frameio.NdjsonWriter(loss_path) as sink:
        sink({"config": cfg.resolved(), "stage": args.stage})
        if args.stage in ("uniform", "two-stage"):
            res = train_uniform(params, sampler, schedule, steps, rng, lr=cfg.train_lr,
                                batch=cfg.train_batch, mask=cfg.mask,
                                weight_decay=cfg.train_weight_decay, loss_sink=sink)
            params = res.params
        if args.stage in ("adaptive", "two-stage"):
            res = train_temporal_adaptive(params, sampler, cfg.schedule, schedule, steps, rng,
                                          lr=cfg.train_lr, batch=cfg.train_batch, mask=cfg.mask,
                                          weight_decay=cfg.train_weight_decay, loss_sink=sink)
            params = res.params
    save_checkpoint(params, args.out, seed=cfg.seed, steps=steps,
                    extra={"config": cfg.resolved(), "stage": args.stage})
    print(f"train: stage={args.stage} steps={steps} final_loss={res.losses[-1]:.6f} "
          f"checkpoint={args.out}")
    return 0


def cmd_distill(args) -> int:
    cfg = _config_from(args)
    schedule = build_schedule(cfg.schedule.T)
    teacher = GaussianPosteriorDenoiser(cfg.prior, schedule)
    if args.student:
        student = load_checkpoint(args.student)
    else:
        student = init_params(np.random.default_rng(cfg.seed_for("init")),
                              d=cfg.model_d, h=cfg.model_h, c=cfg.model_c)
    rng = np.random.default_rng(cfg.seed_for("distill"))
    steps = args.steps if args.steps is not None else cfg.distill_steps
    loss_path = args.losses or (args.out + ".losses.ndjson")
    spec = cfg.prior

    def data_sampler(r, b):
        return spec.sample(r, b, cfg.schedule.K)

    with frameio.NdjsonWriter(loss_path) as sink:
        sink({"config": cfg.resolved()})
        theta = distill(teacher, student, steps, schedule, data_sampler, rng,
                        batch_size=cfg.distill_batch, ema_rate=cfg.distill_ema_rate,
                        omega=cfg.distill_omega, huber_c=cfg.distill_huber_c,
                        solver_steps=cfg.distill_solver_steps, lr=cfg.distill_lr,
                        sigma_data=cfg.prior.std, mask=cfg.mask, loss_sink=sink)
    save_checkpoint(theta, args.out, seed=cfg.seed, steps=steps,
                    extra={"config": cfg.resolved(), "distilled": True})
    print(f"distill: steps={steps} checkpoint={args.out} losses={loss_path}")
    return 0


def cmd_landmarks(args) -> int:
    with open(args.input) as fh:
        src = LandmarkSet.from_json(fh.read())
    table = MergeTable.from_json_file(args.table) if args.table else MergeTable.default()
    params = (RegionTransformParams.from_toml_file(args.params)
              if args.params else RegionTransformParams.identity())
    out = retarget(src, table, params)
    with open(args.out, "w") as fh:
        fh.write(out.to_json() + "\n")
    # the landmark file schema is fixed, so the config echo rides a sidecar
    frameio.write_json_report(args.out + ".header.json", {
        "input": args.input,
        "table": args.table or "<default>",
        "params": args.params or "<identity>",
    })
    print(f"landmarks: {args.input} ({src.scheme}) -> {args.out} ({out.scheme})")
    return 0


def cmd_bench(args) -> int:
    cfg = _config_from(args)
    denoiser, d = _denoiser_from(cfg, args.denoiser)
    report = bench_pipeline(cfg.schedule, denoiser, args.frames,
                            seed=cfg.seed_for("engine"), d=d, sampler=args.sampler)
    payload = {"config": cfg.resolved(), **report.to_dict()}
    frameio.write_json_report(args.out, payload)
    if args.series:
        frameio.write_series_csv(args.series, {
            "step_wall_nanos": report.per_iteration_nanos,
            "denoiser_nanos": report.per_iteration_denoiser_nanos,
        })
    print(f"bench: latency={report.first_frame_latency_iters} calls, "
          f"throughput={report.throughput_frames_per_iter:g} frames/call, "
          f"overhead={report.engine_overhead_per_iter * 1e3:.3f} ms/iter -> {args.out}")
    return 0


def cmd_compare(args) -> int:
    cfg = _config_from(args)
    mse = compare_streaming_offline(cfg.schedule, cfg.prior, cfg.seed_for("engine"), args.frames)
    marginal_var = cfg.prior.std**2
    payload = {
        "config": cfg.resolved(),
        "per_frame_mse": mse.tolist(),
        "mean_mse": float(mse.mean()),
        "prior_marginal_variance": marginal_var,
        "mean_mse_fraction_of_variance": float(mse.mean() / marginal_var),
    }
    frameio.write_json_report(args.out, payload)
    print(f"compare: mean per-frame MSE {mse.mean():.6f} "
          f"({mse.mean() / marginal_var:.2%} of marginal variance) -> {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="streampile", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stream", help="run the streaming pipeline")
    _common_flags(p)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--denoiser", choices=["oracle", "oracle-posterior", "toynet"],
                   default="oracle")
    p.add_argument("--sampler", choices=["cm", "ddim"], default="cm")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=None, help="NDJSON per-step metrics path")
    p.add_argument("--csv", action="store_true", help="write CSV instead of binary")
    p.set_defaults(fn=cmd_stream)

    p = sub.add_parser("train", help="train the toy denoiser")
    _common_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--stage", choices=["adaptive", "uniform", "two-stage"], default="adaptive")
    p.add_argument("--losses", default=None, help="NDJSON loss-curve path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("distill", help="consistency-distill against the oracle teacher")
    _common_flags(p)
    p.add_argument("--out", required=True, help="student checkpoint path")
    p.add_argument("--student", default=None, help="pretrained student checkpoint")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--losses", default=None)
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("landmarks", help="retarget 68-point landmarks to 26 points")
    p.add_argument("--input", required=True, help="human68 landmark JSON")
    p.add_argument("--out", required=True, help="anime26 landmark JSON")
    p.add_argument("--table", default=None, help="merge table JSON (default built-in)")
    p.add_argument("--params", default=None, help="region-transform TOML")
    p.set_defaults(fn=cmd_landmarks)

    p = sub.add_parser("bench", help="latency/throughput/overhead report")
    _common_flags(p)
    p.add_argument("--frames", type=int, default=128)
    p.add_argument("--denoiser", choices=["oracle", "oracle-posterior", "toynet"],
                   default="oracle")
    p.add_argument("--sampler", choices=["cm", "ddim"], default="cm")
    p.add_argument("--out", required=True)
    p.add_argument("--series", default=None, help="timing series CSV path")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("compare", help="streaming vs offline joint denoising")
    _common_flags(p)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
