"""Command-line entry points.

Every subcommand validates its config, runs the corresponding pipeline
and writes its outputs plus a JSON run manifest. Validation failures
exit nonzero. Seed precedence: --seed flag, then the UNICARDIO_SEED
environment variable, then the config file.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .diffusion import SamplerConfig, dump_schedule_csv, make_schedule
from .errors import ParameterError, TaskError, UnicardioError
from .metrics import ShiftSet, aggregate, ks_test, mae, min_mae, min_rmse, rmse, write_eval_report
from .signals import apply_mask, denormalize, gen_gap_mask, noise_at_snr, preprocess_corpus
from .synthdata import synth_trimodal
from .tasks import Degradation, Modality, enumerate_tasks, parse_task

SPLITS = ("train", "val", "test")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UnicardioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unicardio",
        description="Unified multi-modal conditional diffusion for cardiovascular signals",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic tri-modal corpus")
    _common(p)
    p.add_argument("--out", required=True, help="output corpus path")
    p.add_argument("--n-segments", type=int, default=None)
    p.add_argument("--csv", action="store_true", help="write CSV instead of UCS1")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="filter, gate, split and normalize")
    _common(p)
    p.add_argument("--input", required=True, help="raw CSV (t,<modality>) or UCS1 corpus")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="run the curriculum")
    _common(p)
    p.add_argument("--data-dir", required=True, help="directory from `preprocess`")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate signals for one task")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--task", required=True, help='e.g. "trans:ECG|cond:PPG"')
    p.add_argument("--data", required=True, help="corpus holding condition segments")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--index", type=int, default=0, help="first segment to use")
    p.add_argument("--n", type=int, default=1, help="number of segments")
    p.add_argument("--sampler", choices=("ddim", "ddpm"), default=None)
    p.add_argument("--steps", type=int, default=None, help="ddim network evaluations")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--stats", default=None, help="norm stats JSON for unit restore")
    p.add_argument("--composite", action="store_true",
                   help="copy observed samples from the degraded input")
    p.add_argument("--dump-trajectory", action="store_true")
    p.add_argument("--snr-db", type=float, default=None,
                   help="override degradation SNR for denoising tasks")
    p.add_argument("--gap-fraction", type=float, default=None,
                   help="override gap fraction for imputation tasks")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score predictions against targets")
    _common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--masked-region-only", action="store_true")
    p.add_argument("--fs", type=float, default=None, help="for the shift window")
    p.add_argument("--task", default="unknown", help="task label for the report")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="emit SVG figures")
    _common(p)
    p.add_argument("--pred", default=None)
    p.add_argument("--target", default=None)
    p.add_argument("--mask", default=None)
    p.add_argument("--trajectory", default=None)
    p.add_argument("--log", default=None, help="training log CSV")
    p.add_argument("--fs", type=float, default=1.0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-segments", type=int, default=4)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("tasks", help="list the canonical task identifiers")
    p.set_defaults(func=cmd_tasks)
    return parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)


def _setup(args):
    cfg, raw = io.load_config(args.config)
    seed = io.resolve_seed(args.seed, cfg.data.seed)
    return cfg, raw, seed


def cmd_synth(args) -> int:
    cfg, raw, seed = _setup(args)
    n = args.n_segments or cfg.data.n_segments
    L = int(round(cfg.data.segment_seconds * cfg.data.fs))
    result = synth_trimodal(n, L=L, fs=cfg.data.fs,
                            hr_range_bpm=cfg.data.hr_range_bpm, seed=seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.csv:
        io.write_corpus_csv(out, result.signals)
    else:
        io.write_corpus(out, result.signals, fs=cfg.data.fs)
    io.write_manifest(out.with_suffix(out.suffix + ".manifest.json"),
                      "synth", seed, raw, outputs={"corpus": str(out)},
                      n_segments=n)
    print(f"wrote {n} segments to {out}")
    return 0


def _load_streams(path: str):
    """Raw CSV streams, or a UCS1 corpus flattened back into streams."""
    if path.endswith(".csv"):
        return io.read_raw_streams_csv(path)
    signals, fs = io.read_corpus(path)
    return {m: np.ascontiguousarray(a).reshape(-1) for m, a in signals.items()}, fs


def cmd_preprocess(args) -> int:
    cfg, raw, seed = _setup(args)
    streams, fs = _load_streams(args.input)
    pp_cfg = cfg.preprocess_config()
    if seed != cfg.data.seed:
        from dataclasses import replace

        pp_cfg = replace(pp_cfg, seed=seed)
    result = preprocess_corpus(streams, fs, pp_cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {}
    for split in SPLITS:
        path = out_dir / f"{split}.ucs1"
        io.write_corpus(path, result.splits[split], fs=fs)
        outputs[split] = str(path)
        n = len(next(iter(result.splits[split].values())))
        print(f"{split}: {n} segments")
    io.save_norm_stats(out_dir / "norm_stats.json", result.stats)
    io.write_removal_report(out_dir / "removal_report.csv", result.report)
    io.write_manifest(out_dir / "manifest.json", "preprocess", seed, raw,
                      outputs=outputs)
    return 0


def cmd_train(args) -> int:
    from .plotting import plot_training_log
    from .training import TrainingData, train

    cfg, raw, seed = _setup(args)
    data_dir = Path(args.data_dir)
    signals, fs = io.read_corpus(data_dir / "train.ucs1")
    stats_path = data_dir / "norm_stats.json"
    stats = io.load_norm_stats(stats_path) if stats_path.exists() else None
    dataset = TrainingData(arrays=signals, fs=fs, stats=stats)
    init_state = None
    if args.resume:
        from .model import load_checkpoint

        resumed, _ = load_checkpoint(args.resume)
        init_state = resumed.state_dict()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(cfg.model, cfg.curriculum, dataset, seed=seed,
                   out_dir=out_dir, log_path=out_dir / "training_log.csv",
                   init_state=init_state)
    from .model import save_checkpoint

    extra = {"seed": seed}
    if stats is not None:
        extra["norm_stats"] = {
            m.name: {"mean": s.mean, "std": s.std, "min": s.min, "max": s.max,
                     "source_space": s.source_space}
            for m, s in stats.items()
        }
    final = out_dir / "final.uckpt"
    save_checkpoint(result.model, final, extra=extra)
    sched = make_schedule(cfg.schedule.n_steps, cfg.schedule.beta_start,
                          cfg.schedule.beta_end, kind=cfg.schedule.kind)
    dump_schedule_csv(sched, out_dir / "schedule.csv")
    plot_training_log(out_dir / "loss.svg", result.records)
    io.write_manifest(out_dir / "manifest.json", "train", seed, raw,
                      outputs={"checkpoint": str(final)},
                      final_loss=result.records[-1].loss,
                      iterations=len(result.records))
    print(f"trained {len(result.records)} iterations; checkpoint at {final}")
    return 0


def cmd_sample(args) -> int:
    from .generation import generate, impute_composite, write_generation_sidecar
    from .model import load_checkpoint

    cfg, raw, seed = _setup(args)
    task = parse_task(args.task)
    model, _extra = load_checkpoint(args.ckpt)
    signals, fs = io.read_corpus(args.data)
    lo, hi = args.index, args.index + args.n
    n_avail = len(next(iter(signals.values())))
    if hi > n_avail:
        raise ParameterError(f"segments [{lo}, {hi}) exceed corpus of {n_avail}")

    sampler_kwargs = {}
    if args.sampler is not None:
        sampler_kwargs["kind"] = args.sampler
    if args.steps is not None:
        sampler_kwargs["n_steps"] = args.steps
    if args.eta is not None:
        sampler_kwargs["eta"] = args.eta
    from dataclasses import replace

    sampler = replace(cfg.sampler, **sampler_kwargs) if sampler_kwargs else cfg.sampler

    rng = np.random.default_rng(seed)
    conditions = {}
    observed = None
    for c in task.conditions:
        if c.modality not in signals:
            raise TaskError(f"corpus lacks condition modality {c.modality.name}")
        arr = np.asarray(signals[c.modality][lo:hi], dtype=np.float64)
        if c.degradation is Degradation.NOISY:
            snr = args.snr_db if args.snr_db is not None else cfg.curriculum.noise_snr_db
            arr = np.stack([noise_at_snr(row, snr, rng) for row in arr])
        elif c.degradation is Degradation.MASKED:
            gap = args.gap_fraction if args.gap_fraction is not None else cfg.curriculum.gap_fraction
            masks = [gen_gap_mask(arr.shape[1], gap, rng) for _ in range(len(arr))]
            observed = np.stack([m.observed for m in masks])
            arr = np.stack([apply_mask(row, m) for row, m in zip(arr, masks)])
        conditions[c.modality] = arr

    stats = io.load_norm_stats(args.stats) if args.stats else None
    result = generate(model, task, conditions, sampler=sampler, seed=seed,
                      stats=None, return_trajectory=args.dump_trajectory)
    pred = result.samples
    if args.composite and observed is not None:
        degraded = conditions[task.target]
        pred = np.stack([
            impute_composite(p, d, _mask_of(o), composite=True)
            for p, d, o in zip(pred, degraded, observed)
        ])
    target = np.asarray(signals[task.target][lo:hi], dtype=np.float64) \
        if task.target in signals else None
    unit_space = result.unit_space
    if stats is not None and task.target in stats and task.target is Modality.BP:
        pred = denormalize(pred, stats[task.target])
        if target is not None:
            target = denormalize(target, stats[task.target])
        unit_space = stats[task.target].source_space

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {"pred": str(out_dir / "pred.csv")}
    io.write_corpus_csv(out_dir / "pred.csv", {task.target: pred})
    if target is not None:
        io.write_corpus_csv(out_dir / "target.csv", {task.target: target})
        outputs["target"] = str(out_dir / "target.csv")
    if observed is not None:
        io.write_mask_csv(out_dir / "mask.csv", observed)
        outputs["mask"] = str(out_dir / "mask.csv")
    if result.trajectory is not None:
        io.write_trajectory_csv(out_dir / "trajectory.csv", result.trajectory)
        outputs["trajectory"] = str(out_dir / "trajectory.csv")
    write_generation_sidecar(result, out_dir / "generation.json")
    outputs["generation"] = str(out_dir / "generation.json")
    io.write_manifest(out_dir / "manifest.json", "sample", seed, raw,
                      outputs=outputs, task=task.name(), nfe=result.nfe,
                      wall_clock_s=result.wall_clock_s, unit_space=unit_space)
    print(f"task {task.name()}: {args.n} segment(s), NFE={result.nfe}, "
          f"{result.wall_clock_per_segment_s:.3f}s/segment")
    return 0


def _mask_of(observed: np.ndarray):
    from .signals import ObservationMask

    return ObservationMask(observed=observed)


def cmd_eval(args) -> int:
    cfg, raw, seed = _setup(args)
    pred = io.read_corpus_csv(args.pred)
    target = io.read_corpus_csv(args.target)
    common = [m for m in pred if m in target]
    if not common:
        raise ParameterError("prediction and target share no modality")
    observed = io.read_mask_csv(args.mask) if args.mask else None
    if args.masked_region_only and observed is None:
        raise ParameterError("--masked-region-only needs --mask")
    fs = args.fs if args.fs is not None else cfg.data.fs
    shifts = ShiftSet.for_fs(fs)
    rows = []
    for mod in common:
        p, tg = np.asarray(pred[mod]), np.asarray(target[mod])
        if p.shape != tg.shape:
            raise ParameterError(
                f"{mod.name}: prediction {p.shape} vs target {tg.shape}"
            )
        per_metric: dict[str, list[float]] = {}
        for i in range(p.shape[0]):
            if args.masked_region_only:
                sel = ~observed[i]
                pi, ti = p[i][sel], tg[i][sel]
                pairs = {"rmse": rmse(pi, ti), "mae": mae(pi, ti),
                         "ks": ks_test(pi, ti)}
            else:
                pairs = {
                    "rmse": rmse(p[i], tg[i]),
                    "mae": mae(p[i], tg[i]),
                    "min_rmse": min_rmse(p[i], tg[i], shifts),
                    "min_mae": min_mae(p[i], tg[i], shifts),
                    "ks": ks_test(p[i], tg[i]),
                }
            for name, val in pairs.items():
                per_metric.setdefault(name, []).append(val)
        label = args.task if len(common) == 1 else f"{args.task}:{mod.name}"
        rows.extend(aggregate(label, name, vals) for name, vals in per_metric.items())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_eval_report(rows, out)
    io.write_manifest(out.with_suffix(out.suffix + ".manifest.json"),
                      "eval", seed, raw, outputs={"report": str(out)})
    for row in rows:
        print(f"{row.task} {row.metric}: {row.mean:.6g} +/- {row.stderr:.2g} (n={row.n})")
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_overlay, plot_trajectory, plot_training_log

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    made = []
    if args.pred:
        pred = io.read_corpus_csv(args.pred)
        target = io.read_corpus_csv(args.target) if args.target else {}
        observed = io.read_mask_csv(args.mask) if args.mask else None
        for mod, arr in pred.items():
            arr = np.asarray(arr)
            for i in range(min(arr.shape[0], args.max_segments)):
                path = out_dir / f"overlay_{mod.name}_{i}.svg"
                plot_overlay(
                    path, arr[i],
                    target=np.asarray(target[mod])[i] if mod in target else None,
                    observed=observed[i] if observed is not None else None,
                    fs=args.fs, title=f"{mod.name} segment {i}",
                )
                made.append(str(path))
    if args.trajectory:
        traj = io.read_trajectory_csv(args.trajectory)
        path = out_dir / "trajectory.svg"
        plot_trajectory(path, [(t, arr[0]) for t, arr in traj], fs=args.fs)
        made.append(str(path))
    if args.log:
        records = _read_log(args.log)
        path = out_dir / "loss.svg"
        plot_training_log(path, records)
        made.append(str(path))
    if not made:
        raise ParameterError("nothing to plot; pass --pred, --trajectory or --log")
    io.write_manifest(out_dir / "manifest.json", "plot",
                      io.resolve_seed(args.seed, 0), {},
                      outputs={"figures": made})
    print(f"wrote {len(made)} figure(s) to {out_dir}")
    return 0


def _read_log(path):
    import csv as _csv
    from .training import TrainRecord

    with open(path, newline="") as fh:
        reader = _csv.DictReader(fh)
        return [
            TrainRecord(int(r["iter"]), int(r["epoch"]), int(r["phase"]),
                        float(r["lr"]), r["task"], float(r["loss"]))
            for r in reader
        ]


def cmd_tasks(args) -> int:
    for task in enumerate_tasks():
        print(task.name())
    return 0


if __name__ == "__main__":
    sys.exit(main())
