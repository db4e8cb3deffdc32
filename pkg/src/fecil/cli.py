"""Command-line surface: run, eval, gradcheck, ablate, plotdata.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .checkpoint import CheckpointError, load_compact, save_compact
from .config import ConfigError, load_run_config
from .datasets import DatasetError, load_dataset
from .gradcheck import run_gradient_suite
from .metrics import read_eval_rows, write_metrics_csv, write_summary_json, write_timings_csv
from .training import (AUG_MODES, TrainingError, evaluate, run_ablation, run_incremental)


def _build_parser():
    p = argparse.ArgumentParser(prog="fecil",
                                description="Incremental learning with expand-and-compress "
                                            "training and rehearsal-paired CutMix.")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="train an incremental run from a config file")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--out", required=True, help="output directory for CSV/JSON/checkpoints")

    eval_p = sub.add_parser("eval", help="evaluate a checkpoint on its dataset's test split")
    eval_p.add_argument("--checkpoint", required=True)
    eval_p.add_argument("--config", required=True, help="config naming the dataset to load")

    gc_p = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    gc_p.add_argument("--seed", type=int, default=0)
    gc_p.add_argument("--trials", type=int, default=10, help="randomized cases per op group")

    ab_p = sub.add_parser("ablate", help="run the augmentation-mode matrix over several seeds")
    ab_p.add_argument("--config", required=True)
    ab_p.add_argument("--out", required=True)
    ab_p.add_argument("--seeds", type=int, default=5)
    ab_p.add_argument("--modes", default=",".join(AUG_MODES),
                      help="comma-separated subset of " + ",".join(AUG_MODES))

    pd_p = sub.add_parser("plotdata", help="extract per-step accuracy series from metrics.csv")
    pd_p.add_argument("--run", required=True, help="run directory containing metrics.csv")
    pd_p.add_argument("--out", default=None, help="output CSV (default: stdout)")
    return p


def _cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    os.makedirs(args.out, exist_ok=True)

    def on_step(t, net, big, mem, norm):
        mean, std = norm
        save_compact(os.path.join(args.out, f"ckpt_step{t}"), net,
                     extra_meta={"step": t, "seed": cfg.seed,
                                 "norm_mean": [float(x) for x in mean],
                                 "norm_std": [float(x) for x in std]})
        mem.save(os.path.join(args.out, f"memory_step{t}.json"),
                 os.path.join(args.out, f"memory_step{t}.ckpt"))

    reports, summary = run_incremental(cfg, on_step)
    records = [r for rep in reports for r in rep.epochs]
    write_metrics_csv(os.path.join(args.out, "metrics.csv"), records,
                      [rep.eval for rep in reports])
    write_timings_csv(os.path.join(args.out, "timings.csv"), records)
    write_summary_json(os.path.join(args.out, "summary.json"), summary)
    for ev in (rep.eval for rep in reports):
        print(f"step {ev.step}: {ev.num_classes} classes  "
              f"top1 big {100 * ev.top1_big:.2f}  compact {100 * ev.top1_compact:.2f}")
    print(f"avg {100 * summary.avg_top1_compact:.2f}  last {100 * summary.last_top1_compact:.2f}")
    return 0


def _cmd_eval(args) -> int:
    net, meta = load_compact(args.checkpoint)
    cfg = load_run_config(args.config)
    _, test = load_dataset(cfg.dataset_kind, path=cfg.dataset_path, seed=cfg.dataset_seed,
                           num_classes=cfg.num_classes, per_class=cfg.per_class,
                           image_side=cfg.image_side, test_per_class=cfg.test_per_class)
    test_seen = test.class_subset(net.class_ids)
    norm = (np.array(meta["norm_mean"], dtype=np.float32),
            np.array(meta["norm_std"], dtype=np.float32))
    top1, top5 = evaluate(net, test_seen, norm)
    print(f"{len(net.class_ids)} classes, {len(test_seen)} test samples: "
          f"top1 {100 * top1:.2f}  top5 {100 * top5:.2f}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradient_suite(seed=args.seed, trials_per_op=args.trials)
    worst = 0.0
    cases = 0
    for r in results:
        print(f"{r.name:24s} trials={r.trials:3d} max_rel_err={r.max_rel_err:.3e} "
              f"{'ok' if r.ok else 'FAIL'}")
        worst = max(worst, r.max_rel_err)
        cases += r.trials
    print(f"{cases} cases, worst relative error {worst:.3e}")
    return 0 if all(r.ok for r in results) else 1


def _cmd_ablate(args) -> int:
    cfg = load_run_config(args.config)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    unknown = [m for m in modes if m not in AUG_MODES]
    if unknown:
        raise ConfigError(f"unknown augmentation modes {unknown}")
    os.makedirs(args.out, exist_ok=True)
    seeds = list(range(args.seeds))

    def progress(mode, seed, summary):
        print(f"{mode} seed {seed}: avg {100 * summary.avg_top1_compact:.2f} "
              f"last {100 * summary.last_top1_compact:.2f}", flush=True)

    results = run_ablation(cfg, modes, seeds, progress)
    rows = []
    for mode in modes:
        for run in results[mode]:
            mean_time = float(np.mean(list(run.step_epoch_times.values())))
            rows.append({"mode": mode, "seed": run.seed,
                         "avg_top1": round(100 * run.summary.avg_top1_compact, 2),
                         "last_top1": round(100 * run.summary.last_top1_compact, 2),
                         "epoch_time_s": round(mean_time, 6)})
    with open(os.path.join(args.out, "ablation.csv"), "w") as f:
        f.write("mode,seed,avg_top1,last_top1,epoch_time_s\n")
        for r in rows:
            f.write(f"{r['mode']},{r['seed']},{r['avg_top1']:.2f},"
                    f"{r['last_top1']:.2f},{r['epoch_time_s']:.6f}\n")
    baseline = None
    if "none" in modes:
        baseline = float(np.mean([np.mean(list(run.step_epoch_times.values()))
                                  for run in results["none"]]))
    table = {}
    for mode in modes:
        avg = float(np.mean([run.summary.avg_top1_compact for run in results[mode]]))
        last = float(np.mean([run.summary.last_top1_compact for run in results[mode]]))
        mean_time = float(np.mean([np.mean(list(run.step_epoch_times.values()))
                                   for run in results[mode]]))
        table[mode] = {"avg_top1": round(100 * avg, 2), "last_top1": round(100 * last, 2),
                       "time_ratio": round(mean_time / baseline, 2) if baseline else None}
    with open(os.path.join(args.out, "ablation.json"), "w") as f:
        json.dump({"seeds": seeds, "rows": rows, "modes": table}, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"{'mode':10s} {'Avg':>7s} {'Last':>7s} {'Time':>6s}")
    for mode in modes:
        t = table[mode]
        ratio = f"{t['time_ratio']:.2f}x" if t["time_ratio"] else "-"
        print(f"{mode:10s} {t['avg_top1']:7.2f} {t['last_top1']:7.2f} {ratio:>6s}")
    return 0


def _cmd_plotdata(args) -> int:
    rows = read_eval_rows(os.path.join(args.run, "metrics.csv"))
    lines = ["step,top1_big,top5_big,top1_compact,top5_compact"]
    lines += [f"{r['step']},{r['top1_big']:.2f},{r['top5_big']:.2f},"
              f"{r['top1_compact']:.2f},{r['top5_compact']:.2f}" for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as f:
            f.write(text)
    return 0


_COMMANDS = {"run": _cmd_run, "eval": _cmd_eval, "gradcheck": _cmd_gradcheck,
             "ablate": _cmd_ablate, "plotdata": _cmd_plotdata}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (CheckpointError, DatasetError, TrainingError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
