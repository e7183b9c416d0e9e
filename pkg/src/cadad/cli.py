"""Command-line entry point.

Subcommands: train, eval, ablate, gradcheck, diagnose, synth-data. Exit
codes: 0 success, 2 configuration error, 3 numeric failure (including a
failed gradient check), 4 I/O error. The CADAD_OUT_DIR environment variable
overrides any configured or flag-provided output directory.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import diagnostics
from .config import RunConfig, load_config_file, parse_overrides
from .data import bin_dataset, load_event_file, save_event_file, synth_coincidence_task
from .errors import ConfigError, ContractError, EventFileError, NumericsError
from .gradcheck import delay_read_gradcheck, network_gradcheck
from .network import Network
from .trainer import evaluate, train


def _load_run_config(args) -> RunConfig:
    raw = load_config_file(args.config) if args.config else {}
    return RunConfig.resolve(raw, parse_overrides(getattr(args, "set", None)))


def _datasets(cfg: RunConfig):
    if cfg["data.source"] == "synth":
        train_streams, eval_streams = synth_coincidence_task(cfg.synth(), cfg.seed)
    else:
        for key in ("data.train_path", "data.eval_path"):
            if not cfg[key]:
                raise ConfigError(f"data.source=file requires {key}")
        train_streams, c, k = load_event_file(cfg["data.train_path"])
        _check_file_geometry(cfg, c, k, cfg["data.train_path"])
        eval_streams, c, k = load_event_file(cfg["data.eval_path"])
        _check_file_geometry(cfg, c, k, cfg["data.eval_path"])
    b = cfg.binning()
    return bin_dataset(train_streams, b), bin_dataset(eval_streams, b)


def _check_file_geometry(cfg, channels, classes, path):
    if channels != cfg["data.channels"] or classes != cfg["data.n_classes"]:
        raise ConfigError(
            f"{path}: file declares channels={channels} classes={classes}, config says "
            f"{cfg['data.channels']}/{cfg['data.n_classes']}"
        )


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out_dir = cfg.out_dir(args.out)
    train_set, eval_set = _datasets(cfg)
    net = cfg.build_network()
    cfg.write_manifest(out_dir)
    binning = cfg.binning()
    result = train(
        train_set.frames,
        train_set.labels,
        eval_set.frames,
        eval_set.labels,
        net,
        cfg.train_config(),
        out_dir=out_dir,
        run_id=cfg["run.id"],
        header_note=f"seed={cfg.seed} mode={cfg['delay.mode']}",
        extra_meta={
            "binning": {
                "dt_ms": binning.dt_ms,
                "t_steps": binning.t_steps,
                "channels": binning.channels,
                "clamp_binary": binning.clamp_binary,
            }
        },
    )
    net.set_params(result.best_params)
    report = diagnostics.dynamics_report(net, eval_set.frames, result.best_epoch)
    diagnostics.write_dynamics_csv(
        os.path.join(out_dir, f"{cfg['run.id']}_dynamics.csv"),
        report,
        note=f"seed={cfg.seed}",
    )
    print(f"best eval accuracy {result.best_eval_acc:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint {result.checkpoint_path}")
    print(f"log {result.log_path}")
    return 0


def cmd_eval(args) -> int:
    net, epoch, extra = Network.load(args.checkpoint)
    binning = extra.get("binning")
    if binning is None:
        raise ConfigError(f"{args.checkpoint}: no binning metadata; cannot bin raw events")
    streams, channels, _ = load_event_file(args.data)
    if channels != binning["channels"]:
        raise ConfigError(
            f"{args.data} has channels={channels}, checkpoint expects {binning['channels']}"
        )
    from .data import BinningConfig

    dataset = bin_dataset(streams, BinningConfig(**binning))
    discretize = not args.continuous_delays
    acc, loss, _ = evaluate(
        net, dataset.frames, dataset.labels, epoch, discretize=discretize
    )
    K = net.spec.n_classes
    confusion = np.zeros((K, K), dtype=np.int64)
    for lo in range(0, len(dataset), 64):
        scores, _ = net.forward(
            dataset.frames[lo : lo + 64], epoch, training=False, discretize=discretize
        )
        pred = scores.argmax(axis=1)
        for y, p in zip(dataset.labels[lo : lo + 64], pred):
            confusion[y, p] += 1
    mode = "discretized" if discretize else "continuous"
    print(f"accuracy {acc:.4f} ({mode} delays, {len(dataset)} samples, loss {loss:.4f})")
    print("confusion (rows true, cols predicted):")
    for y in range(K):
        print("  " + " ".join(f"{confusion[y, p]:5d}" for p in range(K)))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "eval_report.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# cadad eval checkpoint={os.path.basename(args.checkpoint)} mode={mode}\n")
            fh.write("true,predicted,count\n")
            for y in range(K):
                for p in range(K):
                    fh.write(f"{y},{p},{confusion[y, p]}\n")
        print(f"report {path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    out_dir = cfg.out_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    cfg.write_manifest(out_dir)
    modes = [m.strip() for m in cfg["ablate.modes"].split(",") if m.strip()]
    n_seeds = cfg["ablate.seeds"]
    train_set, eval_set = _datasets(cfg)
    run_rows = []
    summary = {}
    for mode in modes:
        accs, accs_disc = [], []
        for s in range(n_seeds):
            seed = cfg.seed + s
            net = cfg.build_network(delay_mode=mode, seed=seed)
            result = train(
                train_set.frames,
                train_set.labels,
                eval_set.frames,
                eval_set.labels,
                net,
                cfg.train_config(seed=seed),
            )
            net.set_params(result.best_params)
            acc_disc, _, _ = evaluate(
                net, eval_set.frames, eval_set.labels, result.best_epoch, discretize=True
            )
            accs.append(result.best_eval_acc)
            accs_disc.append(acc_disc)
            run_rows.append(
                (
                    mode,
                    seed,
                    result.best_eval_acc,
                    acc_disc,
                    result.best_epoch,
                    net.n_weight_params,
                    net.n_delay_params,
                )
            )
            print(
                f"mode={mode} seed={seed} eval_acc={result.best_eval_acc:.4f} "
                f"discretized={acc_disc:.4f}"
            )
        summary[mode] = (float(np.mean(accs)), float(np.mean(accs_disc)))
    with open(os.path.join(out_dir, "ablation_runs.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# cadad ablation seed={cfg.seed} seeds={n_seeds}\n")
        fh.write("mode,seed,eval_acc,eval_acc_discretized,best_epoch,weight_params,delay_params\n")
        for row in run_rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    with open(
        os.path.join(out_dir, "ablation_summary.csv"), "w", encoding="utf-8", newline="\n"
    ) as fh:
        fh.write(f"# cadad ablation seed={cfg.seed} seeds={n_seeds}\n")
        fh.write("mode,mean_eval_acc,mean_eval_acc_discretized\n")
        for mode in modes:
            fh.write(f"{mode},{summary[mode][0]:.6f},{summary[mode][1]:.6f}\n")
    print("mode mean_eval_acc mean_discretized")
    for mode in modes:
        print(f"{mode:8s} {summary[mode][0]:.4f} {summary[mode][1]:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    reports = [
        delay_read_gradcheck(seed=args.seed),
        network_gradcheck(seed=args.seed, mode="static"),
    ]
    ok = True
    for r in reports:
        status = "pass" if r.ok else "FAIL"
        print(
            f"{status} {r.name}: max rel err {r.max_rel_err:.3e} "
            f"(tol {r.tolerance:.0e}, {r.n_checks} checks, {r.elapsed_s:.2f}s)"
        )
        ok = ok and r.ok
    if not ok:
        raise NumericsError("gradient check failed")
    return 0


def cmd_diagnose(args) -> int:
    net, epoch, extra = Network.load(args.checkpoint)
    binning = extra.get("binning")
    if binning is None:
        raise ConfigError(f"{args.checkpoint}: no binning metadata; cannot bin raw events")
    from .data import BinningConfig

    streams, _, _ = load_event_file(args.data)
    dataset = bin_dataset(streams, BinningConfig(**binning))
    out_dir = os.environ.get("CADAD_OUT_DIR") or args.out
    os.makedirs(out_dir, exist_ok=True)
    report = diagnostics.dynamics_report(net, dataset.frames, epoch)
    diagnostics.write_dynamics_csv(
        os.path.join(out_dir, f"{args.run_id}_dynamics.csv"), report, note="diagnose"
    )
    for r in report:
        name = "total" if r.layer < 0 else f"layer {r.layer}"
        print(
            f"{name}: u={r.u:.2f} overflow={r.overflow:.2f} spikes={r.spikes:.0f} "
            f"overflow/spike={r.overflow_per_spike:.4f}"
        )
    spiking = [i for i in range(len(net.spec.layers)) if net.layer_is_spiking(i)]
    for layer in spiking:
        diagnostics.export_membrane_traces(
            net, dataset.frames[0], layer, epoch, out_dir=out_dir, run_id=args.run_id
        )
    diagnostics.export_congestion_timeseries(
        net, dataset.frames[0], epoch, out_dir=out_dir, run_id=args.run_id
    )
    print(f"wrote diagnostics to {out_dir}")
    return 0


def cmd_synth_data(args) -> int:
    cfg = _load_run_config(args)
    out_dir = cfg.out_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    cfg.write_manifest(out_dir)
    synth = cfg.synth()
    train_streams, eval_streams = synth_coincidence_task(synth, cfg.seed)
    train_path = os.path.join(out_dir, "train.events")
    eval_path = os.path.join(out_dir, "eval.events")
    save_event_file(train_path, train_streams, synth.channels, synth.n_classes)
    save_event_file(eval_path, eval_streams, synth.channels, synth.n_classes)
    print(f"wrote {len(train_streams)} train samples to {train_path}")
    print(f"wrote {len(eval_streams)} eval samples to {eval_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cadad",
        description="Spiking networks with congestion-aware dynamic axonal delays.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="path to a section.key = value config file")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override one config key (repeatable)",
        )
        p.add_argument("--out", help="output directory (CADAD_OUT_DIR wins over this)")

    p = sub.add_parser("train", help="train one network per the config")
    add_config_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on an event file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="event file to evaluate")
    p.add_argument(
        "--continuous-delays",
        action="store_true",
        help="keep fractional delays instead of the default integer rounding",
    )
    p.add_argument("--out", help="directory for eval_report.csv")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train mode x seed grid and summarize")
    add_config_args(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("diagnose", help="dynamics report and trace exports")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="event file to measure on")
    p.add_argument("--out", default="runs/diagnose")
    p.add_argument("--run-id", default="diag")
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("synth-data", help="write synthetic event files")
    add_config_args(p)
    p.set_defaults(fn=cmd_synth_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericsError, ContractError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (EventFileError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
