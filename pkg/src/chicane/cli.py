"""Command-line front door.

Subcommands cover the whole experiment lifecycle: data generation, model
training, single drives, threshold calibration, the cross-track evaluation
grid, the live telemetry server, and the PID tuning sweep. Every command
writes its artifacts plus a ``manifest.json`` with content hashes into the
output directory. Configs are JSON; ``--config`` takes a file path or the
bundled name ``reference``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .data import Dataset
from .forest import load_forest, save_forest
from .hashing import sha256_of_file, sha256_of_json
from .mlp import load_mlp, save_mlp
from .supervisor import SupervisorConfig


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig,
                    artifacts: list[Path]) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config_hash": sha256_of_json(cfg.to_dict()),
        "artifacts": {p.name: sha256_of_file(p) for p in artifacts},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(path_or_name: str, cfg: ExperimentConfig):
    if path_or_name in ("pid", "expert", "oracle"):
        return path_or_name
    p = Path(path_or_name)
    if not p.exists():
        raise SystemExit(
            f"model file {p} does not exist; produce one with "
            "`chicane train-rf` or `chicane train-mlp`"
        )
    kind = json.loads(p.read_text()).get("kind")
    if kind == "random-forest":
        return load_forest(p, expected_beam_count=cfg.lidar.beam_count)
    if kind == "mlp":
        return load_mlp(p, expected_beam_count=cfg.lidar.beam_count)
    raise SystemExit(f"{p}: unknown model kind {kind!r}")


def _load_dataset(path: str) -> Dataset:
    p = Path(path)
    if not p.exists():
        raise SystemExit(
            f"dataset {p} does not exist; produce it with `chicane gen-data`"
        )
    return Dataset.load(p)


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args) -> int:
    from .experiment import collect_dataset

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, collect_seed=args.seed)
    out = _out_dir(args)
    ds = collect_dataset(cfg, track_ref=args.track, laps=args.laps)
    path = out / "dataset.csv"
    ds.save(path)
    _write_manifest(out, "gen-data", cfg,
                    [path, path.with_name("dataset.meta.json")])
    print(f"wrote {len(ds)} samples to {path}")
    return 0


def cmd_train_rf(args) -> int:
    from .experiment import train_rf

    cfg = load_config(args.config)
    out = _out_dir(args)
    ds = _load_dataset(args.data)
    if args.size is not None:
        ds = ds.subset(args.size, seed=args.seed if args.seed is not None else 0)
    forest = train_rf(ds, cfg, seed=args.seed)
    path = out / "forest.json"
    save_forest(forest, path)
    _write_manifest(out, "train-rf", cfg, [path])
    print(f"trained {forest.config.n_trees} trees on {len(ds)} samples -> {path}")
    return 0


def cmd_train_mlp(args) -> int:
    from .experiment import train_mlp

    cfg = load_config(args.config)
    out = _out_dir(args)
    ds = _load_dataset(args.data)
    if args.size is not None:
        ds = ds.subset(args.size, seed=args.seed if args.seed is not None else 0)
    model = train_mlp(ds, cfg, seed=args.seed)
    path = out / "mlp.json"
    save_mlp(model, path)
    h = model.history
    _write_manifest(out, "train-mlp", cfg, [path])
    print(f"trained {h['epochs_run']} epochs (best val MSE {h['best_val_mse']:.5f}) -> {path}")
    return 0


def cmd_drive(args) -> int:
    from .experiment import drive

    cfg = load_config(args.config)
    out = _out_dir(args)
    model = _load_model(args.model, cfg)
    supervisor = None
    if args.supervised:
        if args.thresholds is None:
            raise SystemExit(
                "--supervised needs --thresholds; produce one with `chicane calibrate`"
            )
        tp = Path(args.thresholds)
        if not tp.exists():
            raise SystemExit(
                f"thresholds file {tp} does not exist; produce it with `chicane calibrate`"
            )
        t = json.loads(tp.read_text())
        supervisor = SupervisorConfig(
            cov_on=t["cov_on"], cov_off=t["cov_off"],
            min_fallback_steps=t.get("min_fallback_steps", cfg.supervisor_dwell),
            eps=t.get("eps", cfg.cov_eps),
        )
    log = drive(model, args.track, cfg, supervisor=supervisor)
    log_path = out / "log.csv"
    log.write_csv(log_path)
    summary = log.summary()
    summary["log_hash"] = log.content_hash()
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=1))
    artifacts = [log_path, summary_path]
    _write_manifest(out, "drive", cfg, artifacts)
    print(f"{args.track}: {log.event} lap_fraction={log.lap_fraction:.3f}")
    return 0 if log.event != "aborted" else 1


def cmd_evaluate(args) -> int:
    from .experiment import evaluate

    cfg = load_config(args.config)
    out = _out_dir(args)
    dataset = _load_dataset(args.data) if args.data else None
    report = evaluate(cfg, out, dataset=dataset, make_figures=not args.no_figures)
    check = report["soft_checks"]["rf_generalizes_at_least_as_well"]
    print(json.dumps(report["aggregates"], indent=1))
    print(f"soft check (rf >= mlp on {check['track']} at n={check['size']}): "
          f"rf={check['rf_mean_lap_fraction']:.3f} "
          f"mlp={check['mlp_mean_lap_fraction']:.3f} "
          f"{'PASS' if check['passed'] else 'FAIL'}")
    return 0


def cmd_calibrate(args) -> int:
    from .experiment import calibrate

    cfg = load_config(args.config)
    out = _out_dir(args)
    model = _load_model(args.model, cfg)
    ds = _load_dataset(args.data)
    sup = calibrate(model, ds, cfg)
    path = out / "thresholds.json"
    path.write_text(json.dumps({
        "cov_on": sup.cov_on, "cov_off": sup.cov_off,
        "min_fallback_steps": sup.min_fallback_steps, "eps": sup.eps,
        "quantile": cfg.supervisor_quantile,
    }, sort_keys=True, indent=1))
    _write_manifest(out, "calibrate", cfg, [path])
    print(f"cov_on={sup.cov_on:.4f} cov_off={sup.cov_off:.4f} -> {path}")
    return 0


def cmd_serve(args) -> int:
    from .telemetry import LiveSession, serve

    cfg = load_config(args.config)
    model = _load_model(args.model, cfg)
    supervisor = None
    if args.thresholds:
        t = json.loads(Path(args.thresholds).read_text())
        supervisor = SupervisorConfig(
            cov_on=t["cov_on"], cov_off=t["cov_off"],
            min_fallback_steps=t.get("min_fallback_steps", cfg.supervisor_dwell),
            eps=t.get("eps", cfg.cov_eps),
        )
    session = LiveSession(
        cfg, args.track, model, supervisor=supervisor,
        time_scale=args.time_scale,
        out_dir=Path(args.out) if args.out else None,
        episode_laps=args.laps,
    )
    ui = Path(args.ui) if args.ui else None
    print(f"serving ws://{args.host}:{args.port}/ws (track {args.track})")
    serve(session, host=args.host, port=args.port, ui_dir=ui)
    return 0


def cmd_tune_pid(args) -> int:
    from .controllers import PidExpertController
    from .pid import ExpertConfig, PidGains
    from .sim import EpisodeLimits, run_episode
    from .track import resolve_track

    cfg = load_config(args.config)
    out = _out_dir(args)
    track = resolve_track(args.track)
    rows = []
    best = None
    for kp in args.kp:
        for kd in args.kd:
            for kpsi in args.kpsi:
                for la in args.lookahead:
                    ecfg = ExpertConfig(
                        steer_gains=PidGains(kp=kp, ki=0.0, kd=kd, integral_limit=2.0),
                        speed_gains=cfg.expert.speed_gains,
                        heading_weight=kpsi, lookahead_m=la,
                    )
                    ctrl = PidExpertController(track, cfg.target_speed_mps,
                                               1.0 / cfg.control_hz, ecfg)
                    log = run_episode(
                        track, ctrl, cfg.sim, cfg.lidar,
                        limits=EpisodeLimits(
                            laps=1, max_steps=cfg.episode_max_steps(track.total_length)),
                        control_hz=cfg.control_hz,
                        initial_speed=cfg.target_speed_mps,
                    )
                    max_d = float(np.abs(log.data["d"]).max())
                    ok = log.event == "lap_complete"
                    rows.append((kp, kd, kpsi, la, log.event, max_d))
                    score = (ok, -max_d)
                    if best is None or score > best[0]:
                        best = (score, ecfg, max_d, log.event)
                    print(f"kp={kp} kd={kd} k_psi={kpsi} L_a={la}: {log.event} "
                          f"max|d|={max_d:.3f}")
    table = out / "tuning.csv"
    with open(table, "w") as fh:
        fh.write("kp,kd,heading_weight,lookahead_m,event,max_abs_d\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    _, ecfg, max_d, event = best
    best_path = out / "best_gains.json"
    best_path.write_text(json.dumps({
        "steer_gains": {"kp": ecfg.steer_gains.kp, "ki": ecfg.steer_gains.ki,
                        "kd": ecfg.steer_gains.kd,
                        "integral_limit": ecfg.steer_gains.integral_limit,
                        "output_limit": ecfg.steer_gains.output_limit},
        "heading_weight": ecfg.heading_weight,
        "lookahead_m": ecfg.lookahead_m,
        "event": event, "max_abs_d": max_d,
    }, sort_keys=True, indent=1))
    _write_manifest(out, "tune-pid", cfg, [table, best_path])
    print(f"best: kp={ecfg.steer_gains.kp} kd={ecfg.steer_gains.kd} "
          f"k_psi={ecfg.heading_weight} L_a={ecfg.lookahead_m} (max|d|={max_d:.3f})")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chicane",
                                description="learned lateral control testbed")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", default="reference",
                        help="bundled config name or JSON path (default: reference)")
        if out_required:
            sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the relevant seed")

    sp = sub.add_parser("gen-data", help="drive the PID expert and record a dataset")
    common(sp)
    sp.add_argument("--track", default=None, help="preset name or track JSON path")
    sp.add_argument("--laps", type=int, default=None)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train-rf", help="fit the random forest")
    common(sp)
    sp.add_argument("--data", required=True, help="dataset CSV from gen-data")
    sp.add_argument("--size", type=int, default=None, help="train on a subset")
    sp.set_defaults(fn=cmd_train_rf)

    sp = sub.add_parser("train-mlp", help="train the neural network")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--size", type=int, default=None)
    sp.set_defaults(fn=cmd_train_mlp)

    sp = sub.add_parser("drive", help="run one episode with a trained model or the expert")
    common(sp)
    sp.add_argument("--model", required=True,
                    help="model JSON path, or 'pid' for the expert")
    sp.add_argument("--track", required=True)
    sp.add_argument("--supervised", action="store_true",
                    help="gate the forest with the CoV supervisor")
    sp.add_argument("--thresholds", default=None, help="thresholds.json from calibrate")
    sp.set_defaults(fn=cmd_drive)

    sp = sub.add_parser("evaluate", help="the cross-track generalization experiment")
    common(sp)
    sp.add_argument("--data", default=None,
                    help="reuse a dataset CSV instead of collecting")
    sp.add_argument("--no-figures", action="store_true")
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("calibrate", help="pick CoV takeover thresholds")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.set_defaults(fn=cmd_calibrate)

    sp = sub.add_parser("serve", help="live episode over websocket (cockpit backend)")
    common(sp, out_required=False)
    sp.add_argument("--out", default=None, help="where to write the episode log")
    sp.add_argument("--model", required=True)
    sp.add_argument("--track", required=True)
    sp.add_argument("--thresholds", default=None,
                    help="enables supervised takeover when given")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8700)
    sp.add_argument("--time-scale", type=float, default=1.0,
                    help="1.0 = real time, 0 = as fast as possible")
    sp.add_argument("--laps", type=int, default=None)
    sp.add_argument("--ui", default=None, help="serve a cockpit UI build from this dir")
    sp.set_defaults(fn=cmd_serve)

    sp = sub.add_parser("tune-pid", help="grid-search expert gains on a track")
    common(sp)
    sp.add_argument("--track", default="train-a")
    sp.add_argument("--kp", type=float, nargs="+", default=[0.6, 1.0, 1.2, 1.4])
    sp.add_argument("--kd", type=float, nargs="+", default=[0.1, 0.15, 0.3])
    sp.add_argument("--kpsi", type=float, nargs="+", default=[1.5, 2.0])
    sp.add_argument("--lookahead", type=float, nargs="+", default=[8.0, 10.0])
    sp.set_defaults(fn=cmd_tune_pid)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
