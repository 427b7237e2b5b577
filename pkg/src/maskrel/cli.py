"""Command-line surface: synth | simulate | calibrate | report | serve.

Every output file embeds the resolved run configuration and seed, so
any result can be regenerated byte-identically from its own header.
Precedence: built-in defaults < --config JSON file < explicit flags.
Exit codes: 0 ok, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import calibration as cal
from .model import PathwayConfig, PathwayOrder, stage_dump
from .staircase import trial_rng
from .stimulus import ConditionSpec, assemble_trial
from .wav import write_wav

OUTDIR_ENV = "MASKREL_OUT"
ORDER_TOKENS = {o.value: o for o in PathwayOrder}


class CliError(Exception):
    """Validation failure; reported and mapped to exit code 1."""


@dataclass
class RunConfig:
    experiment: str = "exp2"
    order: str = "all"
    seed: int = 1
    outdir: str = "."
    samples: int = 20
    runs: int = 5
    calibration_runs: int = 100
    anchor_diotic_rel: float = cal.CalibrationAnchors.diotic_rel_db
    anchor_dichotic_rel: float = cal.CalibrationAnchors.dichotic_rel_db
    sigma_file: str | None = None
    sigma_m: float | None = None
    sigma_b: float | None = None
    include_background_noise: bool = False
    dump_internals: bool = False
    jobs: int = 0  # 0 = use all available cores

    def resolved_jobs(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)

    def as_dict(self) -> dict:
        # outdir and jobs are execution parameters, not result-determining
        # configuration; leaving them out keeps regenerated outputs
        # byte-identical wherever and however they are re-run
        payload = asdict(self)
        payload.pop("outdir")
        payload.pop("jobs")
        return payload


def _orders_from_token(token: str) -> list[PathwayOrder]:
    if token == "all":
        return list(PathwayOrder)
    if token not in ORDER_TOKENS:
        raise CliError(
            f"unknown pathway order {token!r}; choose from "
            f"{sorted(ORDER_TOKENS)} or 'all'"
        )
    return [ORDER_TOKENS[token]]


def _experiment(name: str) -> cal.Experiment:
    if name not in cal.EXPERIMENTS:
        raise CliError(f"unknown experiment {name!r}; choose from "
                       f"{sorted(cal.EXPERIMENTS)}")
    return cal.EXPERIMENTS[name]


def _condition_from_args(args) -> ConditionSpec:
    from dataclasses import replace

    exp = _experiment(args.experiment)
    overrides = {
        key: value
        for key, value in (
            ("f0", args.f0),
            ("n_components", args.n_components),
            ("mistuning", args.mistuning_percent),
            ("target_freq", args.target_freq),
            ("masker_level", args.masker_level),
        )
        if value is not None
    }
    try:
        spec = exp.condition(args.ipd, args.tuning)
        if overrides:
            if "mistuning" in overrides and args.tuning == "harmonic":
                raise CliError(
                    "--mistuning-percent only applies with --tuning mistuned"
                )
            spec = replace(spec, **overrides)
        return spec
    except CliError:
        raise
    except ValueError as err:
        raise CliError(str(err)) from err


def build_config(args, keys: list[str]) -> RunConfig:
    """Merge defaults < environment < --config file < explicit flags."""
    cfg = RunConfig()
    if OUTDIR_ENV in os.environ:
        cfg.outdir = os.environ[OUTDIR_ENV]
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise CliError(f"cannot read config file: {err}") from err
        for key, value in loaded.items():
            if not hasattr(cfg, key):
                raise CliError(f"unknown config key {key!r}")
            setattr(cfg, key, value)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    return cfg


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    from dataclasses import replace

    spec = _condition_from_args(args)
    if args.with_noise:
        spec = replace(spec, include_background_noise=True)
    level = args.level
    rng = trial_rng([args.seed], args.trial)
    trial = assemble_trial(spec, level, rng)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.interval is not None:
        write_wav(out, trial.interval(args.interval))
        print(f"wrote {out} (interval {args.interval}, "
              f"target in interval {2 + trial.target_position})")
    else:
        write_wav(out, _concat_trial(trial, args.gap))
        print(f"wrote {out} (3 intervals, target in interval "
              f"{2 + trial.target_position})")
    if args.dump_stages:
        cfg = PathwayConfig(PathwayOrder.BINAURAL_THEN_MOD)
        target_interval = trial.comparison(trial.target_position)
        _write_stage_csv(
            args.dump_stages,
            stage_dump(target_interval, spec.is_mistuned, cfg,
                       center_freq=spec.target_freq),
        )
        print(f"wrote {args.dump_stages}")
    return 0


def _concat_trial(trial, gap_seconds: float):
    from .signals import MonoSignal, StereoSignal

    rate = trial.reference.sample_rate
    gap = np.zeros(int(round(gap_seconds * rate)))
    left = np.concatenate([
        trial.interval(1).left.samples, gap,
        trial.interval(2).left.samples, gap,
        trial.interval(3).left.samples,
    ])
    right = np.concatenate([
        trial.interval(1).right.samples, gap,
        trial.interval(2).right.samples, gap,
        trial.interval(3).right.samples,
    ])
    return StereoSignal(MonoSignal(left, rate), MonoSignal(right, rate))


def _write_stage_csv(path, stages: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "time_s", "value"])
        for name, (rate, samples) in stages.items():
            for i, v in enumerate(np.asarray(samples, dtype=float)):
                writer.writerow([name, i / rate, repr(v)])


# ------------------------------------------------------------- simulate


def _results_csv_path(outdir: Path, exp: str, order: PathwayOrder) -> Path:
    return outdir / f"results_{exp}_{order.value}.csv"


def _summary_json_path(outdir: Path, exp: str, order: PathwayOrder) -> Path:
    return outdir / f"summary_{exp}_{order.value}.json"


def write_results(
    result: cal.ExperimentResult, outdir: Path, run_config: RunConfig
) -> tuple[Path, Path]:
    provenance = {
        "run_config": run_config.as_dict(),
        "config_digest": cal.config_digest(run_config.as_dict()),
        "sigma_m": result.pathway_cfg.sigma_m,
        "sigma_b": result.pathway_cfg.sigma_b,
    }
    exp = result.experiment.name
    csv_path = _results_csv_path(outdir, exp, result.pathway_cfg.order)
    header = json.dumps(provenance, sort_keys=True)
    with open(csv_path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["experiment", "config", "ipd", "mistuning_percent",
             "sample", "threshold_db"]
        )
        for (ipd, tuning), results in result.samples.items():
            mist = (result.experiment.mistuning_percent
                    if tuning == "mistuned" else 0.0)
            for s, res in enumerate(results):
                writer.writerow([
                    exp, result.pathway_cfg.order.value, ipd, mist, s,
                    repr(res.mean_threshold),
                ])
    json_path = _summary_json_path(outdir, exp, result.pathway_cfg.order)
    payload = {**provenance, "summary": result.summary(),
               "human_reference": dict(cal.HUMAN_REFERENCE[exp])}
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def _load_sigmas(cfg: RunConfig, orders: list[PathwayOrder]) -> dict[PathwayOrder, PathwayConfig]:
    if cfg.sigma_file:
        data = json.loads(Path(cfg.sigma_file).read_text())
        out = {}
        for order in orders:
            entry = data["sigma_b"].get(order.value)
            if entry is None:
                raise CliError(f"sigma file has no entry for {order.value}")
            out[order] = PathwayConfig(
                order, sigma_m=data["sigma_m"], sigma_b=entry
            )
        return out
    if cfg.sigma_m is None or cfg.sigma_b is None:
        raise CliError(
            "sigma values required: pass --sigma-file from `maskrel "
            "calibrate`, or --sigma-m and --sigma-b"
        )
    return {
        order: PathwayConfig(order, sigma_m=cfg.sigma_m, sigma_b=cfg.sigma_b)
        for order in orders
    }


def cmd_simulate(args) -> int:
    cfg = build_config(args, [
        "experiment", "order", "seed", "outdir", "samples", "runs",
        "sigma_file", "sigma_m", "sigma_b", "jobs",
        "include_background_noise", "dump_internals",
    ])
    exp = _experiment(cfg.experiment)
    orders = _orders_from_token(cfg.order)
    pathway_cfgs = _load_sigmas(cfg, orders)
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for order in orders:
        result = cal.run_experiment(
            exp, pathway_cfgs[order], seed=cfg.seed,
            n_threshold_samples=cfg.samples, n_runs=cfg.runs,
            jobs=cfg.resolved_jobs(),
            include_background_noise=cfg.include_background_noise,
        )
        csv_path, json_path = write_results(result, outdir, cfg)
        if cfg.dump_internals:
            _dump_internals(exp, pathway_cfgs[order], cfg, outdir)
        rel = result.releases()
        print(f"{exp.name} {order.value}: release diotic "
              f"{rel['diotic']:+.2f} dB, dichotic {rel['dichotic']:+.2f} dB "
              f"-> {csv_path.name}, {json_path.name}")
    return 0


def _dump_internals(exp, pathway_cfg, cfg: RunConfig, outdir: Path) -> None:
    """One audited track per condition plus a stage dump, for inspection."""
    from .staircase import SimulatedObserver, run_track, write_track_log

    observer = SimulatedObserver(pathway_cfg)
    order = pathway_cfg.order.value
    for c_index, (ipd, tuning) in enumerate(cal.CONDITION_ORDER):
        spec = exp.condition(ipd, tuning)
        run = run_track(spec, observer, [cfg.seed, 97, c_index],
                        keep_records=True)
        write_track_log(
            run.records,
            outdir / f"track_{exp.name}_{order}_{ipd}_{tuning}.csv",
        )
    spec = exp.condition("dichotic", "mistuned")
    trial = assemble_trial(spec, 55.0, trial_rng([cfg.seed], 1))
    _write_stage_csv(
        outdir / f"stages_{exp.name}_{order}.csv",
        stage_dump(trial.comparison(trial.target_position),
                   spec.is_mistuned, pathway_cfg,
                   center_freq=spec.target_freq),
    )


# ------------------------------------------------------------ calibrate


def cmd_calibrate(args) -> int:
    cfg = build_config(args, [
        "experiment", "order", "seed", "outdir", "calibration_runs",
        "anchor_diotic_rel", "anchor_dichotic_rel", "jobs",
    ])
    exp = _experiment(cfg.experiment)
    orders = _orders_from_token(cfg.order)
    anchors = cal.CalibrationAnchors(
        diotic_rel_db=cfg.anchor_diotic_rel,
        dichotic_rel_db=cfg.anchor_dichotic_rel,
    )
    result = cal.calibrate(
        exp, anchors, seed=cfg.seed, orders=tuple(orders),
        n_runs=cfg.calibration_runs, jobs=cfg.resolved_jobs(),
    )
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    payload = {
        "run_config": cfg.as_dict(),
        "config_digest": cal.config_digest(cfg.as_dict()),
        "experiment": exp.name,
        "anchors": {"diotic_rel_db": anchors.diotic_rel_db,
                    "dichotic_rel_db": anchors.dichotic_rel_db},
        "sigma_m": result.sigma_m_fit.sigma,
        "sigma_m_fit": {
            "target_db": result.sigma_m_fit.target_threshold,
            "achieved_db": result.sigma_m_fit.achieved_threshold,
            "n_runs": result.sigma_m_fit.n_runs_used,
            "trace": result.sigma_m_fit.trace,
        },
        "sigma_b": {o.value: f.sigma for o, f in result.sigma_b_fits.items()},
        "sigma_b_fits": {
            o.value: {
                "target_db": f.target_threshold,
                "achieved_db": f.achieved_threshold,
                "n_runs": f.n_runs_used,
                "trace": f.trace,
            }
            for o, f in result.sigma_b_fits.items()
        },
        "sigma_reference_from_original_study": {
            "sigma_m": cal.SIGMA_REFERENCE["sigma_m"],
            "sigma_b": dict(cal.SIGMA_REFERENCE["sigma_b"]),
            "note": "scale-dependent values from a different internal "
                    "signal scale; metadata only",
        },
    }
    path = outdir / "calibration.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"sigma_m = {result.sigma_m_fit.sigma:.6g} "
          f"(achieved {result.sigma_m_fit.achieved_threshold:.2f} dB for "
          f"target {result.sigma_m_fit.target_threshold:.2f} dB)")
    for order, fit in result.sigma_b_fits.items():
        print(f"sigma_b[{order.value}] = {fit.sigma:.6g} "
              f"(achieved {fit.achieved_threshold:.2f} dB)")
    print(f"wrote {path}")
    return 0


# --------------------------------------------------------------- report


def cmd_report(args) -> int:
    summaries = []
    for path in args.results:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise CliError(f"cannot read results file {path}: {err}") from err
        if "summary" not in data:
            raise CliError(f"{path} is not a simulation summary")
        summaries.append(data)
    outdir = Path(args.outdir or os.environ.get(OUTDIR_ENV, "."))
    outdir.mkdir(parents=True, exist_ok=True)
    by_exp: dict[str, list[dict]] = {}
    for data in summaries:
        by_exp.setdefault(data["summary"]["experiment"], []).append(data)
    for exp_name, entries in sorted(by_exp.items()):
        _write_report(exp_name, entries, outdir)
    return 0


_HUMAN_ROWS = {
    ("release", "diotic"): "mistuning_release_diotic_db",
    ("release", "dichotic"): "mistuning_release_dichotic_db",
    ("bmld", "harmonic"): "bmld_harmonic_db",
    ("bmld", "mistuned"): "bmld_mistuned_db",
}


def _write_report(exp_name: str, entries: list[dict], outdir: Path) -> None:
    human = cal.HUMAN_REFERENCE.get(exp_name, {})
    table_path = outdir / f"report_{exp_name}.csv"
    plot_path = outdir / f"fig_release_{exp_name}.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "experiment", "config", "row", "key",
            "model_db", "model_std_db", "human_db",
        ])
        for data in entries:
            s = data["summary"]
            config = s["pathway_order"]
            for key, stats in s["conditions"].items():
                writer.writerow([
                    exp_name, config, "threshold", key,
                    f"{stats['mean_threshold_db']:.3f}",
                    f"{stats['std_db']:.3f}", "",
                ])
            for kind, values in (("release", s["mistuning_release_db"]),
                                 ("bmld", s["bmld_db"])):
                for sub, value in values.items():
                    ref = human.get(_HUMAN_ROWS.get((kind, sub), ""), "")
                    writer.writerow([
                        exp_name, config, kind, sub,
                        f"{value:.3f}", "", ref,
                    ])
    with open(plot_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "experiment", "config", "ipd", "release_db", "release_std_db",
            "human_release_db",
        ])
        for data in entries:
            s = data["summary"]
            for ipd in ("diotic", "dichotic"):
                rel = s["mistuning_release_db"][ipd]
                # harmonic and mistuned samples are independent draws, so
                # the release spread is the quadrature sum of their stds
                spread = float(np.hypot(
                    s["conditions"][f"{ipd}_harmonic"]["std_db"],
                    s["conditions"][f"{ipd}_mistuned"]["std_db"],
                ))
                ref = human.get(_HUMAN_ROWS.get(("release", ipd), ""), "")
                writer.writerow([
                    exp_name, s["pathway_order"], ipd,
                    f"{rel:.3f}", f"{spread:.3f}", ref,
                ])
    print(f"wrote {table_path} and {plot_path}")


# ---------------------------------------------------------------- serve


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        snapshot_dir=args.snapshot_dir,
        noise_seed=args.noise_seed,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# ----------------------------------------------------------------- main


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskrel",
        description="Complex-tone masking-release simulations and "
                    "listening sessions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write trial stimuli as WAV")
    synth.add_argument("--experiment", default="exp2")
    synth.add_argument("--ipd", choices=cal.IPD_LABELS, default="diotic")
    synth.add_argument("--tuning", choices=cal.TUNING_LABELS,
                       default="harmonic")
    synth.add_argument("--f0", type=float, default=None,
                       help="override the preset fundamental (Hz)")
    synth.add_argument("--n-components", dest="n_components", type=int,
                       default=None, help="override the component count")
    synth.add_argument("--mistuning-percent", dest="mistuning_percent",
                       type=float, default=None,
                       help="override the mistuning (with --tuning mistuned)")
    synth.add_argument("--target-freq", dest="target_freq", type=float,
                       default=None, help="override the target frequency (Hz)")
    synth.add_argument("--masker-level", dest="masker_level", type=float,
                       default=None, help="override the total masker level")
    synth.add_argument("--level", type=float, default=55.0,
                       help="target level in dB SPL")
    synth.add_argument("--seed", type=int, default=1)
    synth.add_argument("--trial", type=int, default=1,
                       help="trial number within the seed's session stream")
    synth.add_argument("--interval", type=int, choices=(1, 2, 3),
                       default=None,
                       help="write only this interval (default: full trial)")
    synth.add_argument("--gap", type=float, default=0.3,
                       help="inter-stimulus gap in seconds for full trials")
    synth.add_argument("--with-noise", action="store_true",
                       help="mix in the low-pass background noise")
    synth.add_argument("--dump-stages", default=None,
                       help="also write model stage outputs as CSV")
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)

    simulate = sub.add_parser("simulate", help="run model threshold tables")
    for p in (simulate,):
        p.add_argument("--config", default=None,
                       help="JSON file with RunConfig defaults")
        p.add_argument("--experiment", default=None)
        p.add_argument("--order", default=None,
                       help="pathway order token or 'all'")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--outdir", default=None)
    simulate.add_argument("--samples", type=int, default=None,
                          help="simulated thresholds per condition")
    simulate.add_argument("--runs", type=int, default=None,
                          help="adaptive tracks per threshold sample")
    simulate.add_argument("--sigma-file", dest="sigma_file", default=None)
    simulate.add_argument("--sigma-m", dest="sigma_m", type=float,
                          default=None)
    simulate.add_argument("--sigma-b", dest="sigma_b", type=float,
                          default=None)
    simulate.add_argument("--jobs", type=int, default=None)
    simulate.add_argument("--with-noise", dest="include_background_noise",
                          action="store_const", const=True, default=None,
                          help="add per-interval background noise to the "
                               "simulated stimuli")
    simulate.add_argument("--dump-internals", dest="dump_internals",
                          action="store_const", const=True, default=None,
                          help="write per-condition track logs and a model "
                               "stage dump")
    simulate.set_defaults(func=cmd_simulate)

    calibrate = sub.add_parser("calibrate", help="fit internal noise")
    calibrate.add_argument("--config", default=None)
    calibrate.add_argument("--experiment", default=None)
    calibrate.add_argument("--order", default=None)
    calibrate.add_argument("--seed", type=int, default=None)
    calibrate.add_argument("--outdir", default=None)
    calibrate.add_argument("--calibration-runs", dest="calibration_runs",
                           type=int, default=None)
    calibrate.add_argument("--anchor-diotic-rel", dest="anchor_diotic_rel",
                           type=float, default=None)
    calibrate.add_argument("--anchor-dichotic-rel",
                           dest="anchor_dichotic_rel", type=float,
                           default=None)
    calibrate.add_argument("--jobs", type=int, default=None)
    calibrate.set_defaults(func=cmd_calibrate)

    report = sub.add_parser("report", help="summary tables and plot data")
    report.add_argument("results", nargs="+",
                        help="summary JSON files from `maskrel simulate`")
    report.add_argument("--outdir", default=None)
    report.set_defaults(func=cmd_report)

    serve = sub.add_parser("serve", help="run the listening service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--snapshot-dir", dest="snapshot_dir", default=None)
    serve.add_argument("--noise-seed", dest="noise_seed", type=int, default=0)
    serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
