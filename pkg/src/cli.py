"""Command-line entry point: ``python src/cli.py <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Sequence

from errors import ConfigError, FogMonitorError
from gate import ato, duty_cycle_report, gate_sweep, run_gated, write_sweep_csv
from harness import (
    fold_seeds,
    label_ratio_sweep,
    load_cohort,
    make_attribute_split,
    make_logo_split,
    prepare_stream,
    run_logo,
    synth_cohort,
    synth_subjects,
    write_cohort,
    write_rows_csv,
)
from ingest import ColumnMapping, TDCS_MAPPING, load_canonical_csv, load_daphnet, load_mapped_csv, write_canonical_csv
from logging_utils import SERVICE_NAME, configure_logging, log_json
from metrics import evaluation_summary, format_report_text, majority_vote, episode_report, write_episode_csv, write_report_json
from predictions import read_trace_csv, write_trace_csv
from registry import RunManifest, RunRegistry, file_fingerprint, write_manifest
from selfsupervised import finetune, load_bundle, predict, pretrain, save_bundle, timing_profile, train_supervised
from settings import GateConfig, RunConfig
from tracing import initialize_tracing
from windowing import compare_segmentation, concat_windows, read_windowset, segment, write_windowset


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, FogMonitorError):
        return exc.exit_code
    return 1


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def _require_file(path: str | Path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    return path


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_env()
    if getattr(args, "config", None):
        config = config.merge_file(_require_file(args.config))
    items = getattr(args, "set", None) or []
    if any("=" not in item for item in items):
        raise ConfigError("--set expects key=value")
    overrides = dict(item.split("=", 1) for item in items)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    if getattr(args, "quiet", False):
        overrides["quiet"] = "true"
    return config.with_overrides(overrides)


def _load_stream(args: argparse.Namespace, config: RunConfig):
    path = _require_file(args.input)
    if args.format == "daphnet":
        return load_daphnet(path, sensor=args.sensor or config.data.daphnet_sensor)
    if args.format == "mapped":
        mapping = ColumnMapping.from_file(_require_file(args.mapping)) if args.mapping else TDCS_MAPPING
        return load_mapped_csv(path, mapping)
    return load_canonical_csv(path, unit=config.data.unit)


def _numbers(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _load_windows(paths: Sequence[str]):
    return concat_windows([read_windowset(_require_file(path)) for path in paths])


def _manifest(config: RunConfig, command: str, **fields) -> RunManifest:
    return RunManifest(command=command, config_hash=config.config_hash(), master_seed=config.seed, **fields)


def _record(config: RunConfig, manifest: RunManifest, rows=()) -> None:
    write_manifest(manifest, config.out_dir)
    RunRegistry.open(config.out_dir).record(manifest, rows)


def _model_manifest(config: RunConfig, command: str, bundle, windows, outputs) -> RunManifest:
    return _manifest(
        config,
        command,
        seeds={bundle.metadata.stage: bundle.metadata.seed},
        model_checksum=bundle.params.checksum(),
        test_fingerprints=[windows.fingerprint()],
        outputs=[str(path) for path in outputs],
    )


def cmd_resample(args: argparse.Namespace, config: RunConfig) -> int:
    stream = prepare_stream(_load_stream(args, config), args.rate or config.data.working_rate_hz)
    if stream.breaks:
        # canonical CSV has no notation for a break; the runs are written back to back
        log_json(logging.WARNING, "breaks_dropped", breaks=len(stream.breaks), path=str(args.output))
    write_canonical_csv(stream, args.output)
    _emit({"samples": len(stream), "rate_hz": stream.rate_hz, "fog_fraction": stream.fog_fraction})
    return 0


def cmd_segment(args: argparse.Namespace, config: RunConfig) -> int:
    stream = prepare_stream(_load_stream(args, config), config.data.working_rate_hz)
    spec = config.window.training() if args.mode == "train" else config.window.inference()
    windows = segment(stream, spec)
    write_windowset(windows, args.output)
    payload = {"windows": len(windows), "mixed_windows": windows.mixed_count}
    if args.compare:
        payload["segmentation"] = compare_segmentation([stream], config.window)
    _emit(payload)
    return 0


def cmd_pretrain(args: argparse.Namespace, config: RunConfig) -> int:
    windows = _load_windows(args.windows)
    seeds = fold_seeds(config.seed, 0)
    mask = replace(config.mask, rng_seed=seeds["mask"])
    bundle = pretrain(windows.unlabeled(), config.arch, config.train, mask, seeds["pretrain"])
    save_bundle(bundle, args.model, include_adam=args.keep_optimizer)
    _record(config, _manifest(config, "pretrain", seeds=seeds, train_fingerprints=[windows.fingerprint()], outputs=[str(args.model)]))
    _emit({"epochs": len(bundle.metadata.pretrain_losses), "final_loss": bundle.metadata.pretrain_losses[-1]})
    return 0


def cmd_finetune(args: argparse.Namespace, config: RunConfig) -> int:
    windows = _load_windows(args.windows)
    plan = config.train if args.label_fraction is None else replace(config.train, label_fraction=args.label_fraction)
    seeds = fold_seeds(config.seed, 0)
    if args.supervised:
        bundle = train_supervised(windows, config.arch, plan, seeds["supervised"])
    elif args.base:
        bundle = finetune(load_bundle(_require_file(args.base)), windows, plan, seeds["finetune"])
    else:
        raise ConfigError("finetune needs --base <pretrained model> or --supervised")
    save_bundle(bundle, args.model)
    _record(config, _manifest(config, "finetune", seeds=seeds, train_fingerprints=[windows.fingerprint()], outputs=[str(args.model)]))
    _emit({"labeled_windows": bundle.metadata.labeled_windows, "final_loss": bundle.metadata.train_losses[-1]})
    return 0


def cmd_infer(args: argparse.Namespace, config: RunConfig) -> int:
    bundle = load_bundle(_require_file(args.model))
    windows = _load_windows(args.windows)
    if args.alpha is None:
        trace = predict(bundle, windows)
        payload: dict = {"windows": len(trace)}
    else:
        trace = run_gated(windows, bundle.predictor(), GateConfig(alpha=args.alpha))
        payload = duty_cycle_report(trace).to_dict()
    write_trace_csv(trace, args.output)
    log_json(logging.INFO, "artifact_written", path=str(args.output))
    if args.timing:
        payload["timing"] = timing_profile(bundle, windows, [int(s) for s in _numbers(args.timing)], config.train)
    _record(config, _model_manifest(config, "infer", bundle, windows, [args.output]))
    _emit(payload)
    return 0


def cmd_gate_sweep(args: argparse.Namespace, config: RunConfig) -> int:
    bundle = load_bundle(_require_file(args.model))
    windows = _load_windows(args.windows)
    alphas = _numbers(args.alphas) if args.alphas else list(config.harness.alphas)
    rows = gate_sweep(windows, bundle.predictor(), alphas, metric=config.ato.baseline_metric.value)
    write_sweep_csv(rows, args.output, include_dfe=True)
    log_json(logging.INFO, "artifact_written", path=str(args.output), rows=len(rows))
    _record(config, _model_manifest(config, "gate-sweep", bundle, windows, [args.output]), [asdict(row) for row in rows])
    return 0


def cmd_ato(args: argparse.Namespace, config: RunConfig) -> int:
    bundle = load_bundle(_require_file(args.model))
    windows = _load_windows(args.windows)
    result = ato(windows, None, bundle.predictor(), config.ato)
    write_sweep_csv(result.sweep_log, args.output)
    _record(config, _model_manifest(config, "ato", bundle, windows, [args.output]), [asdict(row) for row in result.sweep_log])
    _emit(
        {
            "alpha_opt": result.alpha_opt,
            "active": int(result.active.size),
            "no_degradation_found": result.no_degradation_found,
            "break_alpha": result.break_alpha,
            "evaluations": result.evaluations,
        }
    )
    return 0


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    trace_path = _require_file(args.trace)
    trace = read_trace_csv(trace_path)
    passes = args.majority_vote if args.majority_vote is not None else 0
    if passes:
        trace = majority_vote(trace, passes)
    summary = evaluation_summary(trace)
    summary["majority_vote_passes"] = passes
    out = Path(config.out_dir)
    write_report_json(summary, out / "report.json")
    (out / "report.txt").write_text(format_report_text(summary), encoding="utf-8")
    write_episode_csv(episode_report(trace), out / "episodes.csv")
    outputs = [str(out / name) for name in ("report.json", "report.txt", "episodes.csv")]
    _record(config, _manifest(config, "evaluate", test_fingerprints=[file_fingerprint(trace_path)], outputs=outputs), [summary])
    sys.stdout.write(format_report_text(summary))
    return 0


def _cohort(args: argparse.Namespace, config: RunConfig):
    if args.synth:
        h = config.harness
        streams = synth_cohort(h.synth_subjects, h.synth_duration_s, h.synth_fog_rate, config.seed, config.data.working_rate_hz)
        return {s.subject_id: s for s in streams}, synth_subjects(streams, config.seed)
    if not config.data.data_dir:
        raise ConfigError("set data.data_dir (or FOGMON_DATA_DIR) or pass --synth")
    return load_cohort(config)


def _plan(args: argparse.Namespace, config: RunConfig, subjects):
    if args.split:
        return make_attribute_split(subjects, args.split, config.seed, config.harness.repeats)
    return make_logo_split(subjects, config.seed, config.harness.repeats)


def cmd_logo(args: argparse.Namespace, config: RunConfig) -> int:
    if args.reshuffle_groups:
        config = replace(config, harness=replace(config.harness, reshuffle_groups=True))
    cohort, subjects = _cohort(args, config)
    report = run_logo(config, _plan(args, config, subjects), cohort, out_dir=config.out_dir)
    _emit({"summary": report.summary_rows, "run_id": report.manifest.run_id})
    return 0


def cmd_label_sweep(args: argparse.Namespace, config: RunConfig) -> int:
    cohort, subjects = _cohort(args, config)
    fractions = _numbers(args.fractions) if args.fractions else None
    rows = label_ratio_sweep(config, _plan(args, config, subjects), cohort, fractions, out_dir=config.out_dir)
    _emit({"rows": rows})
    return 0


def cmd_synth(args: argparse.Namespace, config: RunConfig) -> int:
    h = config.harness
    streams = synth_cohort(
        args.subjects or h.synth_subjects,
        args.duration or h.synth_duration_s,
        h.synth_fog_rate if args.fog_rate is None else args.fog_rate,
        config.seed,
        config.data.working_rate_hz,
    )
    subjects = synth_subjects(streams, config.seed)
    path = write_cohort(streams, subjects, config.out_dir)
    write_rows_csv(
        [{"subject_id": s.subject_id, "samples": len(s), "fog_fraction": s.fog_fraction} for s in streams],
        ("subject_id", "samples", "fog_fraction"),
        Path(config.out_dir) / "cohort_summary.csv",
    )
    _emit({"subjects": len(streams), "subjects_file": str(path)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key=value config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="log warnings only")
    common.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE", help="override one config key")

    parser = argparse.ArgumentParser(prog="fogmon", description="FoG detection pipeline", parents=[common])
    commands = parser.add_subparsers(dest="command", required=True)

    def add(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, parents=[common], help=help_text)
        sub.set_defaults(handler=handler)
        return sub

    for name, handler, help_text in (
        ("resample", cmd_resample, "convert a recording to the working rate in canonical CSV"),
        ("segment", cmd_segment, "cut a recording into a window file"),
    ):
        sub = add(name, handler, help_text)
        sub.add_argument("input")
        sub.add_argument("output")
        sub.add_argument("--format", choices=("canonical", "daphnet", "mapped"), default="canonical")
        sub.add_argument("--mapping", help="column-mapping file for --format mapped")
        sub.add_argument("--sensor", choices=("ankle", "thigh", "trunk"))
        if name == "resample":
            sub.add_argument("--rate", type=float)
        else:
            sub.add_argument("--mode", choices=("train", "inference"), default="train")
            sub.add_argument("--compare", action="store_true", help="also report fixed vs DHWT class balance")

    sub = add("pretrain", cmd_pretrain, "masked-reconstruction pretraining")
    sub.add_argument("windows", nargs="+")
    sub.add_argument("--model", required=True)
    sub.add_argument("--keep-optimizer", action="store_true")

    sub = add("finetune", cmd_finetune, "train the classifier head (or a supervised baseline)")
    sub.add_argument("windows", nargs="+")
    sub.add_argument("--base", help="pretrained model file")
    sub.add_argument("--model", required=True)
    sub.add_argument("--label-fraction", type=float)
    sub.add_argument("--supervised", action="store_true")

    sub = add("infer", cmd_infer, "write a prediction trace")
    sub.add_argument("windows", nargs="+")
    sub.add_argument("--model", required=True)
    sub.add_argument("--output", required=True)
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--timing", help="comma-separated window counts to time")

    for name, handler, help_text in (
        ("gate-sweep", cmd_gate_sweep, "metrics and cost across gate thresholds"),
        ("ato", cmd_ato, "choose the gate threshold"),
    ):
        sub = add(name, handler, help_text)
        sub.add_argument("windows", nargs="+")
        sub.add_argument("--model", required=True)
        sub.add_argument("--output", required=True)
        if name == "gate-sweep":
            sub.add_argument("--alphas")

    sub = add("evaluate", cmd_evaluate, "window and episode reports for a trace")
    sub.add_argument("trace")
    sub.add_argument("--majority-vote", type=int, nargs="?", const=1, default=None, metavar="PASSES")

    for name, handler, help_text in (
        ("logo", cmd_logo, "leave-one-group-out evaluation"),
        ("label-sweep", cmd_label_sweep, "SSL vs supervised across label fractions"),
    ):
        sub = add(name, handler, help_text)
        sub.add_argument("--synth", action="store_true", help="use a synthetic cohort")
        sub.add_argument("--split", help="split by attribute instead of matched groups")
        if name == "logo":
            sub.add_argument("--reshuffle-groups", action="store_true")
        else:
            sub.add_argument("--fractions")

    sub = add("synth", cmd_synth, "write a synthetic cohort")
    sub.add_argument("--subjects", type=int)
    sub.add_argument("--duration", type=float)
    sub.add_argument("--fog-rate", type=float)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _resolve_config(args)
        configure_logging(SERVICE_NAME, quiet=config.quiet)
        initialize_tracing(SERVICE_NAME)
        return args.handler(args, config)
    except FogMonitorError as exc:
        log_json(logging.ERROR, "command_failed", command=args.command, error=type(exc).__name__, detail=str(exc))
        sys.stderr.write(f"error: {exc}\n")
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
