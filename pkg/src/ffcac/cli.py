"""Command-line interface.

Subcommands: synth-data, run, ablate, count-complexity, report.
Exit codes: 0 ok, 2 config, 3 IO, 4 numeric, 5 protocol violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import classifiers as cls
from . import encoder as enc
from . import sessions
from .audio import ManifestRow, SynthConfig, synth_class_waveform, write_manifest, write_wav
from .config import ast_base_config, default_config, load_config
from .errors import ConfigError, FfcacError, IngestionError


def _threads_default() -> int:
    raw = os.environ.get("FFCAC_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def cmd_synth_data(args) -> int:
    if args.classes < 1:
        raise ConfigError(f"--classes must be >= 1, got {args.classes}")
    if args.per_class < 2:
        raise ConfigError(f"--per-class must be >= 2, got {args.per_class}")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IngestionError(f"cannot create output dir {out}: {e}") from e
    cfg = SynthConfig(num_classes=args.classes, noise_amplitude=args.noise)
    train_per_class = max(1, int(round(args.train_fraction * args.per_class)))
    if train_per_class >= args.per_class:
        train_per_class = args.per_class - 1
    rows = []
    for c in range(args.classes):
        label = f"class{c:02d}"
        for i in range(args.per_class):
            seed_rng = sessions._rng(args.seed, c, i)
            wav = synth_class_waveform(c, int(seed_rng.integers(0, 2**31 - 1)), cfg)
            name = f"{label}_{i:03d}.wav"
            try:
                write_wav(out / name, wav)
            except OSError as e:
                raise IngestionError(f"cannot write {out / name}: {e}") from e
            rows.append(ManifestRow(path=name, label=label,
                                    split="train" if i < train_per_class else "test"))
    try:
        write_manifest(out / "manifest.csv", rows)
    except OSError as e:
        raise IngestionError(f"cannot write manifest: {e}") from e
    print(f"wrote {len(rows)} clips for {args.classes} classes to {out}")
    return 0


def _write_run_outputs(out: Path, report, cfg, last) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(sessions.report_to_json(report, cfg), encoding="utf-8")
        (out / "report.csv").write_text(sessions.report_to_csv(report), encoding="utf-8")
        enc.save_params(out / "mee.weights", last.params)
        if isinstance(last.classifier, cls.RidgeState):
            cls.save_state(out / "classifier.weights", last.classifier)
    except OSError as e:
        raise IngestionError(f"cannot write outputs to {out}: {e}") from e


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.threads is not None or "FFCAC_THREADS" in os.environ:
        threads = args.threads if args.threads is not None else _threads_default()
        cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, threads=threads))
    report, last = sessions.run_repeated(cfg, keep_last=True)
    _write_run_outputs(Path(args.out), report, cfg, last)
    accs = " ".join(f"{a:.4f}" for a in report.mean_accuracies)
    print(f"sessions: {len(report.mean_accuracies)}  mean A_m: {accs}")
    print(f"AA {report.mean_aa:.4f} +/- {report.std_aa:.4f}   "
          f"PD {report.mean_pd:.4f} +/- {report.std_pd:.4f}")
    print(f"outputs in {args.out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if args.fusion != "both":
        grid_fusion = [args.fusion == "on"]
    else:
        grid_fusion = [False, True]
    if args.classifier != "both":
        grid_classifier = [args.classifier]
    else:
        grid_classifier = ["pbc", "rrc"]
    rows = []
    for kind in grid_classifier:
        for use_fusion in grid_fusion:
            case_cfg = dataclasses.replace(
                cfg,
                encoder=dataclasses.replace(cfg.encoder, use_fusion=use_fusion),
                classifier=dataclasses.replace(cfg.classifier, kind=kind),
            )
            report = sessions.run_repeated(case_cfg)
            rows.append((use_fusion, kind, report))
    header = ["fusion", "classifier"]
    n_sessions = len(rows[0][2].mean_accuracies)
    header += [f"A_{m}" for m in range(n_sessions)] + ["AA", "PD"]
    lines = [",".join(header)]
    for use_fusion, kind, report in rows:
        cells = ["on" if use_fusion else "off", kind]
        cells += [f"{a:.4f}" for a in report.mean_accuracies]
        cells += [f"{report.mean_aa:.4f}", f"{report.mean_pd:.4f}"]
        lines.append(",".join(cells))
    table = "\n".join(lines) + "\n"
    print(table, end="")
    if args.out:
        try:
            Path(args.out).write_text(table, encoding="utf-8")
        except OSError as e:
            raise IngestionError(f"cannot write {args.out}: {e}") from e
    return 0


def cmd_count_complexity(args) -> int:
    if args.preset == "ast-base":
        enc_cfg = ast_base_config()
        num_classes = args.num_classes if args.num_classes is not None else 100
    else:
        cfg = load_config(args.config) if args.config else default_config()
        enc_cfg = cfg.encoder_config()
        num_classes = args.num_classes if args.num_classes is not None else (
            cfg.synth.num_classes if cfg.data.source == "synth"
            else cfg.plan.base_classes + cfg.plan.sessions * cfg.plan.inc_classes
        )
    report = enc.count_params_macs(enc_cfg, num_classes)
    if args.json:
        print(json.dumps({
            "num_params": report.num_params,
            "num_params_extractor": report.num_params_extractor,
            "num_params_classifier": report.num_params_classifier,
            "macs": report.macs,
        }, indent=2))
    else:
        print(f"parameters: {report.num_params} "
              f"(extractor {report.num_params_extractor}, classifier {report.num_params_classifier})")
        print(f"macs per clip: {report.macs}")
    return 0


def cmd_report(args) -> int:
    path = Path(args.json_path)
    if not path.exists():
        raise IngestionError(f"{path}: no such report")
    csv_text = sessions.json_report_to_csv(path.read_text(encoding="utf-8"))
    if args.csv:
        try:
            Path(args.csv).write_text(csv_text, encoding="utf-8")
        except OSError as e:
            raise IngestionError(f"cannot write {args.csv}: {e}") from e
    else:
        print(csv_text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ffcac",
        description="Fully few-shot class-incremental audio classification lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="emit synthetic WAV clips + manifest")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--train-fraction", type=float, default=0.6)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("run", help="run the full session protocol")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None,
                   help="parallel runs (default 1; env FFCAC_THREADS)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("ablate", help="fusion x classifier ablation grid")
    p.add_argument("--config", required=True)
    p.add_argument("--fusion", choices=["on", "off", "both"], default="both")
    p.add_argument("--classifier", choices=["rrc", "pbc", "both"], default="both")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("count-complexity", help="parameter and MAC census")
    p.add_argument("--config", default=None)
    p.add_argument("--preset", choices=["ast-base"], default=None)
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_count_complexity)

    p = sub.add_parser("report", help="re-render a report JSON as CSV")
    p.add_argument("json_path")
    p.add_argument("--csv", default=None)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FfcacError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
