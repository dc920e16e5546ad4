"""Command-line interface: ``shoutcomp <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .compensation import (CompensationModel, Gating, MemlinCross, Technique,
                           compensate_dataset, train_memlin, train_ratz, train_splice)
from .data import DEFAULT_DELIMITER, Dataset, Domain, align_stereo, load_dataset, save_dataset
from .detector import DEFAULT_L2, predict_shouted_prob, train_detector, training_accuracy
from .errors import DataError, ModelFormatError, NumericalError
from .evaluation import (ALL_CONDITIONS, TABLE_COLUMNS, Condition, ExperimentSettings,
                         det_points, detector_metrics, evaluate_condition, format_table,
                         length_normalize, loso_evaluate, make_trials, score_trials,
                         write_det_csv, write_table_csv)
from .gmm import DEFAULT_COMPONENTS, EMConfig, fit_em
from .serialization import load_model, save_model
from .synthgen import SynthConfig, generate

log = logging.getLogger("shoutcomp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _conditions(values) -> list[Condition]:
    if not values:
        return list(ALL_CONDITIONS)
    out = []
    for v in values:
        for part in str(v).split(","):
            if part.strip():
                try:
                    out.append(Condition.parse(part.strip()))
                except ValueError:
                    raise UsageError(f"unknown condition {part!r}") from None
    return out


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _setup_run_log(out: Path, command: str) -> logging.Handler:
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler.stream.write(f"# shoutcomp {__version__} {command} "
                         f"started {time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
    logging.getLogger().addHandler(handler)
    return handler


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _settings(args) -> ExperimentSettings:
    return ExperimentSettings(k=args.k, l2=args.l2, seed=args.seed,
                              gender_dependent=args.gender_dependent,
                              delimiter=args.delimiter, memlin_cross=args.memlin_cross)


# ----------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    fields = {f: getattr(args, f) for f in (
        "n_speakers", "n_contents", "dim", "speaker_spread", "within_speaker_noise",
        "n_shift_clusters", "shift_magnitude", "gender_offset_magnitude", "shift_coherence")}
    config = SynthConfig(seed=args.seed, **fields)
    ds = generate(config)
    out = Path(args.out)
    if not out.is_dir():
        raise DataError(f"output directory {out} does not exist")
    path = out / f"synth.{args.format}"
    try:
        save_dataset(ds, path, args.format)
        _write_json(config.to_dict(), out / "synth_config.json")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    print(f"wrote {len(ds)} records to {path}")
    return EXIT_OK


def _fit_logged(data, name, args, em, seed):
    res = fit_em(data, args.k, em, seed=seed, return_history=True)
    log.info("%s GMM: K=%d, %d EM iterations, converged=%s", name, args.k,
             len(res.loglik) - 1, res.converged)
    log.info("%s GMM log-likelihood trajectory: %s", name,
             " ".join(f"{v:.6f}" for v in res.loglik))
    return res.gmm


def cmd_train(args) -> int:
    ds = load_dataset(args.data, args.format)
    out = _out_dir(args)
    _setup_run_log(out, "train")
    shouted = ds.matrix[ds.domain_mask(Domain.SHOUTED)]
    normal = ds.matrix[ds.domain_mask(Domain.NORMAL)]
    detector = train_detector(shouted, normal, l2=args.l2)
    save_model(detector, out / "detector.json")
    acc = training_accuracy(detector, shouted, normal)
    log.info("detector training accuracy: %.6f", acc)
    print(f"detector: training accuracy {100 * acc:.2f}%")
    if args.technique == "none":
        return EXIT_OK

    tech = Technique(args.technique)
    pairs = align_stereo(ds, args.delimiter)
    em = EMConfig()

    def fit(sub, tag):
        normal_gmm = shouted_gmm = None
        if tech in (Technique.RATZ, Technique.MEMLIN):
            normal_gmm = _fit_logged(sub.x, f"{tag}normal", args, em, args.seed)
        if tech in (Technique.SPLICE, Technique.MEMLIN):
            shouted_gmm = _fit_logged(sub.y, f"{tag}shouted", args, em, args.seed + 1)
        if tech is Technique.RATZ:
            table = train_ratz(sub, normal_gmm)
        elif tech is Technique.SPLICE:
            table = train_splice(sub, shouted_gmm)
        else:
            table = train_memlin(sub, normal_gmm, shouted_gmm)
        return CompensationModel(tech, table, normal_gmm, shouted_gmm,
                                 memlin_cross=args.memlin_cross)

    model = fit(pairs, "")
    partition = {}
    if args.gender_dependent:
        for g in sorted({g for g in pairs.genders if g is not None}, key=lambda g: g.value):
            sub = pairs.select([pg is g for pg in pairs.genders])
            partition[g] = fit(sub, f"gender {g.value} ")
        model = CompensationModel(tech, model.table, model.normal_gmm, model.shouted_gmm,
                                  partition or None, model.memlin_cross)
    written = ["detector.json"]
    if model.normal_gmm is not None:
        save_model(model.normal_gmm, out / "normal_gmm.json")
        written.append("normal_gmm.json")
    if model.shouted_gmm is not None:
        save_model(model.shouted_gmm, out / "shouted_gmm.json")
        written.append("shouted_gmm.json")
    save_model(model.table, out / f"{tech.value}_table.json")
    save_model(model, out / "compensation.json")
    written += [f"{tech.value}_table.json", "compensation.json"]
    print(f"{tech.label}: {len(pairs)} stereo pairs, K={args.k}; wrote {', '.join(written)}")
    return EXIT_OK


def _load_detector(args):
    path = Path(args.models) / "detector.json"
    return load_model(path, "logistic_detector")


def cmd_detect(args) -> int:
    ds = load_dataset(args.data, args.format)
    det = _load_detector(args)
    out = _out_dir(args)
    prob = np.atleast_1d(predict_shouted_prob(det, ds.matrix))
    decision = det.logit(ds.matrix) > 0
    with (out / "detections.csv").open("w") as fh:
        fh.write("id,p_shouted,decision\n")
        for rid, p, d in zip(ds.ids, prob, decision):
            fh.write(f"{rid},{float(p)!r},{'shouted' if d else 'normal'}\n")
    labelled = ~ds.domain_mask(Domain.UNKNOWN)
    print(f"{int(decision.sum())} of {len(ds)} records detected as shouted")
    if labelled.any():
        m = detector_metrics(decision[labelled], ds.domain_mask(Domain.SHOUTED)[labelled])
        print(f"accuracy {100 * m.accuracy:.2f}%, shouted miss {100 * m.shouted_miss_rate:.2f}%, "
              f"normal miss {100 * m.normal_miss_rate:.2f}%")
    return EXIT_OK


def cmd_compensate(args) -> int:
    ds = load_dataset(args.data, args.format)
    gating = Gating(args.gating)
    model = detector = None
    if gating is not Gating.NONE:
        model = load_model(Path(args.models) / "compensation.json", "compensation")
    if gating is Gating.DETECTED:
        detector = _load_detector(args)
    comp = compensate_dataset(model, detector, ds, gating)
    out = _out_dir(args)
    path = out / f"compensated.{args.format}"
    save_dataset(comp, path, args.format)
    changed = int(np.sum(np.any(comp.matrix != ds.matrix, axis=1)))
    print(f"compensated {changed} of {len(ds)} records; wrote {path}")
    return EXIT_OK


def _export_eval(pooled: dict, out: Path, conditions, by_gender: bool, title: str,
                 meta: dict) -> dict:
    """Score every column on every condition; write summary and DET files."""
    table = {}
    for cond in conditions:
        row = {}
        for col, ds in pooled.items():
            row[col] = evaluate_condition(ds, cond, by_gender)
            scored = score_trials(make_trials(ds, cond), ds)
            write_det_csv(det_points(scored), out / f"det_{cond.value}_{col.lower()}.csv")
        table[cond] = row
    write_table_csv(table, out / "summary.csv")
    meta = dict(meta, columns=[c for c in TABLE_COLUMNS if c in pooled],
                conditions=[c.label for c in conditions],
                eer_percent={c.label: {k: 100.0 * v for k, v in row.items()}
                             for c, row in table.items()})
    _write_json(meta, out / "summary.json")
    text = format_table(table, title)
    (out / "summary.txt").write_text(text + "\n")
    print(text)
    return table


def _variant_title(gating: Gating, gender_dependent: bool) -> str:
    title = f"EER (%), {gating.value} shouted-speech gating"
    if gender_dependent:
        title += ", gender-dependent compensation (averaged across genders)"
    return title


def _loso_tables(ds: Dataset, args, techniques, gatings, out: Path, conditions):
    settings = _settings(args)
    results = loso_evaluate(ds, techniques, gatings, settings)
    reports = {}
    for gating in gatings:
        sub = out / gating.value if len(gatings) > 1 else out
        sub.mkdir(parents=True, exist_ok=True)
        pooled = {"Baseline": results[(None, Gating.NONE)].pooled}
        for tech in techniques:
            pooled[tech.label] = results[(tech, gating)].pooled
        meta = {"protocol": "leave-one-speaker-out", "gating": gating.value, "k": args.k,
                "seed": args.seed, "l2": args.l2, "memlin_cross": args.memlin_cross,
                "gender_dependent": bool(args.gender_dependent),
                "variant": ("gender-dependent, averaged across genders"
                            if args.gender_dependent else "gender-independent")}
        det = results.detector if gating is Gating.DETECTED else None
        if det is not None:
            meta["detector"] = {"accuracy": det.accuracy, "shouted_miss_rate": det.shouted_miss_rate,
                                "normal_miss_rate": det.normal_miss_rate}
        reports[gating] = _export_eval(pooled, sub, conditions, args.gender_dependent,
                                       _variant_title(gating, args.gender_dependent), meta)
        if getattr(args, "export_vectors", False):
            for col, pds in pooled.items():
                save_dataset(pds, sub / f"vectors_{col.lower()}.{args.format}", args.format)
        if det is not None:
            print(f"detector (LOSO): accuracy {100 * det.accuracy:.2f}%, shouted miss "
                  f"{100 * det.shouted_miss_rate:.2f}%, normal miss {100 * det.normal_miss_rate:.2f}%")
    return results, reports


def cmd_evaluate(args) -> int:
    ds = load_dataset(args.data, args.format)
    out = _out_dir(args)
    _setup_run_log(out, "evaluate")
    conditions = _conditions(args.condition)
    gating = Gating(args.gating)
    if args.all_techniques:
        techniques = list(Technique)
    elif args.technique != "none":
        techniques = [Technique(args.technique)]
    else:
        techniques = []
    if args.loso or args.all_techniques:
        if gating is Gating.NONE:
            techniques = []
        _loso_tables(ds, args, techniques, [gating] if techniques else [Gating.ORACLE],
                     out, conditions)
        return EXIT_OK
    # direct mode: evaluate the dataset as given, plus optional pre-trained models
    normal = ds.matrix[ds.domain_mask(Domain.NORMAL)]
    center = (normal if len(normal) else ds.matrix).mean(axis=0)
    pooled = {"Baseline": ds.with_vectors(length_normalize(ds.matrix, center))}
    if args.models and gating is not Gating.NONE:
        model = load_model(Path(args.models) / "compensation.json", "compensation")
        detector = _load_detector(args) if gating is Gating.DETECTED else None
        comp = compensate_dataset(model, detector, ds, gating)
        pooled[model.technique.label] = comp.with_vectors(length_normalize(comp.matrix, center))
    meta = {"protocol": "direct", "gating": gating.value,
            "gender_dependent": bool(args.gender_dependent),
            "variant": ("gender-dependent, averaged across genders"
                        if args.gender_dependent else "gender-independent")}
    _export_eval(pooled, out, conditions, args.gender_dependent,
                 _variant_title(gating, args.gender_dependent), meta)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    ds = load_dataset(args.data, args.format) if args.data else generate(SynthConfig(seed=args.seed))
    out = _out_dir(args)
    _setup_run_log(out, "pipeline")
    conditions = _conditions(args.condition)
    techniques = list(Technique) if args.technique in (None, "all") else [Technique(args.technique)]
    lines = []
    gender_flag = args.gender_dependent
    args.gender_dependent = False
    _, reports = _loso_tables(ds, args, techniques, [Gating.ORACLE, Gating.DETECTED],
                              out, conditions)
    for gating, table in reports.items():
        lines.append(format_table(table, _variant_title(gating, False)))
    if gender_flag:
        args.gender_dependent = True
        gd = out / "gender_dependent"
        _, greports = _loso_tables(ds, args, techniques, [Gating.ORACLE], gd, conditions)
        lines.append(format_table(greports[Gating.ORACLE], _variant_title(Gating.ORACLE, True)))
    (out / "report.txt").write_text("\n\n".join(lines) + "\n")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser, *, data=True, models=False):
    p.add_argument("--config", help="YAML/JSON file supplying any option; flags win")
    if data:
        p.add_argument("--data", help="embedding dataset (jsonl or csv)")
    if models:
        p.add_argument("--models", help="directory written by 'train'")
    p.add_argument("--format", choices=["jsonl", "csv"], default=None)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delimiter", default=DEFAULT_DELIMITER,
                   help="separator inside '<speaker>_<content>_<domain>' record ids")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_opts(p, technique_default="memlin", techniques=("memlin", "ratz", "splice", "none")):
    p.add_argument("--technique", choices=list(techniques), default=technique_default)
    p.add_argument("--k", type=int, default=DEFAULT_COMPONENTS, help="GMM components per domain")
    p.add_argument("--l2", type=float, default=DEFAULT_L2, help="detector L2 weight")
    p.add_argument("--gender-dependent", action="store_true")
    p.add_argument("--memlin-cross", choices=[m.value for m in MemlinCross],
                   default=MemlinCross.PRIOR.value,
                   help="MEMLIN p(s_x|y,s_y): fixed co-occurrence or y-dependent")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shoutcomp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"shoutcomp {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("synth", help="generate a synthetic stereo corpus")
    _common(p, data=False)
    d = SynthConfig()
    for name in ("n_speakers", "n_contents", "dim", "n_shift_clusters"):
        p.add_argument(f"--{name.replace('_', '-')}", type=int, default=getattr(d, name))
    for name in ("speaker_spread", "within_speaker_noise", "shift_magnitude",
                 "gender_offset_magnitude", "shift_coherence"):
        p.add_argument(f"--{name.replace('_', '-')}", type=float, default=getattr(d, name))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train detector, GMMs and bias tables")
    _common(p)
    _model_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="run the shouted-speech detector")
    _common(p, models=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("compensate", help="compensate a dataset with trained models")
    _common(p, models=True)
    p.add_argument("--gating", choices=[g.value for g in Gating], default="detected")
    p.set_defaults(func=cmd_compensate)

    for name, helptext in (("evaluate", "score trials and compute EER / DET"),
                           ("pipeline", "full leave-one-speaker-out experiment")):
        p = sub.add_parser(name, help=helptext)
        _common(p, models=(name == "evaluate"))
        if name == "evaluate":
            _model_opts(p, "none")
            p.add_argument("--gating", choices=[g.value for g in Gating], default="detected")
            p.add_argument("--loso", action="store_true",
                           help="train per held-out speaker instead of using --models")
            p.add_argument("--all-techniques", action="store_true")
            p.set_defaults(func=cmd_evaluate)
        else:
            _model_opts(p, "all", ("all", "memlin", "ratz", "splice"))
            p.add_argument("--export-vectors", action="store_true",
                           help="write pooled vectors per column for external projection")
            p.set_defaults(func=cmd_pipeline)
        p.add_argument("--condition", action="append",
                       help="AA, NN, SS, NS (repeatable or comma separated)")
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or not known.command:
        return
    try:
        cfg = yaml.safe_load(Path(known.config).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a mapping of option names to values")
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = subparsers.choices.get(known.command)
    if sp is None:
        return
    dests = {a.dest for a in sp._actions}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - dests)
    if unknown:
        raise UsageError(f"unknown option(s) in config: {', '.join(unknown)}")
    sp.set_defaults(**cfg)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"shoutcomp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)

    root = logging.getLogger()
    before = set(root.handlers)
    old_level = root.level
    root.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    stderr = logging.StreamHandler(sys.stderr)
    stderr.setLevel(logging.DEBUG if args.verbose else logging.WARNING)
    stderr.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root.addHandler(stderr)
    logging.captureWarnings(True)
    try:
        if getattr(args, "data", "x") is None and args.command != "pipeline":
            raise UsageError("--data is required")
        if getattr(args, "models", "x") is None and (
                args.command in ("detect",)
                or (args.command == "compensate" and args.gating != "none")):
            raise UsageError("--models is required")
        if getattr(args, "k", 1) < 1:
            raise UsageError("--k must be at least 1")
        if args.format is None:
            args.format = "jsonl"
            data_path = getattr(args, "data", None)
            if data_path and str(data_path).lower().endswith(".csv"):
                args.format = "csv"
        return args.func(args)
    except UsageError as exc:
        print(f"shoutcomp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"shoutcomp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ModelFormatError, OSError) as exc:
        print(f"shoutcomp: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        for h in set(root.handlers) - before:
            root.removeHandler(h)
            h.close()
        root.setLevel(old_level)
        logging.captureWarnings(False)


if __name__ == "__main__":
    sys.exit(main())
