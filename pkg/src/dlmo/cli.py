"""Command-line front end.

Every run writes its outputs and a ``manifest.json`` (resolved options, seed,
package versions) under ``--out-dir``.  Options may also come from a
``--config`` TOML file of plain ``key = value`` lines using the long option
names (dashes or underscores); flags given on the command line win.

Exit codes: 0 success, 1 validation/config error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import tomli

from . import __version__, evaluation as ev, gru, mavg, preprocess, synth
from .core import CHANNELS
from .ingest import ParseError, ValidationError, load_dataset, load_melatonin, write_labels
from .melatonin import DEFAULT_THRESHOLD, AlreadyAbove, NoOnset, TooFewSamples, extract_dlmo

log = logging.getLogger("dlmo")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors are config errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _kind(text: str) -> str:
    return text.strip().lower().replace("_", "-")


# --------------------------------------------------------------------------
# helpers


def _channels(text: str) -> tuple:
    chans = tuple(c.strip().upper() for c in str(text).split(",") if c.strip())
    bad = [c for c in chans if c not in CHANNELS]
    if not chans or bad:
        raise ConfigError(f"--features must list channels from {','.join(CHANNELS)}")
    return tuple(c for c in CHANNELS if c in chans)


def _sizes(text: str) -> list:
    text = str(text)
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",")]


def _sigmas(text: str) -> tuple:
    try:
        vals = tuple(float(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad --sigmas list {text!r}") from None
    if not vals or any(not np.isfinite(v) or v < 0 for v in vals):
        raise ConfigError("--sigmas must be finite values >= 0")
    return vals


def _gru_config(args, channels=None) -> gru.GruConfig:
    return gru.GruConfig(
        hidden_size=args.hidden_size,
        channels=channels or _channels(args.features),
        learning_rate_stage2=args.lr_stage2,
        learning_rate_stage3=args.lr_stage3,
        max_epochs=args.max_epochs,
        finetune_epochs=args.finetune_epochs,
        early_stop_patience=args.patience,
        batch_size=args.batch_size,
        seed=args.seed,
    )


def _spec(kind: str, args) -> ev.ModelSpec:
    return ev.ModelSpec(kind, args.window, args.alpha, _gru_config(args))


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need_root(args) -> Path:
    if not args.data_root:
        raise ConfigError("--data-root is required")
    return Path(args.data_root)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=str) + "\n",
                    encoding="utf-8")


def _manifest(args, out: Path, extra=None) -> None:
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
                if k not in ("func",)}
    _write_json(out / "manifest.json", {
        "command": args.command,
        "config": resolved,
        "seed": args.seed,
        "versions": {"dlmo": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        **(extra or {}),
    })


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    mapping = {}
    if args.spec:
        try:
            mapping = tomli.loads(Path(args.spec).read_text(encoding="utf-8"))
        except (OSError, tomli.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read spec file: {exc}") from exc
    for key in ("n_participants", "days_per_participant", "labels_per_participant"):
        if getattr(args, key) is not None:
            mapping[key] = getattr(args, key)
    mapping["seed"] = args.seed
    spec = synth.CohortSpec.from_mapping(mapping)
    out = _out(args)
    ds, gt = synth.generate_cohort(spec, "train" if args.test_participants else "unsplit")
    synth.write_dataset(ds, gt, out)
    extra = {"cohort_spec": asdict(spec)}
    if args.test_participants:
        tspec = synth.CohortSpec.from_mapping({**mapping, "seed": args.seed + 1,
                                               "n_participants": args.test_participants})
        tds, tgt = synth.generate_cohort(tspec, "test")
        synth.write_dataset(tds, tgt, out / "test")
        extra["test_cohort_spec"] = asdict(tspec)
    _manifest(args, out, extra)
    log.info("wrote %d participants to %s", len(ds.participants), out)
    return EXIT_OK


def cmd_extract_dlmo(args) -> int:
    root = _need_root(args)
    profiles = load_melatonin(root / "melatonin.csv")
    rows, statuses = [], []
    for pid in sorted(profiles):
        for prof in profiles[pid]:
            try:
                label, status = extract_dlmo(prof, args.threshold), "ok"
            except NoOnset:
                label, status = None, "no_onset"
            except AlreadyAbove:
                label, status = None, "already_above"
            except TooFewSamples:
                label, status = None, "too_few_samples"
            except ValueError:
                label, status = None, "out_of_range"
            rows.append((pid, prof.collection_day, label))
            statuses.append(status)
    out = _out(args)
    write_labels(rows, out / "labels.csv", statuses)
    flagged = sum(s != "ok" for s in statuses)
    if flagged:
        print(f"warning: {flagged} profile(s) without a usable onset", file=sys.stderr)
    _manifest(args, out, {"profiles": len(rows), "flagged": flagged})
    return EXIT_OK


def cmd_preprocess_check(args) -> int:
    ds = load_dataset(_need_root(args))
    samples = preprocess.build_samples(ds, _channels(args.features), args.window)
    report = {"participants": len(ds.participants), "labels": ds.n_labels,
              "usable": len(samples), "excluded": samples.excluded}
    out = _out(args)
    _write_json(out / "preprocess_check.json", report)
    _manifest(args, out)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_dataset(_need_root(args), "train")
    spec = _spec(args.model, args)
    samples = preprocess.build_samples(ds, spec.gru.channels, args.window)
    fitted = ev.fit_model(spec, samples)
    out = _out(args)
    if fitted.rnn is not None:
        gru.save_model(fitted.rnn, out / "model.json")
    else:
        _write_json(out / "model.json", mavg.to_dict(spec.ma_cfg, fitted.linear))
    res = samples.y - fitted.predict(samples)
    report = {"model": spec.name, "kind": spec.kind, "n_samples": len(samples),
              "excluded": samples.excluded, "rmse_train": ev.rmse(res),
              "lt1h_train": ev.lt1h(res), "n_params": fitted.n_params}
    if fitted.history is not None:
        h = fitted.history
        report.update(best_stage=h.best_stage, best_epoch=h.best_epoch,
                      best_val_rmse=h.best_val_rmse,
                      stage2_epochs=len(h.stage2_train_rmse),
                      stage3_epochs=len(h.stage3_train_rmse))
    _write_json(out / "training_report.json", report)
    _manifest(args, out)
    return EXIT_OK


def _load_model_file(path: Path):
    d = json.loads(path.read_text(encoding="utf-8"))
    if "schema_version" in d:
        return gru.model_from_dict(d)
    return mavg.from_dict(d)


def cmd_evaluate(args) -> int:
    root = _need_root(args)
    ds = load_dataset(root, "train")
    out = _out(args)
    test = None
    if args.test_root:
        tds = load_dataset(args.test_root, "test")
    if args.model_file:
        model = _load_model_file(Path(args.model_file))
        n = model.ma_cfg.n if isinstance(model, gru.TwoStepModel) and model.uses_psi else \
            (model[0].n if isinstance(model, tuple) else args.window)
        samples = preprocess.build_samples(ds, CHANNELS, n)
        if isinstance(model, gru.TwoStepModel):
            days = samples.days[:, :, [CHANNELS.index(c) for c in model.cfg.channels]]
            pred = gru.predict_batch(model, days, samples.midpoints)
        else:
            pred = mavg.predict(model[1], samples.midpoints, model[0])
        res = samples.y - pred
        report = {"n_samples": len(samples), "rmse": ev.rmse(res), "lt1h": ev.lt1h(res),
                  "r2": ev.r_squared(samples.y, pred) if len(samples) > 1 else None}
        _write_json(out / "evaluation.json", report)
        _manifest(args, out)
        return EXIT_OK

    if args.sweep == "window":
        reports = ev.window_size_sweep(ds, _sizes(args.windows), cv=args.cv, seed=args.seed,
                                       alpha=args.alpha, channels=_channels(args.features))
        ev.write_reports(reports, out, "window_sweep")
        _manifest(args, out)
        return EXIT_OK

    # the feature sweep keeps every channel so all subsets see the same labels
    chans = CHANNELS if args.sweep == "features" else _channels(args.features)
    samples = preprocess.build_samples(ds, chans, args.window)
    if args.test_root:
        test = preprocess.build_samples(tds, chans, args.window)
    plan = ev.parse_cv(args.cv, samples, args.seed)
    if args.sweep == "features":
        reports = ev.feature_combination_sweep(samples, plan, _spec("rnn-ema", args),
                                               test=test)
        ev.write_reports(reports, out, "feature_sweep")
    else:
        kinds = [_kind(k) for k in args.models.split(",") if k.strip()]
        reports = ev.run_model_comparison(samples, [_spec(k, args) for k in kinds], plan, test)
        ev.write_reports(reports, out, "comparison")
    _manifest(args, out)
    return EXIT_OK


def cmd_noise_experiment(args) -> int:
    ds = load_dataset(_need_root(args))
    samples = preprocess.build_samples(ds, CHANNELS, args.window)
    cfg = ev.NoiseConfig(_sigmas(args.sigmas), args.reps, args.seed, args.protocol, args.alpha)
    result = ev.noise_experiment(samples, cfg)
    out = _out(args)
    ev.write_noise_result(result, out)
    _manifest(args, out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--data-root", default=None)
    p.add_argument("--config", default=None, help="TOML file of option defaults")
    p.add_argument("--verbose", action="store_true")


def _model_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=int, default=7, help="nights of sleep history")
    p.add_argument("--alpha", type=float, default=0.9, help="EMA decay")
    p.add_argument("--features", default="le,st,ac")
    p.add_argument("--hidden-size", type=int, default=32)
    p.add_argument("--max-epochs", type=int, default=300)
    p.add_argument("--finetune-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr-stage2", type=float, default=1e-3)
    p.add_argument("--lr-stage3", type=float, default=1e-4)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dlmo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic cohort")
    _common(p)
    p.add_argument("--spec", default=None, help="TOML cohort spec")
    p.add_argument("--n-participants", type=int, default=None)
    p.add_argument("--days-per-participant", type=int, default=None)
    p.add_argument("--labels-per-participant", type=int, default=None)
    p.add_argument("--test-participants", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("extract-dlmo", help="threshold DLMO from melatonin.csv")
    _common(p)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.set_defaults(func=cmd_extract_dlmo)

    p = sub.add_parser("preprocess-check", help="count usable and excluded labels")
    _common(p)
    _model_options(p)
    p.set_defaults(func=cmd_preprocess_check)

    p = sub.add_parser("train", help="fit one model on a dataset")
    _common(p)
    _model_options(p)
    p.add_argument("--model", default="rnn-ema", type=_kind, choices=ev.MODEL_KINDS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="cross-validated comparisons and sweeps")
    _common(p)
    _model_options(p)
    p.add_argument("--model-file", default=None)
    p.add_argument("--models", default="ema,rnn-ema,rnn-24h")
    p.add_argument("--sweep", choices=("features", "window"), default=None)
    p.add_argument("--windows", default="3..8")
    p.add_argument("--cv", default="kfold:10")
    p.add_argument("--test-root", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("noise-exp", help="Gaussian midpoint-noise experiment")
    _common(p)
    p.add_argument("--window", type=int, default=7)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--sigmas", default="0,0.5,1,1.5,2,2.5,3,3.5,4")
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--protocol", choices=("refit", "fixed"), default="refit")
    p.set_defaults(func=cmd_noise_experiment)
    return parser


def _apply_config(parser, argv):
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        values = tomli.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "func"):
            raise ConfigError(f"unknown config key {key!r} for {args.command}")
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, synth.SpecError, mavg.LengthMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, ValidationError, FileNotFoundError, mavg.InsufficientData,
            ev.TooFewParticipants, gru.SchemaVersionError, gru.ModelIoError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (gru.NonFiniteLoss, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
