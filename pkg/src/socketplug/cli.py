"""``socketplug`` command line.

Every subcommand reads an optional JSON config (``--config``), applies flag
overrides, resolves derived fields and writes ``resolved_config.json`` into the
output directory, so any run can be replayed with
``socketplug <cmd> --config <out>/resolved_config.json``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .config import ExperimentConfig
from .data import SynthSpec, generate_synthetic, save_csv
from .evaluate import REPORT_FORMATS, emit_report, evaluate, promotion, read_csv_rows
from .exceptions import (CacheMissError, ConfigError, FormatError, IngestionError,
                         SocketPlugError)
from .experiment import (RunResult, load_dataset, obtain_caches, run_calibration, train_socket,
                         write_run)
from .calibrate import load_run_bank, transfer_plugs
from .sockets import cache_dataset, load_prediction_caches, load_socket, save_prediction_caches, save_socket

log = logging.getLogger("socketplug")

COMMANDS = ("synth", "train-socket", "predict-socket", "calibrate", "eval", "transfer", "report",
            "sweep")

# fields whose default is None need an explicit flag type
_NONE_TYPES = {"dataset_name": str, "synth_slopes": list, "split": list, "socket_dir": str,
               "socket_manifest": str, "socket_seed": int, "workers": int}


class _Parser(argparse.ArgumentParser):
    """Argument errors exit 2 with one line on stderr."""

    def error(self, message):
        self.exit(2, f"error: {message}\n")


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    defaults = ExperimentConfig()
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        default = getattr(defaults, f.name)
        kind = _NONE_TYPES.get(f.name, type(default))
        if f.name == "plug_count":
            p.add_argument(flag, dest=f.name, default=None, help="integer or 'target-wise'")
        elif kind is bool:
            p.add_argument(flag, dest=f.name, default=None, action=argparse.BooleanOptionalAction)
        elif kind is list:
            p.add_argument(flag, dest=f.name, default=None, type=_float_list)
        else:
            p.add_argument(flag, dest=f.name, default=None, type=kind)


def build_parser():
    parser = _Parser(prog="socketplug", description="Socket+Plug forecast calibration")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write the synthetic dataset as CSV")
    _add_config_flags(p)

    p = sub.add_parser("train-socket", help="train and snapshot a built-in socket")
    _add_config_flags(p)

    p = sub.add_parser("predict-socket", help="cache a socket's forecasts for every split")
    _add_config_flags(p)

    p = sub.add_parser("calibrate", help="train a plug bank on cached socket forecasts")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="score a calibration run on a prediction cache")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--predictions", help="prediction manifest (default: <run>/predictions)")
    p.add_argument("--split", default="test")

    p = sub.add_parser("transfer", help="apply trained plugs to another socket's forecasts")
    p.add_argument("--run", required=True, help="run directory holding the trained plugs")
    p.add_argument("--predictions", required=True, help="foreign prediction manifest")
    p.add_argument("--split", default="test")
    p.add_argument("--output", required=True, help="directory for the transfer report")

    p = sub.add_parser("report", help="render run or sweep results")
    p.add_argument("--input", required=True, help="run directory, sweep directory or report CSV")
    p.add_argument("--format", required=True, choices=REPORT_FORMATS)
    p.add_argument("--output", required=True, help="report file path")
    p.add_argument("--y", default="mse", choices=("mse", "mae"), help="metric for svg plots")

    p = sub.add_parser("sweep", help="calibrate once per plug count")
    _add_config_flags(p)
    p.add_argument("--counts", required=True, type=_int_list, help="comma-separated plug counts")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    for f in fields(ExperimentConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            setattr(cfg, f.name, val)
    return cfg.resolve()


def _prepare_output(cfg):
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "resolved_config.json")
    return out


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    cfg = resolve_config(args)
    out = _prepare_output(cfg)
    spec = SynthSpec(periods=cfg.synth_periods, noise_std=cfg.synth_noise_std,
                     slopes=cfg.synth_slopes, rho=cfg.synth_rho, length=cfg.synth_length,
                     seed=cfg.seed)
    path = out / "synthetic.csv"
    save_csv(generate_synthetic(spec, name=cfg.dataset_name), path)
    print(path)
    return 0


def cmd_train_socket(args):
    cfg = resolve_config(args)
    if cfg.socket == "external":
        raise ConfigError("train-socket needs a built-in socket kind (linear-decomp or mlp)")
    dataset = load_dataset(cfg)
    out = _prepare_output(cfg)
    sock = train_socket(cfg, dataset)
    save_socket(sock, out / "socket")
    _print_json({"socket": str(out / "socket"), "digest": sock.digest(),
                 "best_epoch": sock.best_epoch_, "stop_epoch": sock.stop_epoch_})
    return 0


def cmd_predict_socket(args):
    cfg = resolve_config(args)
    if not cfg.socket_dir:
        raise ConfigError("predict-socket needs --socket-dir pointing at a socket snapshot")
    dataset = load_dataset(cfg)
    sock = load_socket(cfg.socket_dir)
    out = _prepare_output(cfg)
    path = save_prediction_caches(cache_dataset(sock, dataset), out / "predictions")
    print(path)
    return 0


def cmd_calibrate(args):
    cfg = resolve_config(args)
    out = _prepare_output(cfg)
    caches, sock = obtain_caches(cfg, out)
    digest = None
    if sock is not None:
        digest = sock.digest()
        if not cfg.socket_dir:
            save_socket(sock, out / "socket")
    result = run_calibration(cfg, caches)
    write_run(cfg, result, out, socket_digest=digest)
    _print_summary(result)
    return 0


def _print_summary(result: RunResult):
    s = result.summary()
    _print_json({"base_mse": s["base"]["mse"], "calibrated_mse": s["calibrated"]["mse"],
                 "promotion": s["promotion"], "stop_epochs": result.run.stop_epochs})


def _default_predictions(run_dir, given):
    if given:
        return given
    path = Path(run_dir) / "predictions" / "predictions.manifest"
    if not path.is_file():
        raise ConfigError(f"{run_dir} holds no prediction cache; pass --predictions")
    return path


def cmd_eval(args):
    _, bank = load_run_bank(args.run)
    caches = load_prediction_caches(_default_predictions(args.run, args.predictions))
    if args.split not in caches:
        raise ConfigError(f"prediction cache has no {args.split!r} split (has {sorted(caches)})")
    cache = caches[args.split]
    base = evaluate(cache.pred, cache.true)
    calibrated = evaluate(bank.predict(cache.pred), cache.true)
    report = {"split": args.split, "base": base.to_dict(), "calibrated": calibrated.to_dict(),
              "promotion": {p.metric: p.promotion for p in promotion(base, calibrated)}}
    path = Path(args.run) / f"eval_{args.split}.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _print_json({"base_mse": base.mse, "calibrated_mse": calibrated.mse,
                 "promotion": report["promotion"]})
    return 0


def cmd_transfer(args):
    _, bank = load_run_bank(args.run)
    caches = load_prediction_caches(args.predictions)
    if args.split not in caches:
        raise ConfigError(f"prediction cache has no {args.split!r} split (has {sorted(caches)})")
    base, calibrated, promos = transfer_plugs(bank, caches[args.split])
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"metric": p.metric, "base": p.base, "calibrated": p.calibrated,
             "promotion": p.promotion} for p in promos]
    emit_report(rows, "csv", out / "transfer.csv")
    emit_report(rows, "json", out / "transfer.json")
    for p in promos:
        print(f"{p.metric}: base={p.base:.6f} calibrated={p.calibrated:.6f} promotion={p.formatted()}")
    return 0


def _run_rows(run_dir, setting):
    metrics_path = Path(run_dir) / "metrics.json"
    if not metrics_path.is_file():
        raise ConfigError(f"{run_dir} has no metrics.json")
    m = json.loads(metrics_path.read_text(encoding="utf-8"))
    rows = []
    for stage in ("base", "calibrated"):
        t = m[stage]
        label = f"{setting}:{stage}" if setting and stage != "base" else stage
        rows.append(dict(setting=label, scope="overall", index="", mse=t["mse"], mae=t["mae"]))
        for scope, key in (("variable", "variable"), ("horizon", "horizon")):
            for i, (a, b) in enumerate(zip(t[f"mse_per_{key}"], t[f"mae_per_{key}"])):
                rows.append(dict(setting=label, scope=scope, index=i, mse=a, mae=b))
    return rows


def _collect_rows(path):
    path = Path(path)
    if path.is_file():
        return read_csv_rows(path)
    sweep = path / "sweep.json"
    if sweep.is_file():
        entries = json.loads(sweep.read_text(encoding="utf-8"))["runs"]
        rows = []
        for k, e in enumerate(entries):
            run_rows = _run_rows(path / e["dir"], f"M={e['plug_count']}")
            # the socket baseline is shared, keep it once
            rows += [r for r in run_rows if k == 0 or r["setting"] != "base"]
        return rows
    if (path / "metrics.json").is_file():
        return _run_rows(path, "")
    raise ConfigError(f"{path} is neither a report CSV, a run directory nor a sweep directory")


def cmd_report(args):
    rows = _collect_rows(args.input)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "svg-lineplot":
        plot_rows = [r for r in rows if r.get("scope") == "horizon"] or rows
        emit_report(plot_rows, args.format, out, x="index", y=args.y, series="setting",
                    title=f"{args.y} per horizon step")
    else:
        emit_report(rows, args.format, out)
    print(out)
    return 0


def cmd_sweep(args):
    cfg = resolve_config(args)
    out = _prepare_output(cfg)
    counts = args.counts
    if not counts:
        raise ConfigError("--counts must list at least one plug count")
    caches, sock = obtain_caches(cfg, out)
    _, N, S = caches["train"].pred.shape
    from .plug import partition_targets
    for M in counts:  # validate every count before training anything
        partition_targets(N, S, cfg.axis, M)
    if sock is not None and not cfg.socket_dir:
        save_socket(sock, out / "socket")
    entries = []
    for M in counts:
        run_dir = out / f"M{M}"
        sub = ExperimentConfig(**cfg.to_dict())
        sub.plug_count = M
        sub.output = str(run_dir)
        if sock is not None:
            # runs replay from the shared socket snapshot and caches
            sub.socket = "external"
            sub.socket_manifest = str(out / "predictions" / "predictions.manifest")
        run_dir.mkdir(parents=True, exist_ok=True)
        sub.save(run_dir / "resolved_config.json")
        result = run_calibration(sub, caches, plug_count=M)
        write_run(sub, result, run_dir, socket_digest=sock.digest() if sock is not None else None)
        entries.append({"plug_count": M, "dir": run_dir.name, "base_mse": result.base.mse,
                        "calibrated_mse": result.calibrated.mse,
                        "stop_epochs": result.run.stop_epochs})
        log.info("M=%d calibrated mse %.6f", M, result.calibrated.mse)
    (out / "sweep.json").write_text(json.dumps({"axis": cfg.axis, "runs": entries}, indent=2) + "\n",
                                    encoding="utf-8")
    emit_report([{k: e[k] for k in ("plug_count", "base_mse", "calibrated_mse")} for e in entries],
                "csv", out / "sweep.csv")
    for e in entries:
        print(f"M={e['plug_count']}: calibrated mse {e['calibrated_mse']:.6f}")
    return 0


HANDLERS = {"synth": cmd_synth, "train-socket": cmd_train_socket,
            "predict-socket": cmd_predict_socket, "calibrate": cmd_calibrate, "eval": cmd_eval,
            "transfer": cmd_transfer, "report": cmd_report, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[args.command](args)
    except (ConfigError, IngestionError, FormatError, CacheMissError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {str(msg).splitlines()[0] if str(msg) else type(exc).__name__}", file=sys.stderr)
        return 2
    except SocketPlugError as exc:
        print(f"error: {exc}".splitlines()[0], file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
