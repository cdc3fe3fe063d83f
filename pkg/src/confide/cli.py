"""Command-line entry point: ``confide <subcommand> [flags]``.

Every subcommand accepts ``--config file.json`` whose keys are the flag names
(dashes or underscores); explicit flags override the file. Reports are JSON
with floats printed at 17 significant digits, so reruns are byte-identical.
Failures print one JSON object ``{"error": ..., "message": ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .analysis import cmi_discrete, theorem1_report, theorem2_report
from .calibration import bayes_calibrated_probs, temper
from .combiner import CombinerParams, predict_dataset, sp_matrix
from .confusion import ConfusionMatrix
from .domain import EPS, load_dataset, save_dataset, split_indices
from .errors import ConfideError, ConfigInvalid, LengthMismatch, MethodFieldMissing, NoSupervisedRows, ParseError
from .fitting import METHOD_NAMES, FitConfig, fit_combiner
from .metrics import DEFAULT_BINS, evaluate_posteriors, reliability_table
from .simulate import SyntheticConfig, generate, learning_curve, load_oracle, save_oracle

log = logging.getLogger("confide")


class UsageError(ConfideError):
    pass


# --- JSON output ----------------------------------------------------------


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    text = format(x, ".17g")
    if text.lstrip("-").isdigit():
        text += ".0"
    return text


def dumps(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON text with a fixed float format (17 significant digits)."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj.tolist() if isinstance(obj, np.ndarray) else obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in seq):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if obj is None:
        return "null"
    if isinstance(obj, Path):
        return json.dumps(str(obj))
    return json.dumps(obj)


def _emit(obj: Any, out: str | None) -> None:
    text = dumps(obj) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _read_json(path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno) from None


# --- argument parsing -----------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=sorted(METHOD_NAMES))
    p.add_argument("--prior-accuracy", type=float)
    p.add_argument("--prior-strength", type=float)
    p.add_argument("--temp-mu", type=float)
    p.add_argument("--temp-sigma", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--em-max-iters", type=int)
    p.add_argument("--em-tol", type=float)
    p.add_argument("--lr-l2", type=float)
    p.add_argument("--lr-max-iters", type=int)
    p.add_argument("--lr-tol", type=float)
    p.add_argument("--nodes", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="confide", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"confide {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file whose keys mirror the flags")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output path (stdout when omitted, where allowed)")
        p.add_argument("-v", "--verbose", action="count", default=0)
        return p

    p = command("simulate", "draw a synthetic dataset with known ground truth")
    p.add_argument("--k", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--phi-diag", type=float)
    p.add_argument("--t-star", type=float)
    p.add_argument("--class-prior", type=_floats)
    p.add_argument("--concentration", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--oracle-out", help="oracle posterior CSV (default: oracle.csv beside --out)")
    p.add_argument("--eval-fraction", type=float, help="also split off an evaluation file")
    p.add_argument("--eval-out")
    p.add_argument("--eval-oracle-out", help="oracle CSV for the evaluation file (default: eval_oracle.csv beside it)")
    p.add_argument("--config-out", help="where to write the config echo (default: stdout)")

    p = command("fit", "fit a combination method")
    p.add_argument("--train")
    _add_fit_flags(p)

    p = command("combine", "write per-row combined posteriors")
    p.add_argument("--params")
    p.add_argument("--data")

    p = command("evaluate", "error, NLL, ECE and cwECE of model, combination and human")
    p.add_argument("--params")
    p.add_argument("--data")
    p.add_argument("--bins", type=int)
    p.add_argument("--oracle", help="oracle posterior CSV, enables oracle-mode MCE for the model")
    p.add_argument("--reliability-out", help="per-bin CSV of the combination")

    p = command("learning-curve", "eval error versus number of training rows")
    p.add_argument("--train")
    p.add_argument("--eval")
    p.add_argument("--sizes", type=_ints)
    p.add_argument("--seeds", type=int)
    p.add_argument("--format", choices=["csv", "json"])
    _add_fit_flags(p)

    p = command("diagnose", "conditional-dependence diagnostics")
    p.add_argument("--data")

    p = command("theory", "accuracy bound and, with an oracle, the estimation-error bound")
    p.add_argument("--params")
    p.add_argument("--data")
    p.add_argument("--oracle")
    p.add_argument("--phi-true", help="JSON file holding the true confusion matrix (array or object with 'phi')")
    return parser


DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {"k": 10, "n": 1000, "phi_diag": 0.95, "t_star": 1.0, "concentration": 5.0, "rho": 0.0, "seed": 0},
    "fit": {},
    "combine": {},
    "evaluate": {"bins": DEFAULT_BINS},
    "learning-curve": {"sizes": [10, 30, 100, 300, 1000], "seeds": 25, "format": "csv", "seed": 0},
    "diagnose": {},
    "theory": {},
}
# Keys only settable from a config file.
CONFIG_ONLY = {"simulate": {"phi_star", "dirichlet_alpha"}}


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise UsageError(f"unknown command {name}")


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    """Parse flags, filling anything not given on the command line from ``--config``."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        raise UsageError("a subcommand is required: " + ", ".join(DEFAULTS))
    sub = _subparser(parser, args.command)
    known = {a.dest for a in sub._actions if a.dest not in ("help", "config")}
    merged = dict(DEFAULTS[args.command])
    extra: dict[str, Any] = {}
    if args.config:
        raw = _read_json(args.config)
        if not isinstance(raw, dict):
            raise ConfigInvalid("config file must hold a JSON object")
        for key, value in raw.items():
            dest = key.replace("-", "_")
            if dest in known:
                merged[dest] = value
            elif dest in CONFIG_ONLY.get(args.command, ()):
                extra[dest] = value
            else:
                raise ConfigInvalid(f"unknown config key {key!r} for {args.command}")
    for dest in known:
        value = getattr(args, dest)
        if value is not None and not (dest == "verbose" and value == 0 and "verbose" in merged):
            merged[dest] = value
    for list_key, conv in (("sizes", _ints), ("class_prior", _floats)):
        if isinstance(merged.get(list_key), str):
            merged[list_key] = conv(merged[list_key])
    ns = argparse.Namespace(command=args.command, **{d: merged.get(d) for d in known}, **extra)
    ns.extra = extra
    return ns


def _need(args, *names) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"{args.command} needs {', '.join(missing)}")


def _fit_config(args) -> FitConfig:
    values = {f.name: getattr(args, f.name) for f in fields(FitConfig) if getattr(args, f.name, None) is not None}
    return FitConfig(**values)


def _load_params(path) -> CombinerParams:
    obj = _read_json(path)
    if not isinstance(obj, dict):
        raise MethodFieldMissing("params file must hold a JSON object")
    return CombinerParams.from_dict(obj)


# --- subcommands ----------------------------------------------------------


def cmd_simulate(args) -> None:
    _need(args, "out")
    config = SyntheticConfig(
        k=int(args.k),
        n=int(args.n),
        phi_diag=float(args.phi_diag),
        phi_star=args.extra.get("phi_star"),
        t_star=float(args.t_star),
        class_prior=args.class_prior,
        concentration=float(args.concentration),
        dirichlet_alpha=args.extra.get("dirichlet_alpha"),
        rho=float(args.rho),
        seed=int(args.seed),
    )
    data, oracle = generate(config)
    out = Path(args.out)
    oracle_out = Path(args.oracle_out) if args.oracle_out else out.with_name("oracle.csv")
    files = {"data": str(out), "oracle": str(oracle_out)}
    if args.eval_fraction is None:
        save_dataset(data, out)
        save_oracle(oracle, oracle_out)
    else:
        _need(args, "eval_out")
        eval_out = Path(args.eval_out)
        eval_oracle_out = Path(args.eval_oracle_out) if args.eval_oracle_out else eval_out.with_name("eval_oracle.csv")
        train_idx, eval_idx = split_indices(data.n, float(args.eval_fraction), int(args.seed))
        save_dataset(data.subset(train_idx), out)
        save_oracle(oracle[train_idx], oracle_out)
        save_dataset(data.subset(eval_idx), eval_out)
        save_oracle(oracle[eval_idx], eval_oracle_out)
        files.update(eval=str(eval_out), eval_oracle=str(eval_oracle_out), n_train=int(train_idx.size), n_eval=int(eval_idx.size))
    echo = {"version": __version__, "config": config.to_dict(), "phi": config.phi_matrix().tolist(), "files": files}
    _emit(echo, args.config_out)


def cmd_fit(args) -> None:
    _need(args, "method", "train", "out")
    data = load_dataset(args.train)
    params = fit_combiner(args.method, data, _fit_config(args))
    _emit(params.to_dict(), args.out)


def _calibrated(params: CombinerParams, m: np.ndarray) -> np.ndarray | None:
    if params.temperature is not None:
        return temper(m, params.temperature.t)
    if params.tau_posterior is not None:
        return bayes_calibrated_probs(m, params.tau_posterior)
    return None


def cmd_combine(args) -> None:
    _need(args, "params", "data", "out")
    params = _load_params(args.params)
    data = load_dataset(args.data)
    _check_k(params, data)
    labels, post = predict_dataset(params, data)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "label"] + [f"q_{i}" for i in range(data.k)])
        for i, (label, row) in enumerate(zip(labels, post)):
            writer.writerow([i, int(label)] + [_fmt_float(float(v)) for v in row])


def _check_k(params: CombinerParams, data) -> None:
    if params.k != data.k:
        raise LengthMismatch(f"params have k={params.k} but data has k={data.k}")


def cmd_evaluate(args) -> None:
    _need(args, "params", "data")
    params = _load_params(args.params)
    data = load_dataset(args.data)
    _check_k(params, data)
    oracle = load_oracle(args.oracle) if args.oracle else None
    if data.supervised_count == 0:
        raise NoSupervisedRows("evaluation needs true labels")
    sup = data.supervised_mask
    if oracle is not None:
        if oracle.shape != data.probs.shape:
            raise LengthMismatch(f"oracle shape {oracle.shape} != data shape {data.probs.shape}")
        oracle = oracle[sup]
    data = data.subset(np.flatnonzero(sup))
    bins = int(args.bins)
    y = data.truth

    def report(posteriors, oracle=None):
        return None if posteriors is None else evaluate_posteriors(posteriors, y, bins, oracle).to_dict()

    _, comb = predict_dataset(params, data)
    human = np.full((data.n, data.k), EPS)
    human[np.arange(data.n), data.human] = 1.0
    human /= human.sum(axis=1, keepdims=True)
    out = {
        "version": __version__,
        "method": params.method,
        "n": data.n,
        "bins": bins,
        # The oracle is p(y | m), so oracle-mode MCE only applies to the model rows.
        "model_calibrated": report(_calibrated(params, data.probs), oracle),
        "model_uncalibrated": report(data.probs, oracle),
        "combination": report(comb),
        "human": report(human),
    }
    if args.reliability_out:
        with open(args.reliability_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin", "count", "confidence", "accuracy"])
            for row in reliability_table(comb, y, bins):
                writer.writerow([row["bin"], row["count"], _fmt_float(row["confidence"]), _fmt_float(row["accuracy"])])
    _emit(out, args.out)


def cmd_learning_curve(args) -> None:
    _need(args, "method", "train", "eval")
    train = load_dataset(args.train)
    evaluation = load_dataset(args.eval)
    rows = learning_curve(
        train, evaluation, args.method, args.sizes, int(args.seeds), _fit_config(args), base_seed=int(args.seed)
    )
    if args.format == "json":
        _emit({"version": __version__, "method": args.method, "rows": [r.to_dict() for r in rows]}, args.out)
        return
    lines = ["size,mean_error,std_error,seeds"]
    lines += [f"{r.size},{_fmt_float(r.mean_error)},{_fmt_float(r.std_error)},{len(r.errors)}" for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_diagnose(args) -> None:
    _need(args, "data")
    report = cmi_discrete(load_dataset(args.data))
    _emit({"version": __version__, **report.to_dict()}, args.out)


def _point_params(params: CombinerParams) -> tuple[ConfusionMatrix, float]:
    if params.method in ("PL", "PL_EM"):
        return params.phi_human, params.temperature.t
    if params.method == "SP":
        return sp_matrix(params.k, params.sp_diag), params.temperature.t
    if params.method == "PL_BAYES":
        return params.phi_human, params.tau_posterior.mean_temperature()
    raise ConfigInvalid(f"the bounds need a confusion matrix and a temperature; {params.method} has neither")


def _load_phi(path) -> ConfusionMatrix:
    obj = _read_json(path)
    if isinstance(obj, dict):
        obj = obj.get("phi")
    if obj is None:
        raise ConfigInvalid(f"{path} holds no confusion matrix")
    return ConfusionMatrix(np.array(obj, dtype=float))


def cmd_theory(args) -> None:
    _need(args, "params", "data")
    params = _load_params(args.params)
    data = load_dataset(args.data)
    _check_k(params, data)
    phi, t = _point_params(params)
    out: dict[str, Any] = {"version": __version__, "method": params.method, "temperature": t}
    out["accuracy_bound"] = theorem1_report(data, phi, t).to_dict()
    if args.oracle or args.phi_true:
        _need(args, "oracle", "phi_true")
        phi_true = _load_phi(args.phi_true)
        oracle = load_oracle(args.oracle)
        out["estimation_error"] = theorem2_report(data, oracle, phi_true, phi, t).to_dict()
    _emit(out, args.out)


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "combine": cmd_combine,
    "evaluate": cmd_evaluate,
    "learning-curve": cmd_learning_curve,
    "diagnose": cmd_diagnose,
    "theory": cmd_theory,
}


def _fail(code: str, message: str, status: int) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")
    return status


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
        level = logging.WARNING - 10 * min(int(args.verbose or 0), 2)
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(exc.code, str(exc), 2)
    except ConfideError as exc:
        return _fail(exc.code, str(exc), 1)
    except OSError as exc:
        return _fail("IOError", f"{exc.strerror or exc}: {exc.filename}", 1)
    except ValueError as exc:
        return _fail("InvalidValue", str(exc), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
