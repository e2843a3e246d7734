"""Command-line entry points: select, sweep, search, saug, oracle-check, datagen.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import datagen, pipeline, reports
from .pipeline import ConfigError, RunConfig, ThresholdUnreachableError

DEFAULT_CONFIG = {
    "dataset": {"kind": "synthetic", "n": 400, "input_dim": 5, "bias_strength": 0.8},
    "model": {"kind": "logistic", "loss": "cross_entropy"},
    "sgd": {"learning_rate": 0.2, "epochs": 2},
    "pairing": "af",
    "lam": 1.0,
    "fraction": 0.5,
    "seed": 0,
    "out_dir": "runs",
}


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; the CLI contract reserves 2 for
    # runtime failures, so argument problems exit 1 instead
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, help="JSON run configuration")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out-dir", dest="out_dir")
    sub.add_argument("--lambda", dest="lam", type=float)
    sub.add_argument("--fraction", type=float)
    sub.add_argument("--pairing", choices=("af", "ar", "rf", "accuracy", "accuracy-only"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trustsel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_select = sub.add_parser("select", help="run one end-to-end selection pipeline")
    _add_common(p_select)

    p_sweep = sub.add_parser("sweep", help="selection runs over a tradeoff-weight grid")
    _add_common(p_sweep)
    p_sweep.add_argument(
        "--grid", help="comma-separated lambda values (default 0,0.1,0.3,0.5,0.7,0.9,1)"
    )

    p_search = sub.add_parser("search", help="fraction grid plus binary search on lambda")
    _add_common(p_search)
    p_search.add_argument("--threshold-metric", required=True, dest="threshold_metric")
    p_search.add_argument("--threshold", required=True, type=float)

    p_saug = sub.add_parser("saug", help="iterative sampled-augmentation rounds")
    _add_common(p_saug)
    p_saug.add_argument("--epsilon", type=float, default=0.005)
    p_saug.add_argument("--max-rounds", type=int, default=10, dest="max_rounds")
    p_saug.add_argument(
        "--kinds", help="comma-separated name:severity corruption kinds, e.g. gaussian_noise:0.5"
    )

    p_oracle = sub.add_parser("oracle-check", help="solver-vs-oracle equivalence suites")
    p_oracle.add_argument("--seeds", type=int, default=10, help="number of recovery seeds")
    p_oracle.add_argument("--passes", type=int, default=5, help="stream replays per instance")
    p_oracle.add_argument("--states", type=int, default=100, help="consistency states")
    p_oracle.add_argument("--out-dir", dest="out_dir", default="runs")

    p_gen = sub.add_parser("datagen", help="write a synthetic biased dataset as CSV")
    p_gen.add_argument("--n", type=int, default=2000)
    p_gen.add_argument("--input-dim", type=int, default=5, dest="input_dim")
    p_gen.add_argument("--bias", type=float, default=0.8)
    p_gen.add_argument("--balance", type=float, default=0.5)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out-dir", dest="out_dir", default="data")
    return parser


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _parse_kinds(text: str) -> list[dict]:
    kinds = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" not in chunk:
            raise ConfigError("kinds", f"expected name:severity, got {chunk!r}")
        name, severity = chunk.rsplit(":", 1)
        try:
            kinds.append({"name": name, "severity": float(severity)})
        except ValueError:
            raise ConfigError("kinds", f"severity {severity!r} is not a number") from None
    if not kinds:
        raise ConfigError("kinds", "no corruption kinds given")
    return kinds


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    raw = dict(DEFAULT_CONFIG)
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = _merge(raw, json.load(fh))
        except FileNotFoundError:
            raise ConfigError("config", f"file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
    for flag in ("seed", "out_dir", "lam", "fraction", "pairing"):
        value = getattr(args, flag, None)
        if value is not None:
            raw[flag] = value
    if getattr(args, "kinds", None):
        raw["corruptions"] = _parse_kinds(args.kinds)
    return pipeline.config_from_dict(raw)


def _print(payload: dict) -> None:
    print(json.dumps(reports.jsonable(payload), indent=2, sort_keys=True))


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "select":
        report = pipeline.cmd_select(_resolve_config(args))
        _print({"run_id": report.run_id, "metrics": report.metrics, "capacity": report.capacity})
        return 0
    if args.command == "sweep":
        grid = None
        if args.grid:
            grid = [float(v) for v in args.grid.split(",") if v.strip()]
        payload = pipeline.cmd_sweep(_resolve_config(args), grid)
        _print({"points": payload["points"], "frontier": payload["frontier"]})
        return 0
    if args.command == "search":
        payload = pipeline.cmd_search(
            _resolve_config(args), args.threshold_metric, args.threshold
        )
        _print(payload["chosen"])
        return 0
    if args.command == "saug":
        payload = pipeline.cmd_saug(
            _resolve_config(args), epsilon=args.epsilon, max_rounds=args.max_rounds
        )
        _print({"rounds": payload["rounds"], "final_dataset": payload["final_dataset"]})
        return 0
    if args.command == "oracle-check":
        payload = pipeline.cmd_oracle_check(
            seed_count=args.seeds,
            passes=args.passes,
            consistency_states=args.states,
            out_dir=args.out_dir,
        )
        _print(payload)
        return 0
    if args.command == "datagen":
        try:
            spec = datagen.BiasedClassificationSpec(
                n=args.n,
                input_dim=args.input_dim,
                bias_strength=args.bias,
                class_balance=args.balance,
                seed=args.seed,
            )
        except ValueError as exc:
            raise ConfigError("datagen", str(exc)) from None
        train, val = datagen.gen_biased_classification(spec)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        datagen.save_csv(train, out / "train.csv")
        datagen.save_csv(val, out / "val.csv")
        reports.write_json_atomic(
            out / "meta.json",
            {
                "n": args.n,
                "input_dim": args.input_dim,
                "bias_strength": args.bias,
                "class_balance": args.balance,
                "seed": args.seed,
                "label_column": "label",
                "sensitive_column": "z",
            },
        )
        _print({"train": str(out / "train.csv"), "val": str(out / "val.csv")})
        return 0
    raise RuntimeError(f"unhandled command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"trustsel: validation error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"trustsel: runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
