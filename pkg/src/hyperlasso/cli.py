"""Batch command-line interface.

Subcommands::

    gen CONFIG                  write a synthetic train/test/truth triple
    fit CONFIG                  run one chain, stream draws to a chain dir
    fit --resume-summarize DIR  recompute the summary of a finished chain
    rank CHAIN_DIR              SDB feature ranking from a chain dir
    predict CHAIN_DIR TEST_CSV  predictive probabilities and metrics
    sweep CONFIG                refit over a grid of prior scales
    loocv CONFIG                leave-one-out CV of the full pipeline

Configs are flat ``key = value`` files with ``#`` comments.  Everything a
run needs is in its config (seeds included), so outputs are reproducible
byte for byte; the only environment input is HYPERLASSO_OUTDIR, the
fallback output directory for configs that omit ``out_dir``.

Exit codes: 0 success, 1 validation or config errors, 2 runtime failures
(divergent chains, non-log-concave targets, numeric errors).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import dataio
from .gibbs import SamplerSettings, run_chain
from .inference import (
    PREDICTION_MODES,
    coefficient_means,
    evaluate_predictions,
    feature_ranking,
    predict,
)
from .model import FAMILIES, PriorSpec
from .simgen import FitConfig, GeneratorSpec, generate, loocv_driver, scale_sweep, standardize

OUTDIR_ENV = "HYPERLASSO_OUTDIR"


class UsageError(ValueError):
    """Bad command line; reported like any other validation error."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


# ---------------------------------------------------------------------------
# config files


@dataclass(frozen=True)
class _Field:
    kind: str               # int | float | bool | str | floats | ints
    required: bool = False
    default: object = None


def _convert(key: str, kind: str, raw: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError
        if kind == "floats":
            return [float(v) for v in raw.split(",") if v.strip()]
        if kind == "ints":
            return [int(v) for v in raw.split(",") if v.strip()]
        return raw
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None


def parse_config(path: str, schema: dict) -> dict:
    seen = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = text.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in schema:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            if key in seen:
                raise ValueError(f"{path}:{lineno}: duplicate config key {key!r}")
            seen[key] = _convert(key, schema[key].kind, raw)
    out = {}
    for key, spec in schema.items():
        if key in seen:
            out[key] = seen[key]
        elif spec.required:
            raise ValueError(f"{path}: missing required config key {key!r}")
        else:
            out[key] = spec.default
    return out


_PRIOR_KEYS = {
    "prior": _Field("str", default="t"),
    "alpha": _Field("float", default=1.0),
    "log_w": _Field("float", default=-10.0),
    "w_sampled": _Field("bool", default=False),
    "sigma0_sq": _Field("float", default=2000.0),
}

_SETTINGS_KEYS = {
    "n1": _Field("int", required=True),
    "l1": _Field("int", required=True),
    "n2": _Field("int", required=True),
    "l2": _Field("int", default=50),
    "eps": _Field("float", default=0.3),
    "zeta": _Field("float", default=0.05),
    "thin": _Field("int", default=1),
    "seed": _Field("int", default=0),
}

_OUT_KEY = {"out_dir": _Field("str")}

GEN_SCHEMA = {
    "variant": _Field("str", required=True),
    "n_train": _Field("int", default=100),
    "n_test": _Field("int", default=1000),
    "p": _Field("int", required=True),
    "seed": _Field("int", default=0),
    **_OUT_KEY,
}

FIT_SCHEMA = {"train": _Field("str", required=True), **_PRIOR_KEYS, **_SETTINGS_KEYS, **_OUT_KEY}

SWEEP_SCHEMA = {
    "train": _Field("str", required=True),
    "test": _Field("str"),
    "log_w_grid": _Field("floats", required=True),
    "mode": _Field("str", default="bayes_average"),
    "burnin_frac": _Field("float", default=0.2),
    **{k: v for k, v in _PRIOR_KEYS.items() if k != "log_w"},
    **_SETTINGS_KEYS,
    **_OUT_KEY,
}

LOOCV_SCHEMA = {
    "data": _Field("str", required=True),
    "subset": _Field("ints"),
    "mode": _Field("str", default="bayes_average"),
    "burnin_frac": _Field("float", default=0.2),
    **_PRIOR_KEYS,
    **_SETTINGS_KEYS,
    **_OUT_KEY,
}


def _out_dir(cfg: dict) -> str:
    out = cfg.get("out_dir") or os.environ.get(OUTDIR_ENV)
    if not out:
        raise ValueError(f"no out_dir in config and {OUTDIR_ENV} is not set")
    os.makedirs(out, exist_ok=True)
    return out


def _prior_from(cfg: dict) -> PriorSpec:
    return PriorSpec(
        family=cfg["prior"],
        alpha=cfg["alpha"],
        log_w=cfg.get("log_w", -10.0),
        w_sampled=cfg["w_sampled"],
        sigma0_sq=cfg["sigma0_sq"],
    )


def _settings_from(cfg: dict) -> SamplerSettings:
    return SamplerSettings(
        n1=cfg["n1"], ell1=cfg["l1"], n2=cfg["n2"], ell2=cfg["l2"],
        adjust=cfg["eps"], zeta=cfg["zeta"], thin=cfg["thin"], seed=cfg["seed"],
    )


def _prior_dict(prior: PriorSpec) -> dict:
    return {
        "family": prior.family,
        "alpha": prior.alpha,
        "log_w": prior.log_w,
        "w_sampled": prior.w_sampled,
        "sigma0_sq": prior.sigma0_sq,
    }


def _settings_dict(st: SamplerSettings) -> dict:
    return {
        "n1": st.n1, "l1": st.ell1, "n2": st.n2, "l2": st.ell2,
        "eps": st.adjust, "zeta": st.zeta, "thin": st.thin, "seed": st.seed,
    }


def _chain_summary(record) -> dict:
    diag = record.diagnostics
    dh = diag.delta_h[(diag.phase == 1) & np.isfinite(diag.delta_h)]
    active = diag.active_size[diag.phase == 1]
    return {
        "n_draws": record.n_draws,
        "acceptance_rate_initial": _nan_to_none(diag.acceptance_rate(0)),
        "acceptance_rate_sampling": _nan_to_none(diag.acceptance_rate(1)),
        "mean_abs_delta_h_sampling": float(np.abs(dh).mean()) if dh.size else None,
        "mean_active_size_sampling": float(active.mean()) if active.size else None,
    }


def _nan_to_none(v: float):
    return None if math.isnan(v) else float(v)


def _write_chain(out_dir: str, record, manifest: dict, transform) -> None:
    """Persist an already-computed chain record (non-streaming path)."""
    p = record.sigma2_draws.shape[1]
    with dataio.ChainWriter(out_dir, p, record.c - 1, manifest, transform) as writer:
        for d in range(record.n_draws):
            writer.record(d, 0, _Snapshot(record, d))
        writer.finish(record.diagnostics, _chain_summary(record))


class _Snapshot:
    """Adapts one recorded draw to the state interface ChainWriter expects."""

    def __init__(self, record, d: int):
        self.delta = record.delta_draws[d]
        self.sigma2 = record.sigma2_draws[d]
        self.log_w = record.log_w_draws[d]


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = parse_config(args.config, GEN_SCHEMA)
    out = _out_dir(cfg)
    spec = GeneratorSpec(variant=cfg["variant"], n_train=cfg["n_train"],
                         n_test=cfg["n_test"], p=cfg["p"], seed=cfg["seed"])
    train, test, truth = generate(spec)
    dataio.write_dataset(os.path.join(out, "train.csv"), train)
    if test is not None:
        dataio.write_dataset(os.path.join(out, "test.csv"), test)
    dataio.write_truth(os.path.join(out, "truth.csv"), truth)
    manifest = {
        "command": "gen",
        "variant": spec.variant,
        "n_train": spec.n_train,
        "n_test": spec.n_test,
        "p": spec.p,
        "c": train.c,
        "seed": spec.seed,
    }
    if truth.true_delta is not None:
        manifest["true_delta_nonzero"] = {
            str(j): float(truth.true_delta[j, 0])
            for j in np.flatnonzero(np.abs(truth.true_delta[:, 0]) > 0)
        }
    dataio.write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"gen: {spec.variant} n_train={spec.n_train} n_test={spec.n_test} p={spec.p} -> {out}")
    return 0


def cmd_fit(args) -> int:
    if args.resume_summarize:
        record, manifest = dataio.read_chain(args.resume_summarize)
        summary = _chain_summary(record)
        dataio.write_json(os.path.join(args.resume_summarize, "summary.json"), summary)
        rate = summary["acceptance_rate_sampling"]
        print(f"fit: resumed {record.n_draws} draws, "
              f"sampling acceptance {rate if rate is None else round(rate, 4)}")
        return 0
    cfg = parse_config(args.config, FIT_SCHEMA)
    out = _out_dir(cfg)
    train = dataio.read_dataset(cfg["train"])
    prior = _prior_from(cfg)
    settings = _settings_from(cfg)
    (std_train,), tr = standardize(train)
    manifest = {
        "command": "fit",
        "data": {"train": cfg["train"], "n": train.n, "p": train.p, "c": train.c},
        "prior": _prior_dict(prior),
        "settings": _settings_dict(settings),
    }
    with dataio.ChainWriter(out, train.p, train.k, manifest, tr) as writer:
        record = run_chain(std_train, prior, settings, sink=writer.record)
        writer.finish(record.diagnostics, _chain_summary(record))
    rate = record.diagnostics.acceptance_rate(1)
    print(f"fit: {record.n_draws} draws, sampling acceptance {rate:.4f} -> {out}")
    return 0


def cmd_rank(args) -> int:
    record, manifest = dataio.read_chain(args.chain_dir)
    delta_hat = coefficient_means(record, args.burnin_frac)
    ranking = feature_ranking(delta_hat, record.c)
    out = args.out or os.path.join(args.chain_dir, "ranking.csv")
    dataio.write_ranking(out, ranking)
    top = ", ".join(f"x{j}" for j in ranking.order[:5])
    print(f"rank: top features {top} -> {out}")
    return 0


def cmd_predict(args) -> int:
    if args.mode not in PREDICTION_MODES:
        raise ValueError(f"unknown prediction mode {args.mode!r}")
    record, manifest = dataio.read_chain(args.chain_dir)
    tr = dataio.read_transform(os.path.join(args.chain_dir, "transform.csv"))
    test = dataio.read_dataset(args.test_csv, c=int(manifest["data"]["c"]))
    if test.p != int(manifest["data"]["p"]):
        raise ValueError(f"test file has {test.p} features, chain expects {manifest['data']['p']}")
    probs = predict(record, tr.apply(test.x), mode=args.mode, burnin_frac=args.burnin_frac)
    result = evaluate_predictions(probs, test.y)
    out = args.out_dir or args.chain_dir
    os.makedirs(out, exist_ok=True)
    dataio.write_predictions(os.path.join(out, "predictions.csv"), probs, test.y)
    dataio.write_json(os.path.join(out, "metrics.json"), {
        "amlp": result.amlp if math.isfinite(result.amlp) else "inf",
        "error_rate": result.error_rate,
        "n_test": test.n,
        "mode": args.mode,
    })
    print(f"predict: amlp={result.amlp:.4f} error_rate={result.error_rate:.4f} -> {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = parse_config(args.config, SWEEP_SCHEMA)
    out = _out_dir(cfg)
    train = dataio.read_dataset(cfg["train"])
    test = dataio.read_dataset(cfg["test"], c=train.c) if cfg["test"] else None
    prior_base = _prior_from(cfg)
    settings = _settings_from(cfg)
    _, tr = standardize(train)

    def persist(i, prior_i, record):
        manifest = {
            "command": "sweep",
            "point": i,
            "data": {"train": cfg["train"], "n": train.n, "p": train.p, "c": train.c},
            "prior": _prior_dict(prior_i),
            "settings": _settings_dict(settings),
        }
        _write_chain(os.path.join(out, f"chain_{i:02d}"), record, manifest, tr)

    points = scale_sweep(train, prior_base, cfg["log_w_grid"], settings, test=test,
                         mode=cfg["mode"], burnin_frac=cfg["burnin_frac"],
                         jobs=args.jobs, on_chain=persist)
    dataio.write_paths(os.path.join(out, "paths.csv"), points, train.p)
    dataio.write_json(os.path.join(out, "manifest.json"), {
        "command": "sweep",
        "log_w_grid": [float(v) for v in cfg["log_w_grid"]],
        "mode": cfg["mode"],
        "burnin_frac": cfg["burnin_frac"],
        "points": len(points),
    })
    print(f"sweep: {len(points)} scale points -> {out}")
    return 0


def cmd_loocv(args) -> int:
    cfg = parse_config(args.config, LOOCV_SCHEMA)
    out = _out_dir(cfg)
    data = dataio.read_dataset(cfg["data"])
    if cfg["subset"]:
        idx = np.asarray(cfg["subset"], dtype=int)
        if idx.min() < 1 or idx.max() > data.p:
            raise ValueError(f"subset features must lie in 1..{data.p}")
        from .model import Dataset
        data = Dataset(data.x[:, idx - 1], data.y, data.c)
    fit_cfg = FitConfig(prior=_prior_from(cfg), settings=_settings_from(cfg),
                        mode=cfg["mode"], burnin_frac=cfg["burnin_frac"])
    res = loocv_driver(data, fit_cfg, jobs=args.jobs)
    dataio.write_loocv_probs(os.path.join(out, "loocv_probs.csv"), res.probs, data.y, res.failed)
    dataio.write_json(os.path.join(out, "loocv_metrics.json"), {
        "amlp": res.result.amlp if math.isfinite(res.result.amlp) else "inf",
        "error_rate": res.result.error_rate,
        "n": data.n,
        "n_failed": len(res.failed),
        "mode": cfg["mode"],
    })
    dataio.write_json(os.path.join(out, "manifest.json"), {
        "command": "loocv",
        "data": {"path": cfg["data"], "n": data.n, "p": data.p, "c": data.c},
        "subset": cfg["subset"],
        "prior": _prior_dict(fit_cfg.prior),
        "settings": _settings_dict(fit_cfg.settings),
        "mode": cfg["mode"],
        "burnin_frac": cfg["burnin_frac"],
    })
    print(f"loocv: amlp={res.result.amlp:.4f} error_rate={res.result.error_rate:.4f} "
          f"failed={len(res.failed)} -> {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hyperlasso", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a synthetic dataset")
    p.add_argument("config")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="run one chain")
    p.add_argument("config", nargs="?")
    p.add_argument("--resume-summarize", metavar="CHAIN_DIR",
                   help="recompute summary.json of a finished chain and exit")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("rank", help="SDB feature ranking from a chain")
    p.add_argument("chain_dir")
    p.add_argument("--burnin-frac", type=float, default=0.2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("predict", help="predictive probabilities on a test file")
    p.add_argument("chain_dir")
    p.add_argument("test_csv")
    p.add_argument("--mode", default="bayes_average", choices=PREDICTION_MODES)
    p.add_argument("--burnin-frac", type=float, default=0.2)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="refit over a grid of prior scales")
    p.add_argument("config")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("loocv", help="leave-one-out cross-validation")
    p.add_argument("config")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_loocv)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.func is cmd_fit and not args.resume_summarize and not args.config:
            raise UsageError("fit needs a config file or --resume-summarize")
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, FloatingPointError, ArithmeticError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
