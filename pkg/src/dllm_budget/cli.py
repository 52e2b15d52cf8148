"""``dllm-budget`` command line: ingest, gen, train, calibrate, predict, bench, fit, bimodal."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from dllm_budget import __version__
from dllm_budget.calibration import (
    calibrate,
    exceedance_rate,
    load_margin,
    margin_path_for,
    positive_residuals,
    save_margin,
)
from dllm_budget.cost_model import (
    LLADA_8B,
    CostModelError,
    ModelConfig,
    cost_curve,
    fit_quadratic,
    read_cost_curve_csv,
    write_cost_curve_csv,
)
from dllm_budget.dataset import (
    DatasetError,
    MixtureComponent,
    MixtureSpec,
    bimodal_preset,
    compute_stats,
    gen_synthetic,
    load_jsonl,
    partition,
    skewed_preset,
    write_jsonl,
)
from dllm_budget.features import ENGINEERED, TEXT_ONLY
from dllm_budget.gbdt import TrainingError
from dllm_budget.harness import BENCH_TRAIN_CONFIG, HarnessError, bimodal_experiment, export_report, latency_profile, run_benchmark
from dllm_budget.predictor import (
    ModelFileError,
    TrainConfig,
    evaluate,
    load_model,
    predict_lengths,
    save_model,
    train,
)
from dllm_budget.strategies import (
    STRATEGY_NAMES,
    MaxLength,
    MeanDoubling,
    Oracle,
    PredictThenDiffuse,
    SimContext,
    StaticDoubling,
    StrategyError,
    write_traces_jsonl,
)

DEFAULT_SEED = 0
CONFIG_ENV = "DLLM_BUDGET_CONFIG"


class CliError(Exception):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_path, command: str, args: argparse.Namespace, inputs: list, seed) -> Path:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    manifest = {
        "command": command,
        "flags": flags,
        "inputs": {str(p): sha256_file(p) for p in inputs if p is not None and Path(p).is_file()},
        "seed": seed,
        "tool_version": __version__,
    }
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2, default=str) + "\n", encoding="utf-8")
    return path


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        rounds=args.rounds,
        max_depth=args.max_depth,
        learning_rate=args.learning_rate,
        min_samples_leaf=args.min_samples_leaf,
        hash_buckets=args.hash_buckets,
        seed=args.seed,
    )


def _model_config(args) -> ModelConfig:
    return ModelConfig(args.blocks, args.hidden, args.mlp, args.steps, args.lmax)


def _split_meta(args, data_path) -> dict:
    return {"seed": args.seed, "train_ratio": args.train_ratio, "val_fraction": args.val_fraction, "data_sha256": sha256_file(data_path)}


def _variant_path(out: Path, variant: str) -> Path:
    return out.with_name(f"{out.stem}.{variant}{out.suffix}")


# --- commands ---------------------------------------------------------------


def cmd_ingest(args) -> int:
    records = load_jsonl(args.input, tokenizer=args.tokenizer)
    write_jsonl(records, args.out)
    write_manifest(args.out, "ingest", args, [args.input], None)
    print(f"wrote {len(records)} records to {args.out}")
    if len(records) >= 2:
        print(compute_stats(records))
    return 0


def _parse_component(text: str) -> MixtureComponent:
    parts = text.split(":")
    if not 3 <= len(parts) <= 5:
        raise CliError(f"bad --component {text!r}; expected weight:mean:spread[:family[:name]]")
    try:
        weight, mean, spread = float(parts[0]), float(parts[1]), float(parts[2])
    except ValueError:
        raise CliError(f"bad --component {text!r}; numeric fields expected") from None
    family = parts[3] if len(parts) > 3 else "lognormal"
    name = parts[4] if len(parts) > 4 else None
    return MixtureComponent(weight, mean, spread, family, name)


def cmd_gen(args) -> int:
    if args.size < 1:
        raise CliError("--size must be >= 1")
    if args.bimodal_paper:
        spec = bimodal_preset(args.size, args.seed)
    elif args.skewed_paper:
        spec = skewed_preset(args.size, args.seed)
    elif args.component:
        spec = MixtureSpec(tuple(_parse_component(c) for c in args.component), seed=args.seed, size=args.size)
    else:
        raise CliError("choose --bimodal-paper, --skewed-paper or at least one --component")
    if args.cue_noise_rate is not None or args.cue_noise_scale is not None:
        spec = MixtureSpec(
            spec.components,
            spec.seed,
            spec.size,
            spec.cue_noise_rate if args.cue_noise_rate is None else args.cue_noise_rate,
            spec.cue_noise_scale if args.cue_noise_scale is None else args.cue_noise_scale,
        )
    records = gen_synthetic(spec)
    write_jsonl(records, args.out)
    args.resolved_mixture = spec.to_dict()
    write_manifest(args.out, "gen", args, [], args.seed)
    print(f"wrote {len(records)} records to {args.out}")
    if len(records) >= 2:
        print(compute_stats(records))
    return 0


def cmd_train(args) -> int:
    records = load_jsonl(args.data)
    part = partition(records, args.seed, args.train_ratio, args.val_fraction)
    cfg = _train_config(args)
    variants = [TEXT_ONLY, ENGINEERED] if args.variant == "both" else [args.variant]
    out = Path(args.out)
    rows = []
    for variant in variants:
        model = train(part.fit, variant, cfg)
        model.training = _split_meta(args, args.data)
        path = out if len(variants) == 1 else _variant_path(out, variant)
        save_model(model, path)
        write_manifest(path, "train", args, [args.data], args.seed)
        rows.append((variant, evaluate(model, part.test), path))
    print(f"{'variant':<12} {'RMSE':>8} {'MAE':>8} {'%<=10%err':>10}  model")
    for variant, m, path in rows:
        print(f"{variant:<12} {m.rmse:>8.2f} {m.mae:>8.2f} {m.pct_within_10:>10.2f}  {path}")
    return 0


def _load_model_with_split(path):
    model = load_model(path)
    return model, model.training


def cmd_calibrate(args) -> int:
    model, split = _load_model_with_split(args.model)
    records = load_jsonl(args.data)
    seed = split.get("seed", DEFAULT_SEED) if args.seed is None else args.seed
    part = partition(records, seed, split.get("train_ratio", 0.8), split.get("val_fraction", 0.1))
    margin = calibrate(model, part.val, args.p_safe, "validation")
    residuals = positive_residuals(model, part.val)
    out = Path(args.out) if args.out else margin_path_for(args.model)
    save_margin(margin, out)
    write_manifest(out, "calibrate", args, [args.model, args.data], seed)
    n = len(part.val)
    print(f"delta={margin.delta} p_safe={margin.p_safe} under-predicted={len(residuals)}/{n}")
    print(f"coverage: {100 * (1 - exceedance_rate(residuals, margin.delta)):.2f}% of under-predictions within delta")
    print(f"wrote {out}")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    if args.data:
        records = load_jsonl(args.data)
        ids, prompts = [r.id for r in records], [r.prompt_text for r in records]
    else:
        ids, prompts = [], []
        for i, line in enumerate(sys.stdin, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            ids.append(str(i))
            prompts.append(line)
    preds = predict_lengths(model, prompts)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "predicted_length"])
        w.writerows(zip(ids, preds))
    finally:
        if args.out:
            fh.close()
    return 0


def _strategies(names, args, model, delta):
    out = []
    for name in names:
        if name == "max":
            out.append(MaxLength())
        elif name == "static":
            out.append(StaticDoubling(args.static_initial))
        elif name == "mean":
            out.append(MeanDoubling())
        elif name == "ptd":
            if model is None:
                raise CliError("strategy 'ptd' needs --model")
            out.append(PredictThenDiffuse(model, delta))
        elif name == "oracle":
            out.append(Oracle())
        else:
            raise CliError(f"unknown strategy {name!r}; choose from {','.join(STRATEGY_NAMES)}")
    if "max" not in names:
        out.insert(0, MaxLength())
    return out


def cmd_bench(args) -> int:
    config = _model_config(args)
    inputs = [args.data]
    if args.emit_cost_curve:
        lengths = sorted({1, *range(64, config.max_response_len + 1, 64), config.max_response_len})
        write_cost_curve_csv(cost_curve(config, lengths), args.emit_cost_curve)
    records = load_jsonl(args.data)
    names = [s.strip() for s in args.strategies.split(",") if s.strip()]
    model, split, delta = None, {}, 0
    if args.model:
        model, split = _load_model_with_split(args.model)
        inputs.append(args.model)
        margin_file = Path(args.margin) if args.margin else margin_path_for(args.model)
        if args.delta is not None:
            delta = args.delta
        elif margin_file.is_file():
            delta = load_margin(margin_file).delta
            inputs.append(margin_file)
        elif "ptd" in names:
            raise CliError(f"no margin file at {margin_file}; run calibrate or pass --delta")
    seed = split.get("seed", DEFAULT_SEED) if args.seed is None else args.seed
    if args.split == "all":
        bench_records, train_records = records, records
    else:
        part = partition(records, seed, split.get("train_ratio", 0.8), split.get("val_fraction", 0.1))
        bench_records, train_records = part.test, part.train
    train_mean = float(np.mean([r.response_length for r in train_records]))
    ctx = SimContext(train_mean=train_mean, model=model, delta=delta, include_prompt=args.include_prompt)
    report = run_benchmark(_strategies(names, args, model, delta), bench_records, config, ctx, jobs=args.jobs, seed=seed)
    fmt = args.format or ("csv" if str(args.out).endswith(".csv") else "json")
    export_report(report, fmt, args.out)
    if args.traces:
        write_traces_jsonl([t for s in report.results for t in report.traces[s.strategy]], args.traces)
    write_manifest(args.out, "bench", args, inputs, seed)
    print(report.table())
    for s in report.results:
        prof = latency_profile(report.traces[s.strategy])
        print(f"{s.strategy}: single-shot {prof.single_shot_pct:.2f}%  max attempts {prof.attempts_max}")
    return 0


def cmd_fit(args) -> int:
    fit = fit_quadratic(read_cost_curve_csv(args.csv))
    print(f"linear_coeff={fit.linear_coeff!r}")
    print(f"quadratic_coeff={fit.quadratic_coeff!r}")
    print(f"intercept={fit.intercept!r}")
    print(f"r_squared={fit.r_squared!r}")
    return 0


def cmd_bimodal(args) -> int:
    res = bimodal_experiment(_model_config(args), seed=args.seed, size=args.size, train_config=_train_config(args))
    print(res.report.table())
    print(f"delta={res.delta} train_mean={res.train_mean:.1f}")
    print(f"predict-then-diffuse advantage over mean doubling: {res.advantage_pct:.2f}%")
    print(f"long records needing >=3 attempts under mean doubling: {res.long_multi_retry_pct:.1f}%")
    if args.out:
        Path(args.out).write_text(json.dumps(res.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        write_manifest(args.out, "bimodal", args, [], args.seed)
    return 0


# --- parser -----------------------------------------------------------------


def _config_defaults() -> ModelConfig:
    path = os.environ.get(CONFIG_ENV)
    if not path:
        return LLADA_8B
    try:
        return ModelConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"{CONFIG_ENV}={path}: cannot load model config ({exc})") from None


def _add_train_flags(p, defaults: TrainConfig):
    p.add_argument("--rounds", type=int, default=defaults.rounds)
    p.add_argument("--max-depth", type=int, default=defaults.max_depth)
    p.add_argument("--learning-rate", type=float, default=defaults.learning_rate)
    p.add_argument("--min-samples-leaf", type=int, default=defaults.min_samples_leaf)
    p.add_argument("--hash-buckets", type=int, default=defaults.hash_buckets)


def _add_model_config_flags(p, cfg: ModelConfig):
    p.add_argument("--blocks", type=int, default=cfg.num_blocks, help="transformer blocks N")
    p.add_argument("--hidden", type=int, default=cfg.hidden_dim, help="hidden size D")
    p.add_argument("--mlp", type=int, default=cfg.mlp_width, help="MLP width F")
    p.add_argument("--steps", type=int, default=cfg.diffusion_steps, help="diffusion steps T")
    p.add_argument("--lmax", type=int, default=cfg.max_response_len, help="maximum response canvas")


def build_parser() -> argparse.ArgumentParser:
    cfg = _config_defaults()
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="dllm-budget", description=__doc__, formatter_class=fmt)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize a JSONL corpus", formatter_class=fmt)
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--tokenizer", choices=("default", "precomputed"), default="default")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen", help="write a synthetic corpus", formatter_class=fmt)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--bimodal-paper", action="store_true", help="60%% short (mean 50) / 40%% long (mean 3000)")
    g.add_argument("--skewed-paper", action="store_true", help="heavy tail, mean ~96, std ~120")
    p.add_argument("--component", action="append", help="weight:mean:spread[:family[:name]]; repeatable")
    p.add_argument("--size", type=int, default=10000)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--cue-noise-rate", type=float, default=None)
    p.add_argument("--cue-noise-scale", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the length predictor", formatter_class=fmt)
    p.add_argument("--data", required=True)
    p.add_argument("--variant", choices=(TEXT_ONLY, ENGINEERED, "both"), default=TEXT_ONLY)
    _add_train_flags(p, TrainConfig())
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--train-ratio", type=float, default=0.8)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="fit the safety margin on the validation slice", formatter_class=fmt)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--p-safe", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=None, help="split seed (default: the one stored in the model)")
    p.add_argument("--out", default=None, help="margin file (default: <model>.margin.json)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", help="predict lengths; CSV id,predicted_length", formatter_class=fmt)
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=None, help="JSONL; prompts are read one per line from stdin if omitted")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="simulate strategies and write a cost report", formatter_class=fmt)
    p.add_argument("--data", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--margin", default=None)
    p.add_argument("--delta", type=int, default=None, help="override the calibrated margin")
    p.add_argument("--strategies", default=",".join(STRATEGY_NAMES))
    p.add_argument("--static-initial", type=int, default=200)
    p.add_argument("--split", choices=("test", "all"), default="test")
    p.add_argument("--include-prompt", action="store_true", help="charge prompt tokens in every attempt")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    _add_model_config_flags(p, cfg)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("json", "csv"), default=None)
    p.add_argument("--traces", default=None, help="write per-record traces as JSONL")
    p.add_argument("--emit-cost-curve", default=None, help="write a seq_len,flop CSV for the model config")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fit", help="quadratic fit of a seq_len,flop CSV", formatter_class=fmt)
    p.add_argument("csv")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bimodal", help="mean doubling vs predict-then-diffuse on the bimodal mixture", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--size", type=int, default=5000)
    _add_train_flags(p, BENCH_TRAIN_CONFIG)
    _add_model_config_flags(p, cfg)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bimodal)
    return parser


EXPECTED_ERRORS = (
    CliError,
    DatasetError,
    CostModelError,
    TrainingError,
    ModelFileError,
    StrategyError,
    HarnessError,
    ValueError,
    OSError,
)


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except EXPECTED_ERRORS as exc:
        print(f"dllm-budget: error: {exc}", file=sys.stderr)
        return 1
