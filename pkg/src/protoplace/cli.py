"""Command-line entry point.

Subcommands: synth, train, eval, ablate, sweep.  Every command writes a
manifest.json into its output directory before exiting 0; re-running a
command with the same arguments reproduces its metric files byte for byte.

Exit codes: 0 ok, 2 configuration, 3 missing input, 4 numeric failure,
5 shape mismatch.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import generate_synthetic, load_dataset_dir, save_dataset
from .errors import CapacityError, ConfigError, FormatError, ParameterError, \
    ShapeError, TrainingError, UsageError, ValidationError
from .metrics import cs_sweep, evaluate, prototype_similarity
from .prototypes import PrototypeModel, load_model, project_prototypes, save_model, \
    train_prototypes
from .refine import load_refiner, refine_features, save_refiner, train_sof

CLI_MODES = {
    "s2v": ("s2v_baseline", False),
    "ep": ("ep_only", False),
    "ep-ei": ("ep_ei", False),
    "full": ("full", True),
}

ABLATION_LADDER = [
    ("s2v", "s2v_baseline", False),
    ("s2v+ep_ei", "ep_ei", False),
    ("s2v+sof", "s2v_baseline", True),
    ("s2v+sof+ep", "ep_only", True),
    ("s2v+sof+ep_ei", "full", True),
]


def _out_dir(path: str) -> Path:
    p = Path(path)
    root = os.environ.get("PROTOPLACE_OUT_ROOT")
    if root and not p.is_absolute():
        p = Path(root) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def _fingerprint(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(p) for p in paths):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def _dataset_fingerprint(data_dir: Path) -> str:
    files = sorted(data_dir.glob("*.bin")) + sorted(data_dir.glob("*.csv")) + \
        sorted(data_dir.glob("split.txt"))
    return _fingerprint(files)


def _write_manifest(out_dir: Path, argv, cfg, seed, outputs, metrics, started) -> None:
    manifest = {
        "command": ["protoplace"] + list(argv),
        "config": cfg,
        "seed": seed,
        "outputs": {k: str(v) for k, v in outputs.items()},
        "metrics": metrics,
        "duration_seconds": round(time.time() - started, 3),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def _pct(x) -> str:
    return "--" if x is None else f"{100.0 * x:.1f}"


def _num(x) -> str:
    return "" if x is None else f"{x:.9g}"


def _load_data(data_dir: str):
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"dataset directory {data_dir} does not exist")
    fmt = "binary" if (data_dir / "features.bin").exists() else "csv"
    if fmt == "csv" and not (data_dir / "features.csv").exists():
        raise FileNotFoundError(f"no dataset files under {data_dir}")
    return load_dataset_dir(data_dir, format=fmt), data_dir


def _parse_delta_grid(spec: str) -> list[float]:
    spec = spec.strip()
    if ":" in spec:
        start, stop, step = (float(tok) for tok in spec.split(":"))
        if step <= 0 or stop < start:
            raise ConfigError("delta grid must ascend with positive step")
        grid = []
        d = start
        while d <= stop + 1e-12:
            grid.append(round(d, 10))
            d += step
        return grid
    return [float(tok) for tok in spec.split(",") if tok != ""]


# ---------------------------------------------------------------------------
# pipeline helpers shared by train / ablate / sweep


def _run_pipeline(ds, cfg: dict, mode_name: str, use_sof: bool, seed: int):
    """Train one model (optionally behind the refiner); returns artifacts."""
    refiner = None
    sof_trace: list[float] = []
    train_ds = ds
    if use_sof:
        refiner, sof_trace = train_sof(ds, cfgmod.sof_config(cfg, seed=seed))
        train_ds = refine_features(ds, refiner)
    tcfg = cfgmod.train_config(cfg, mode=mode_name, seed=seed)
    model = train_prototypes(train_ds, tcfg)
    return model, refiner, sof_trace, train_ds


def _eval_model(model: PrototypeModel, eval_ds, grid):
    reports, best_delta = cs_sweep(model, eval_ds, grid)
    best = next(r for r in reports if r.delta == best_delta)
    return reports, best


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, argv) -> int:
    started = time.time()
    cfg = cfgmod.load_config(args.config)
    out = _out_dir(args.out)
    ds = generate_synthetic(cfgmod.synth_config(cfg))
    paths = save_dataset(ds, out, format=args.format)
    _write_manifest(out, argv, cfg, cfg["seed"], paths,
                    {"samples": int(ds.features.shape[0]),
                     "fingerprint": _dataset_fingerprint(out)}, started)
    print(f"wrote {ds.features.shape[0]} samples to {out}")
    return 0


def cmd_train(args, argv) -> int:
    started = time.time()
    cfg = cfgmod.load_config(args.config)
    ds, data_dir = _load_data(args.data)
    out = _out_dir(args.out)
    mode_name, use_sof = CLI_MODES[args.mode]
    model, refiner, sof_trace, _ = _run_pipeline(ds, cfg, mode_name, use_sof,
                                                 cfg["seed"])
    model_dir = out / "model"
    save_model(model, model_dir, meta={"cli_mode": args.mode, "used_sof": use_sof})
    if refiner is not None:
        save_refiner(refiner, model_dir,
                     meta={"seed": cfg["seed"], "loss_trace": sof_trace})
    outputs = {"model": model_dir}
    metrics = {"final_loss": model.loss_trace[-1] if model.loss_trace else None,
               "dataset_fingerprint": _dataset_fingerprint(data_dir)}
    _write_manifest(out, argv, cfg, cfg["seed"], outputs, metrics, started)
    print(f"trained mode={args.mode} -> {model_dir}")
    return 0


def _write_report_files(out: Path, label: str, reports, best, model, eval_ds) -> None:
    suffix = f"_{label}" if label else ""
    with open(out / f"sweep{suffix}.csv", "w") as f:
        f.write("delta,U,S,H\n")
        for r in reports:
            f.write(f"{r.delta:.6g},{_num(r.U)},{_num(r.S)},{_num(r.H)}\n")
    with open(out / f"report{suffix}.csv", "w") as f:
        f.write("T,U,S,H,delta\n")
        f.write(f"{_num(best.T)},{_num(best.U)},{_num(best.S)},{_num(best.H)},"
                f"{best.delta:.6g}\n")
    with open(out / f"report{suffix}.txt", "w") as f:
        f.write(f"T = {_pct(best.T)}  U = {_pct(best.U)}  S = {_pct(best.S)}  "
                f"H = {_pct(best.H)}  (delta = {best.delta:g})\n")
    for block, ids in (("seen", np.sort(eval_ds.seen_classes)),
                       ("unseen", np.sort(eval_ds.unseen_classes))):
        if ids.size == 0:
            continue
        protos = project_prototypes(model, eval_ds.attributes, ids)
        sim = prototype_similarity(protos, ids)
        with open(out / f"similarity_{block}{suffix}.csv", "w") as f:
            f.write("class_id," + ",".join(str(int(i)) for i in ids) + "\n")
            for i, row in zip(ids, sim.matrix):
                f.write(f"{int(i)}," + ",".join(f"{v:.9g}" for v in row) + "\n")


def cmd_eval(args, argv) -> int:
    started = time.time()
    ds, data_dir = _load_data(args.data)
    out = _out_dir(args.out)
    grid = _parse_delta_grid(args.delta_grid)
    if not grid:
        raise ConfigError("delta grid is empty")
    model_dirs = [Path(m) for m in args.model]
    if len(model_dirs) == 1:
        labels = [""]
    else:
        labels = [p.parent.name if p.name == "model" else p.name
                  for p in model_dirs]
        if len(set(labels)) != len(labels):
            labels = [f"model{i}" for i in range(1, len(model_dirs) + 1)]
    metrics = {}
    outputs = {}
    for model_dir, label in zip(model_dirs, labels):
        if not (model_dir / "model.json").exists():
            raise FileNotFoundError(f"no trained model under {model_dir}")
        model, manifest = load_model(model_dir)
        if model.net.out_dim != ds.feat_dim or model.net.in_dim != ds.attr_dim:
            raise ShapeError(
                f"model maps {model.net.in_dim}->{model.net.out_dim}, dataset is "
                f"{ds.attr_dim}->{ds.feat_dim}"
            )
        eval_ds = ds
        if (model_dir / "refiner.json").exists():
            eval_ds = refine_features(ds, load_refiner(model_dir))
        reports, best = _eval_model(model, eval_ds, grid)
        _write_report_files(out, label, reports, best, model, eval_ds)
        key = label or "model"
        metrics[key] = {"T": best.T, "U": best.U, "S": best.S, "H": best.H,
                        "delta": best.delta}
        outputs[key] = model_dir
        print(f"{key}: T={_pct(best.T)} U={_pct(best.U)} S={_pct(best.S)} "
              f"H={_pct(best.H)} at delta={best.delta:g}")
    metrics["dataset_fingerprint"] = _dataset_fingerprint(data_dir)
    _write_manifest(out, argv, {"delta_grid": grid}, None, outputs, metrics, started)
    return 0


def cmd_ablate(args, argv) -> int:
    started = time.time()
    cfg = cfgmod.load_config(args.config)
    ds, data_dir = _load_data(args.data)
    out = _out_dir(args.out)
    grid = cfgmod.delta_grid(cfg)
    seeds = [cfg["seed"] + i for i in range(args.seeds)]
    rows = []
    for name, mode_name, use_sof in ABLATION_LADDER:
        per_seed = {"T": [], "U": [], "S": [], "H": []}
        for seed in seeds:
            model, refiner, _, train_ds = _run_pipeline(ds, cfg, mode_name,
                                                        use_sof, seed)
            _, best = _eval_model(model, train_ds, grid)
            for key, val in (("T", best.T), ("U", best.U), ("S", best.S),
                             ("H", best.H)):
                per_seed[key].append(val if val is not None else float("nan"))
        rows.append((name, {k: (float(np.mean(v)), float(np.std(v)))
                            for k, v in per_seed.items()}))

    with open(out / "ablation.csv", "w") as f:
        f.write("config,T,U,S,H\n")
        for name, stats in rows:
            cells = ",".join(f"{m:.4f}±{s:.4f}" for m, s in
                             (stats[k] for k in ("T", "U", "S", "H")))
            f.write(f"{name},{cells}\n")
    with open(out / "ablation.txt", "w") as f:
        f.write(f"{'config':<16}{'T':>14}{'U':>14}{'S':>14}{'H':>14}\n")
        for name, stats in rows:
            cells = "".join(
                f"{100 * m:>8.1f}±{100 * s:<4.1f}"
                for m, s in (stats[k] for k in ("T", "U", "S", "H"))
            )
            f.write(f"{name:<16}{cells}\n")
    metrics = {name: {k: stats[k][0] for k in ("T", "U", "S", "H")}
               for name, stats in rows}
    metrics["dataset_fingerprint"] = _dataset_fingerprint(data_dir)
    _write_manifest(out, argv, cfg, cfg["seed"],
                    {"table": out / "ablation.csv"}, metrics, started)
    print((out / "ablation.txt").read_text())
    return 0


def cmd_sweep(args, argv) -> int:
    started = time.time()
    cfg = cfgmod.load_config(args.config)
    ds, data_dir = _load_data(args.data)
    out = _out_dir(args.out)
    grid = cfgmod.delta_grid(cfg)
    if args.param not in ("n", "sigma"):
        raise ConfigError(f"unknown sweep parameter {args.param!r}")
    tokens = []
    for tok in args.values.split(","):
        tok = tok.strip()
        if ".." in tok:  # inclusive integer range, e.g. 0..8
            lo, hi = tok.split("..")
            tokens.extend(str(v) for v in range(int(lo), int(hi) + 1))
        elif tok:
            tokens.append(tok)
    if args.param == "n":
        values = [int(float(v)) for v in tokens]
    else:
        values = [float(v) for v in tokens]

    results = []
    for value in values:
        run_cfg = json.loads(json.dumps(cfg))  # deep copy
        mode_name, use_sof = CLI_MODES[args.mode]
        if args.param == "n":
            if value == 0:
                mode_name = "s2v_baseline"  # hallucination disabled
            else:
                run_cfg["hallucination"]["n_neighbors"] = value
        else:
            if value <= 0:
                raise ConfigError("sigma values must be positive")
            run_cfg["hallucination"]["sigma"] = value
        model, _, _, train_ds = _run_pipeline(ds, run_cfg, mode_name, use_sof,
                                              run_cfg["seed"])
        _, best = _eval_model(model, train_ds, grid)
        results.append((value, best.T, best.H))

    with open(out / "sweep.csv", "w") as f:
        f.write("value,T,H\n")
        for value, t, h in results:
            f.write(f"{value:g},{t:.9g},{h:.9g}\n")
    metrics = {str(v): {"T": t, "H": h} for v, t, h in results}
    metrics["dataset_fingerprint"] = _dataset_fingerprint(data_dir)
    _write_manifest(out, argv, cfg, cfg["seed"], {"sweep": out / "sweep.csv"},
                    metrics, started)
    print(f"swept {args.param} over {values} -> {out / 'sweep.csv'}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protoplace",
        description="Placeholder-based prototype learning for zero-shot "
                    "recognition on embedding-level benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a prototype model")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=tuple(CLI_MODES), default="full")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate trained model(s)")
    p.add_argument("--model", action="append", required=True,
                   help="model directory; pass twice for paired similarity output")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--delta-grid", default="0:1:0.02",
                   help="start:stop:step or comma-separated deltas")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the five-configuration ablation ladder")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="sweep a hallucination hyper-parameter")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--mode", choices=tuple(CLI_MODES), default="full")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except (ConfigError, ParameterError, CapacityError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 3
    except (TrainingError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except (ShapeError, ValidationError, FormatError, UsageError) as exc:
        print(f"shape/validation error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
