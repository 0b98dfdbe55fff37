"""Command line entry point.

Subcommands: entropy, gen-data, corrupt, train, eval, bench-noise,
bench-intensity, bench-missing, sweep-beta.

Configuration is layered: built-in defaults, then an INI-style sectioned
key/value file (--config), then environment variables (DIB_<SECTION>__<KEY>),
then repeatable --set section.key=value overrides, then explicit flags.
Unknown sections or keys are rejected.  Every run directory receives the
effective config, the seed list, a version string and the command's CSV or
JSON outputs; reruns with identical inputs produce identical bytes.
Errors leave a machine-readable JSON object on stderr and a nonzero exit.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    BETA_GRID,
    INTENSITY_LEVELS,
    MISSING_RATES,
    NOISE_GAUSSIAN_STD,
    NOISE_TOKEN_RATE,
    bench_intensity,
    bench_missing,
    bench_noise,
    run_single,
    sweep_beta,
)
from .data import (
    CorruptionSpec,
    Dataset,
    SyntheticSpec,
    corrupt_gaussian,
    corrupt_tokens,
    generate,
    load_dataset,
    mask_missing,
    read_tensor,
    save_dataset,
)
from .entropy import KernelConfig, gram_entropy, gram_from_batch, joint_entropy, renyi_entropy_full
from .linalg import eig_dense
from .model import DibModel, ModalitySpec
from .trainkit import TrainConfig, evaluate, split_indices, train

ENV_PREFIX = "DIB_"


class CliError(RuntimeError):
    pass


# --- configuration schema ------------------------------------------------------

SCHEMA = {
    "kernel": {
        "alpha": 1.9,
        "k_rank": 10,
        "bandwidth_rule": "top5",
        "sigma2": 0.0,
    },
    "train": {
        "lr_encoder": 1e-5,
        "lr_model": 2e-5,
        "batch_size": 32,
        "epochs": 50,
        "dropout": 0.5,
        "hidden": 50,
        "heads": 5,
        "fusion_layers": 3,
        "bottleneck_len": 2,
        "beta_uni": 1e-5,
        "beta_multi": 1e-5,
        "task": "regression",
        "classes": 2,
        "dominant": "t",
        "text_modality": "t",
        "gamma_init": 0.1,
        "mi_on_samples": True,
        "disable_uni_lrib": "",
        "disable_multi_lrib": False,
        "disable_all_lrib": False,
        "drop_modalities": "",
        "seed": 0,
        "seeds": "0,1,2,3,4",
        "split_fractions": "0.6,0.2,0.2",
    },
    "data": {
        "n_samples": 200,
        "seed": 0,
        "label_kind": "continuous",
        "nuisance_std": 0.3,
        "distractor_std": 0.5,
        "strength_t": 1.0,
        "strength_a": 0.4,
        "strength_v": 0.4,
        "t_len": 12,
        "t_dim": 16,
        "a_len": 20,
        "a_dim": 8,
        "v_len": 20,
        "v_dim": 8,
    },
    "corrupt": {
        "kind": "gaussian-noise",
        "rate": 0.1,
        "std": 1.0,
        "modalities": "a,v",
        "token_modality": "t",
        "seed": 0,
        "splits": "train,val,test",
    },
    "bench": {
        "token_rate": NOISE_TOKEN_RATE,
        "gaussian_std": NOISE_GAUSSIAN_STD,
        "rates": ",".join(repr(r) for r in MISSING_RATES),
        "levels": ",".join(repr(v) for v in INTENSITY_LEVELS),
        "betas": ",".join(repr(b) for b in BETA_GRID),
        "mask_seed": 1234,
        "workers": 1,
    },
}


def _coerce(section: str, key: str, raw: str):
    default = SCHEMA[section][key]
    if isinstance(default, bool):
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise CliError(f"config {section}.{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return str(raw)


def load_config(config_path=None, sets=(), env=None) -> dict:
    """Layered effective config as {section: {key: value}}."""
    cfg = {section: dict(values) for section, values in SCHEMA.items()}
    if config_path:
        parser = configparser.ConfigParser()
        if not Path(config_path).exists():
            raise CliError(f"config file not found: {config_path}")
        parser.read(config_path)
        for section in parser.sections():
            if section not in SCHEMA:
                raise CliError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise CliError(f"unknown config key {section}.{key}")
                cfg[section][key] = _coerce(section, key, raw)
    env = os.environ if env is None else env
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        section, key = name[len(ENV_PREFIX):].lower().split("__", 1)
        if section in SCHEMA and key in SCHEMA[section]:
            cfg[section][key] = _coerce(section, key, raw)
    for item in sets:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise CliError(f"--set expects section.key=value, got {item!r}")
        target, raw = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise CliError(f"unknown config key {section}.{key}")
        cfg[section][key] = _coerce(section, key, raw)
    return cfg


def _csv_floats(raw: str):
    return tuple(float(v) for v in str(raw).split(",") if str(v).strip() != "")


def _csv_strs(raw: str):
    return tuple(v.strip() for v in str(raw).split(",") if v.strip())


def train_config(cfg: dict) -> TrainConfig:
    k = cfg["kernel"]
    t = cfg["train"]
    return TrainConfig(
        lr_encoder=t["lr_encoder"],
        lr_model=t["lr_model"],
        batch_size=t["batch_size"],
        epochs=t["epochs"],
        dropout=t["dropout"],
        hidden=t["hidden"],
        heads=t["heads"],
        fusion_layers=t["fusion_layers"],
        bottleneck_len=t["bottleneck_len"],
        alpha=k["alpha"],
        k_rank=k["k_rank"],
        bandwidth_rule=k["bandwidth_rule"],
        sigma2=k["sigma2"],
        beta_uni=t["beta_uni"],
        beta_multi=t["beta_multi"],
        task=t["task"],
        classes=t["classes"],
        dominant=t["dominant"],
        text_modality=t["text_modality"],
        gamma_init=t["gamma_init"],
        mi_on_samples=t["mi_on_samples"],
        disable_uni_lrib=_csv_strs(t["disable_uni_lrib"]),
        disable_multi_lrib=t["disable_multi_lrib"],
        disable_all_lrib=t["disable_all_lrib"],
        drop_modalities=_csv_strs(t["drop_modalities"]),
        seed=t["seed"],
        seeds=tuple(int(s) for s in _csv_strs(t["seeds"])),
        split_fractions=_csv_floats(t["split_fractions"]),
    )


def synthetic_spec(cfg: dict) -> SyntheticSpec:
    d = cfg["data"]
    modalities = (
        ModalitySpec("t", d["t_len"], d["t_dim"]),
        ModalitySpec("a", d["a_len"], d["a_dim"]),
        ModalitySpec("v", d["v_len"], d["v_dim"]),
    )
    return SyntheticSpec(
        n_samples=d["n_samples"],
        modalities=modalities,
        strengths={"t": d["strength_t"], "a": d["strength_a"], "v": d["strength_v"]},
        label_kind=d["label_kind"],
        nuisance_std=d["nuisance_std"],
        distractor_std=d["distractor_std"],
        seed=d["seed"],
    )


# --- run directory helpers ------------------------------------------------------


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"dib {__version__} ({out.stdout.strip()})"
    except Exception:
        pass
    return f"dib {__version__}"


def write_run_dir(out_dir: Path, cfg: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    parser = configparser.ConfigParser()
    for section, values in cfg.items():
        parser[section] = {k: str(v) for k, v in values.items()}
    with open(out_dir / "config.ini", "w") as fh:
        parser.write(fh)
    with open(out_dir / "seeds.txt", "w") as fh:
        fh.write(",".join(str(s) for s in _csv_strs(cfg["train"]["seeds"])) + "\n")
    with open(out_dir / "version.txt", "w") as fh:
        fh.write(version_string() + "\n")


def write_csv(path: Path, rows, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([
                repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns
            ])


def write_json(path: Path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_batch_file(path: str) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise CliError(f"batch file not found: {path}")
    if p.suffix == ".tensor":
        arr = read_tensor(p)
    else:
        arr = np.loadtxt(p, delimiter=",", ndmin=2)
    if arr.ndim != 2:
        raise CliError(f"batch file must hold a 2-d array, got shape {arr.shape}")
    return arr.astype(np.float64)


def _dataset_for(args, cfg, out_dir: Path) -> Dataset:
    if getattr(args, "data", None):
        return load_dataset(args.data)
    ds = generate(synthetic_spec(cfg))
    save_dataset(ds, out_dir / "dataset")
    return ds


# --- subcommands -----------------------------------------------------------------


def cmd_entropy(args, cfg):
    kernel = KernelConfig(
        alpha=cfg["kernel"]["alpha"],
        k_rank=cfg["kernel"]["k_rank"],
        bandwidth_rule=cfg["kernel"]["bandwidth_rule"],
        sigma2=cfg["kernel"]["sigma2"] or None,
    )
    x = _load_batch_file(args.batch)
    n = x.shape[0]
    if args.k is None:
        k = kernel.effective_k(n)
    elif args.k == "n-1":
        k = n - 1
    else:
        k = int(args.k)
    result = {"n": n, "alpha": kernel.alpha, "k": k}
    gram = gram_from_batch(x, kernel)
    if args.full:
        result["h"] = renyi_entropy_full(eig_dense(gram.base, psd=True), kernel)
        result["k"] = n
    else:
        result["h"] = gram_entropy(gram, kernel, k=k)
    if args.batch_b:
        y = _load_batch_file(args.batch_b)
        if y.shape[0] != n:
            raise CliError(f"batch sizes differ: {n} vs {y.shape[0]}")
        gram_b = gram_from_batch(y, kernel)
        result["h_b"] = gram_entropy(gram_b, kernel, k=k)
        result["h_joint"] = joint_entropy(gram, gram_b, kernel, k=k)
        result["mi"] = result["h"] + result["h_b"] - result["h_joint"]
    print(json.dumps(result, sort_keys=True))
    if args.out:
        out_dir = Path(args.out)
        write_run_dir(out_dir, cfg)
        write_json(out_dir / "entropy.json", result)
    return 0


def cmd_gen_data(args, cfg):
    out_dir = Path(args.out)
    write_run_dir(out_dir, cfg)
    ds = generate(synthetic_spec(cfg))
    save_dataset(ds, out_dir / "dataset")
    print(json.dumps({"dataset": str(out_dir / "dataset"), "n": ds.n}, sort_keys=True))
    return 0


def cmd_corrupt(args, cfg):
    out_dir = Path(args.out)
    write_run_dir(out_dir, cfg)
    ds = load_dataset(args.data)
    c = cfg["corrupt"]
    splits = _csv_strs(c["splits"])
    sample_mask = None
    if set(splits) != {"train", "val", "test"}:
        tcfg = train_config(cfg)
        parts = dict(zip(("train", "val", "test"),
                         split_indices(ds.n, tcfg.seed, tcfg.split_fractions)))
        sample_mask = np.concatenate([parts[s] for s in splits]) if splits else np.array([], int)
    if c["kind"] == "token-noise":
        ds = corrupt_tokens(ds, c["rate"], c["seed"], modality=c["token_modality"],
                            sample_mask=sample_mask)
    elif c["kind"] == "gaussian-noise":
        ds = corrupt_gaussian(ds, _csv_strs(c["modalities"]), c["std"], c["seed"],
                              sample_mask=sample_mask)
    elif c["kind"] == "missing-mask":
        ds = mask_missing(ds, c["rate"], c["seed"], sample_mask=sample_mask)
    else:
        raise CliError(f"unknown corruption kind {c['kind']!r}")
    save_dataset(ds, out_dir / "dataset")
    print(json.dumps({"dataset": str(out_dir / "dataset"),
                      "corruptions": ds.meta["corruptions"]}, sort_keys=True))
    return 0


def cmd_train(args, cfg):
    out_dir = Path(args.out)
    write_run_dir(out_dir, cfg)
    tcfg = train_config(cfg)
    ds = _dataset_for(args, cfg, out_dir)
    result, test_metrics = run_single_with_log(ds, tcfg, tcfg.seed, out_dir)
    result.model.save(out_dir / "checkpoint.bin")
    payload = {
        "best_epoch": result.best_epoch,
        "val": result.log[result.best_epoch]["val"],
        "test": test_metrics.as_dict(),
    }
    write_json(out_dir / "metrics.json", payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


def run_single_with_log(ds, tcfg, seed, out_dir: Path):
    from dataclasses import replace as _replace

    tcfg = _replace(tcfg, seed=seed)
    from .trainkit import build_model

    model = build_model(ds, tcfg)
    result = train(model, ds, tcfg, log_path=out_dir / "train_log.jsonl")
    test_metrics = evaluate(result.model, ds, result.test_idx, tcfg)
    return result, test_metrics


def cmd_eval(args, cfg):
    tcfg = train_config(cfg)
    ds = load_dataset(args.data)
    model = DibModel.load(args.checkpoint)
    tr, va, te = split_indices(ds.n, tcfg.seed, tcfg.split_fractions)
    indices = {"train": tr, "val": va, "test": te}[args.split]
    metrics = evaluate(model, ds, indices, tcfg)
    payload = {"split": args.split, "metrics": metrics.as_dict()}
    print(json.dumps(payload, sort_keys=True))
    if args.out:
        out_dir = Path(args.out)
        write_run_dir(out_dir, cfg)
        write_json(out_dir / "metrics.json", payload)
    return 0


def cmd_bench_noise(args, cfg):
    out_dir = Path(args.out)
    write_run_dir(out_dir, cfg)
    tcfg = train_config(cfg)
    ds = _dataset_for(args, cfg, out_dir)
    rows, summary = bench_noise(
        ds, tcfg,
        token_rate=cfg["bench"]["token_rate"],
        gaussian_std=cfg["bench"]["gaussian_std"],
        workers=cfg["bench"]["workers"],
    )
    columns = list(rows[0].keys())
    write_csv(out_dir / "bench_noise.csv", rows, columns)
    write_json(out_dir / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_bench_intensity(args, cfg):
    out_dir = Path(args.out)
    write_run_dir(out_dir, cfg)
    tcfg = train_config(cfg)
    ds = _dataset_for(args, cfg, out_dir)
    levels = _csv_floats(args.levels) if args.levels else _csv_floats(cfg["bench"]["levels"])
    rows, summary = bench_intensity(ds, tcfg, levels=levels, workers=cfg["bench"]["workers"])
    write_csv(out_dir / "bench_intensity.csv", rows, list(rows[0].keys()))
    write_json(out_dir / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_bench_missing(args, cfg):
    out_dir = Path(args.out)
    write_run_dir(out_dir, cfg)
    tcfg = train_config(cfg)
    ds = _dataset_for(args, cfg, out_dir)
    rates = _csv_floats(args.rates) if args.rates else _csv_floats(cfg["bench"]["rates"])
    rows, summary = bench_missing(ds, tcfg, rates=rates, mask_seed=cfg["bench"]["mask_seed"],
                                  workers=cfg["bench"]["workers"])
    write_csv(out_dir / "bench_missing.csv", rows, list(rows[0].keys()))
    write_json(out_dir / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_sweep_beta(args, cfg):
    out_dir = Path(args.out)
    write_run_dir(out_dir, cfg)
    tcfg = train_config(cfg)
    ds = _dataset_for(args, cfg, out_dir)
    betas = _csv_floats(args.betas) if args.betas else _csv_floats(cfg["bench"]["betas"])
    rows, summary = sweep_beta(ds, tcfg, betas=betas, workers=cfg["bench"]["workers"])
    write_csv(out_dir / "sweep_beta.csv", rows, list(rows[0].keys()))
    write_json(out_dir / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


# --- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dib",
        description="Low-rank Renyi entropy information bottleneck toolkit",
    )
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="sectioned key/value config file")
        p.add_argument("--set", dest="sets", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override one config value")
        p.add_argument("--seed", type=int, help="override train.seed")
        if needs_out:
            p.add_argument("--out", required=True, help="run output directory")

    p = sub.add_parser("entropy", help="information measures of one or two batches")
    common(p, needs_out=False)
    p.add_argument("batch", help="batch file (.csv rows or .tensor)")
    p.add_argument("batch_b", nargs="?", default=None, help="optional second batch")
    p.add_argument("--k", default=None, help="truncation rank, or 'n-1'")
    p.add_argument("--full", action="store_true", help="use the full spectrum")
    p.add_argument("--out", default=None, help="optional run output directory")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)

    p = sub.add_parser("corrupt", help="apply one corruption to a dataset")
    common(p)
    p.add_argument("--data", required=True, help="input dataset directory")

    p = sub.add_parser("train", help="train one model")
    common(p)
    p.add_argument("--data", help="dataset directory (generated if omitted)")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, needs_out=False)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", default=None)

    p = sub.add_parser("bench-noise", help="clean vs noise-protocol decline, paired variants")
    common(p)
    p.add_argument("--data", help="dataset directory (generated if omitted)")

    p = sub.add_parser("bench-intensity", help="decline over a noise-intensity grid")
    common(p)
    p.add_argument("--data", help="dataset directory (generated if omitted)")
    p.add_argument("--levels", help="comma-separated intensity levels")

    p = sub.add_parser("bench-missing", help="metric curves over missing-modality rates")
    common(p)
    p.add_argument("--data", help="dataset directory (generated if omitted)")
    p.add_argument("--rates", help="comma-separated missing rates")

    p = sub.add_parser("sweep-beta", help="information-plane frontier over beta")
    common(p)
    p.add_argument("--data", help="dataset directory (generated if omitted)")
    p.add_argument("--betas", help="comma-separated beta values")
    return parser


COMMANDS = {
    "entropy": cmd_entropy,
    "gen-data": cmd_gen_data,
    "corrupt": cmd_corrupt,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench-noise": cmd_bench_noise,
    "bench-intensity": cmd_bench_intensity,
    "bench-missing": cmd_bench_missing,
    "sweep-beta": cmd_sweep_beta,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.sets)
        if args.seed is not None:
            cfg["train"]["seed"] = int(args.seed)
        return COMMANDS[args.command](args, cfg)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports all failures
        sys.stderr.write(json.dumps({
            "error": type(exc).__name__,
            "message": str(exc),
        }, sort_keys=True) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
