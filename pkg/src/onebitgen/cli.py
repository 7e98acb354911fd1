"""Command-line driver.

Subcommands: gen-data, train, export-decoder, measure, reconstruct, sweep,
theory-check.  Configs are JSON files; flags override config fields.
Exit codes: 0 success, 2 usage or config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

from .core import DegenerateInputError, InvalidArgumentError, NumericError, ParseError, RngStream, TrainingError
from .data import SparseSpec, load_signals, sample_sparse_batch, save_signals
from .experiment import (
    _ALGO,
    _MATRIX,
    _MEASURE,
    _PERTURB,
    _SIGNAL,
    ConfigError,
    ExperimentConfig,
    SignalSource,
    TrainJob,
    _draw_signal,
    _keyed,
    _load_sources,
    _read_config,
    resolve_input_paths,
    _run_algorithm,
    run_sweep,
    run_theory_check,
    write_results,
    write_theory_check,
    results_to_text,
)
from .analysis import hamming_dist, mse, nmse
from .model import save_model
from .sensing import (
    NoiseConfig,
    load_ensemble,
    load_observation,
    make_ensemble,
    one_bit_sign,
    perturb_matrix,
    quantize,
    save_ensemble,
    save_observation,
)
from .train import export_decoder, load_vae, save_vae, write_training_curve

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _algorithms(flag):
    return tuple(a.strip() for a in flag.split(",") if a.strip()) if flag else None


def _say(msg):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(args) -> int:
    doc = _read_config(args.config) if args.config else {}
    extra = set(doc) - {"n", "k", "count", "value_dist", "normalize", "master_seed"}
    if extra:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(extra))}")
    seed = args.seed if args.seed is not None else doc.get("master_seed", 20240601)
    try:
        spec = SparseSpec(doc.get("n", 64), doc.get("k", 4), doc.get("value_dist", "uniform_half_one"), doc.get("normalize", False))
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from None
    count = int(doc.get("count", 10000))
    if count < 1:
        raise ConfigError("count must be >= 1")
    if not args.out:
        raise UsageError("gen-data needs --out")
    X = sample_sparse_batch(spec, count, _keyed(RngStream(seed), 0))
    save_signals(X, args.out, {"master_seed": seed, "stream": "0", **{k: v for k, v in doc.items() if k != "master_seed"}})
    _say(f"wrote {count} signals of length {spec.n} to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    if not args.config:
        raise UsageError("train needs --config")
    job = TrainJob.from_file(args.config)
    if args.seed is not None:
        job = replace(job, master_seed=args.seed)
    model_out = args.out or job.model_out
    if not model_out:
        raise ConfigError("no output path: set model_out in the config or pass --out")
    stem = Path(model_out).with_suffix("")
    curve_out = job.curve_out or f"{stem}.curve.csv"
    vae_out = job.vae_out or f"{stem}.vae.json"

    def log(row):
        _say(f"epoch {row['epoch']:4d}  loss {row['mean_loss']:.6g}  recon {row['recon_term']:.6g}  kl {row['kl_term']:.6g}")

    vae = job.run(log=log)
    save_vae(vae, vae_out)
    save_model(export_decoder(vae), model_out)
    write_training_curve(vae.history, curve_out)
    _say(f"wrote decoder {model_out}, VAE {vae_out}, training curve {curve_out}")
    return EXIT_OK


def cmd_export_decoder(args) -> int:
    if not args.model or not args.out:
        raise UsageError("export-decoder needs --model (a VAE file) and --out")
    if not Path(args.model).exists():
        raise ConfigError(f"VAE file not found: {args.model}")
    save_model(export_decoder(load_vae(args.model)), args.out)
    return EXIT_OK


_MEASURE_FIELDS = {"signal", "ensemble", "m", "v_n", "alpha", "v_delta", "master_seed", "trial", "model"}


def cmd_measure(args) -> int:
    """Draw one problem instance exactly as a sweep cell with ``m_idx = 0`` would."""
    doc = resolve_input_paths(_read_config(args.config), Path(args.config).parent) if args.config else {}
    extra = set(doc) - _MEASURE_FIELDS
    if extra:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(extra))}")
    if not args.out:
        raise UsageError("measure needs --out (an output directory)")
    try:
        cfg = ExperimentConfig(
            signal=SignalSource(**doc.get("signal", {})),
            ensemble=doc.get("ensemble", "unit_sphere_columns"),
            m_grid=(int(doc.get("m", 100)),),
            v_n_grid=(float(doc.get("v_n", 0.0)),),
            alpha_grid=(float(doc.get("alpha", 1.0)),),
            v_delta_grid=(float(doc.get("v_delta", 0.0)),),
            algorithms=("biht",),
            master_seed=args.seed if args.seed is not None else doc.get("master_seed", 20240601),
            model=args.model or doc.get("model"),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    trial = int(doc.get("trial", 0))
    G, dataset = _load_sources(cfg, None)
    root = RngStream(cfg.master_seed)
    x = _draw_signal(cfg, G, dataset, _keyed(root, _SIGNAL, trial))
    ens = make_ensemble(cfg.ensemble, cfg.m_grid[0], x.size, _keyed(root, _MATRIX, 0, trial))
    obs = quantize(ens, x, NoiseConfig(cfg.v_n_grid[0], cfg.alpha_grid[0]), _keyed(root, _MEASURE, 0, trial))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_signals(x, out / "signal.json", {"master_seed": cfg.master_seed, "trial": trial})
    save_observation(obs, out / "observation.json")
    v_delta = cfg.v_delta_grid[0]
    seen = perturb_matrix(ens, v_delta, _keyed(root, _PERTURB, 0, trial)) if v_delta > 0 else ens
    save_ensemble(seen, out / "ensemble.json")
    _say(f"wrote signal.json, observation.json, ensemble.json to {out}")
    return EXIT_OK


_RECON_FIELDS = {
    "observation",
    "ensemble",
    "truth",
    "algorithms",
    "gen",
    "biht",
    "yp",
    "gen_pgd",
    "k",
    "master_seed",
    "trial",
    "model",
}


def cmd_reconstruct(args) -> int:
    """Run the chosen algorithms on a stored observation; writes one CSV row per algorithm."""
    if not args.config:
        raise UsageError("reconstruct needs --config")
    doc = _read_config(args.config)
    extra = set(doc) - _RECON_FIELDS
    if extra:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(extra))}")
    base = Path(args.config).parent

    def path_of(key, required):
        value = doc.get(key)
        if value is None:
            if required:
                raise ConfigError(f"config field {key!r} is required")
            return None
        p = Path(value)
        p = p if p.is_absolute() else base / p
        if not p.exists():
            raise ConfigError(f"{key} file not found: {value}")
        return p

    obs = load_observation(path_of("observation", True))
    ens_path = path_of("ensemble", False)
    ens = load_ensemble(ens_path) if ens_path else obs.ensemble
    if ens is None:
        raise ConfigError("no measurement matrix: the observation has none embedded and no ensemble file was given")
    if ens.m != obs.m:
        raise ConfigError(f"ensemble has m={ens.m} but the observation has {obs.m} entries")
    truth_path = path_of("truth", False)
    truth = load_signals(truth_path)[0] if truth_path else None

    algos = _algorithms(args.algorithms) or tuple(doc.get("algorithms", ("gen",)))
    extras = {k: doc[k] for k in ("gen", "biht", "yp", "gen_pgd") if k in doc}
    model = args.model or (str(path_of("model", False)) if doc.get("model") else None)
    cfg = ExperimentConfig(
        signal=SignalSource(n=ens.n, k=int(doc.get("k", 4))),
        algorithms=algos,
        master_seed=args.seed if args.seed is not None else doc.get("master_seed", 20240601),
        model=model,
        **extras,
    )
    if args.threads:
        cfg = replace(cfg, gen={**cfg.gen, "threads": args.threads})
    G, _ = _load_sources(replace(cfg, signal=SignalSource(n=ens.n)), None) if cfg.needs_model else (None, None)
    A = ens.normalized
    stream = _keyed(RngStream(cfg.master_seed), _ALGO, 0, int(doc.get("trial", 0)))
    rows = []
    for name in algos:
        t0 = time.perf_counter()
        x_hat, best = _run_algorithm(name, cfg, G, A, obs.y, obs.noise.alpha, stream)
        row = {
            "algorithm": name,
            "best_loss": best,
            "hamming": hamming_dist(one_bit_sign(A @ x_hat), obs.y),
            "mse": mse(truth, x_hat) if truth is not None else math.nan,
            "nmse": nmse(truth, x_hat) if truth is not None else math.nan,
            "seconds": time.perf_counter() - t0,
            "x_hat": " ".join(format(v, ".17g") for v in x_hat),
        }
        rows.append(row)
    cols = ["algorithm", "best_loss", "hamming", "mse", "nmse", "seconds", "x_hat"]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.config:
        raise UsageError("sweep needs --config")
    doc = resolve_input_paths(_read_config(args.config), Path(args.config).parent)
    if args.seed is not None:
        doc["master_seed"] = args.seed
    if args.threads is not None:
        doc["threads"] = args.threads
    if args.model:
        doc["model"] = args.model
    if args.algorithms:
        doc["algorithms"] = list(_algorithms(args.algorithms))
    if args.out:
        doc["output"] = args.out
    cfg = ExperimentConfig.from_dict(doc)
    rows = run_sweep(cfg)
    if cfg.output:
        write_results(rows, cfg.output)
        failed = sum(r["status"] != "ok" for r in rows)
        _say(f"wrote {len(rows)} rows to {cfg.output} ({failed} with errors)")
    else:
        sys.stdout.write(results_to_text(rows))
    return EXIT_OK


def cmd_theory_check(args) -> int:
    seed = args.seed if args.seed is not None else 20240601
    rows = run_theory_check(seed)
    text = write_theory_check(rows, args.out)
    if not args.out:
        sys.stdout.write(text)
    failed = [r["quantity"] for r in rows if not r["pass"]]
    _say("all checks passed" if not failed else f"failed: {', '.join(failed)}")
    return EXIT_OK


COMMANDS = {
    "gen-data": (cmd_gen_data, "sample synthetic sparse training signals"),
    "train": (cmd_train, "train a VAE and export its decoder"),
    "export-decoder": (cmd_export_decoder, "extract the decoder from a saved VAE"),
    "measure": (cmd_measure, "draw a signal, a matrix and one-bit measurements"),
    "reconstruct": (cmd_reconstruct, "recover a signal from stored measurements"),
    "sweep": (cmd_sweep, "run a recovery experiment grid and write CSV"),
    "theory-check": (cmd_theory_check, "Monte-Carlo checks of the recovery theory"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onebitgen", description="One-bit compressed sensing with generative priors.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output path")
        p.add_argument("--threads", type=int, help="worker threads")
        p.add_argument("--model", help="model file (decoder, or VAE for export-decoder)")
        p.add_argument("--algorithms", help="comma-separated subset of gen,gen_noise_aware,biht,yp,gen_pgd")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        _say("error: --threads must be >= 1")
        return EXIT_CONFIG
    handler = COMMANDS[args.command][0]
    try:
        return handler(args)
    except (TrainingError, NumericError, DegenerateInputError) as exc:
        _say(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except (UsageError, ConfigError, ParseError, InvalidArgumentError, FileNotFoundError) as exc:
        _say(f"error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
