"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Option precedence is defaults < JSON config file < explicit flags; every run
writes its resolved configuration and a manifest of produced files next to
its outputs. Wall-clock numbers go to a separate timings file so the
deterministic outputs are byte-stable across reruns.
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

from . import csbm, evaluate, prompt, spectral
from .graph import (
    DatasetError,
    Graph,
    corrupt_features,
    edge_homophily,
    kshot_split,
    laplacian,
    load_graph,
    save_graph,
    transform_features,
    with_features,
)
from .nn import NumericError, finite_diff_check
from .pretrain import (
    PretrainConfig,
    PretrainedModel,
    contrastive_loss_fn,
    freeze,
    load_model,
    pretrain,
    save_model,
)
from .prompt import TuneConfig, make_ablation, tuning_loss_fn

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(message)


_DEFAULTS = {
    "gen-csbm": {
        "n": 3000, "f": 128, "d": 50.0, "h": 0.5, "mu": 10.0, "seed": 0, "out": None,
    },
    "analyze": {
        "data": None, "out": None, "kind": "normalized", "order": 2,
        "feature_transform": "none", "eigen_limit": spectral.DENSE_EIGEN_LIMIT,
    },
    "pretrain": {
        "data": None, "out": None, "order": 2, "hidden": 64, "lr": 1e-3,
        "epochs": 500, "patience": 50, "seed": 0, "feature_transform": "none",
        "low_pass_only": False,
    },
    "tune": {
        "data": None, "ckpt": None, "out": None, "k": 5, "seed": 0,
        "n_prompt": 10, "tau_inner": 0.2, "tau_cross": None, "lr": 5e-3,
        "epochs": 2000, "eval_every": 10, "variant": "full",
        "feature_transform": "none",
    },
    "eval": {
        "mode": "transductive", "data": None, "source": None, "target": None,
        "out": None, "seeds": "0,1,2,3,4", "k": 5, "order": 2, "hidden": 64,
        "pretrain_lr": 1e-3, "pretrain_epochs": 500, "patience": 50,
        "n_prompt": 10, "tau_inner": 0.2, "tau_cross": None, "tune_lr": 5e-3,
        "tune_epochs": 2000, "eval_every": 10, "svd_dim": 128, "workers": 0,
        "f1_average": "macro", "feature_transform": "none", "variant": "full",
    },
    "sweep": {
        "out": None, "h_values": "0.0,0.2,0.4,0.6,0.8,1.0", "seeds": "0,1,2",
        "n": 3000, "f": 128, "d": 50.0, "mu": 10.0,
    },
    "ablate": {
        "data": None, "out": None, "seeds": "0,1,2,3,4", "k": 5, "order": 2,
        "hidden": 64, "pretrain_lr": 1e-3, "pretrain_epochs": 500, "patience": 50,
        "n_prompt": 10, "tau_inner": 0.2, "tau_cross": None, "tune_lr": 5e-3,
        "tune_epochs": 2000, "eval_every": 10, "feature_transform": "none",
    },
    "gradcheck": {"tol": 1e-4, "seed": 0},
}


def _build_parser() -> _Parser:
    top = _Parser(prog="hsgppt", description=__doc__)
    sub = top.add_subparsers(dest="command", metavar="command")
    S = argparse.SUPPRESS

    p = sub.add_parser("gen-csbm", help="generate a synthetic two-class dataset")
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--f", type=int, default=S, help="feature dimension")
    p.add_argument("--d", type=float, default=S, help="expected average degree")
    p.add_argument("--h", type=float, default=S, help="edge homophily in [0, 1]")
    p.add_argument("--mu", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--config", default=None)

    p = sub.add_parser("analyze", help="spectral and homophily diagnostics")
    p.add_argument("--data", default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--kind", choices=["normalized", "unnormalized"], default=S)
    p.add_argument("--order", type=int, default=S)
    p.add_argument("--feature-transform", dest="feature_transform",
                   choices=["none", "row-normalize", "binarize"], default=S)
    p.add_argument("--eigen-limit", dest="eigen_limit", type=int, default=S)
    p.add_argument("--config", default=None)

    p = sub.add_parser("pretrain", help="pre-train the spectral backbone")
    p.add_argument("--data", default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--order", type=int, default=S)
    p.add_argument("--hidden", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--patience", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--low-pass-only", dest="low_pass_only", action="store_true", default=S)
    p.add_argument("--feature-transform", dest="feature_transform",
                   choices=["none", "row-normalize", "binarize"], default=S)
    p.add_argument("--config", default=None)

    p = sub.add_parser("tune", help="prompt-tune a frozen checkpoint")
    p.add_argument("--data", default=S)
    p.add_argument("--ckpt", default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--k", type=int, default=S, help="shots per class")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--n-prompt", dest="n_prompt", type=int, default=S)
    p.add_argument("--tau-inner", dest="tau_inner", type=float, default=S)
    p.add_argument("--tau-cross", dest="tau_cross", type=float, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=S)
    p.add_argument("--variant", choices=list(prompt.ABLATION_VARIANTS), default=S)
    p.add_argument("--feature-transform", dest="feature_transform",
                   choices=["none", "row-normalize", "binarize"], default=S)
    p.add_argument("--config", default=None)

    p = sub.add_parser("eval", help="full pipeline over several seeds")
    p.add_argument("--mode", choices=["transductive", "inductive"], default=S)
    p.add_argument("--data", default=S)
    p.add_argument("--source", default=S)
    p.add_argument("--target", default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--seeds", default=S, help="comma-separated list")
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--order", type=int, default=S)
    p.add_argument("--hidden", type=int, default=S)
    p.add_argument("--pretrain-lr", dest="pretrain_lr", type=float, default=S)
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int, default=S)
    p.add_argument("--patience", type=int, default=S)
    p.add_argument("--n-prompt", dest="n_prompt", type=int, default=S)
    p.add_argument("--tau-inner", dest="tau_inner", type=float, default=S)
    p.add_argument("--tau-cross", dest="tau_cross", type=float, default=S)
    p.add_argument("--tune-lr", dest="tune_lr", type=float, default=S)
    p.add_argument("--tune-epochs", dest="tune_epochs", type=int, default=S)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=S)
    p.add_argument("--svd-dim", dest="svd_dim", type=int, default=S)
    p.add_argument("--workers", type=int, default=S, help="0 = HSGPPT_THREADS or 1")
    p.add_argument("--f1-average", dest="f1_average", choices=["macro", "weighted"], default=S)
    p.add_argument("--variant", choices=list(prompt.ABLATION_VARIANTS), default=S)
    p.add_argument("--feature-transform", dest="feature_transform",
                   choices=["none", "row-normalize", "binarize"], default=S)
    p.add_argument("--config", default=None)

    p = sub.add_parser("sweep", help="reference-filter sweep over homophily levels")
    p.add_argument("--out", default=S)
    p.add_argument("--h-values", dest="h_values", default=S)
    p.add_argument("--seeds", default=S)
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--f", type=int, default=S)
    p.add_argument("--d", type=float, default=S)
    p.add_argument("--mu", type=float, default=S)
    p.add_argument("--config", default=None)

    p = sub.add_parser("ablate", help="run the full model and its ablations")
    p.add_argument("--data", default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--seeds", default=S)
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--order", type=int, default=S)
    p.add_argument("--hidden", type=int, default=S)
    p.add_argument("--pretrain-lr", dest="pretrain_lr", type=float, default=S)
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int, default=S)
    p.add_argument("--patience", type=int, default=S)
    p.add_argument("--n-prompt", dest="n_prompt", type=int, default=S)
    p.add_argument("--tau-inner", dest="tau_inner", type=float, default=S)
    p.add_argument("--tau-cross", dest="tau_cross", type=float, default=S)
    p.add_argument("--tune-lr", dest="tune_lr", type=float, default=S)
    p.add_argument("--tune-epochs", dest="tune_epochs", type=int, default=S)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=S)
    p.add_argument("--feature-transform", dest="feature_transform",
                   choices=["none", "row-normalize", "binarize"], default=S)
    p.add_argument("--config", default=None)

    p = sub.add_parser("gradcheck", help="finite-difference check of both training graphs")
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--config", default=None)

    return top


def _merge_config(command: str, ns: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS[command])
    config_path = getattr(ns, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise DatasetError("config file not found", path=path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise CliUsageError(f"invalid config JSON in {path}: {e}")
        if not isinstance(data, dict):
            raise CliUsageError("config file must hold a JSON object")
        unknown = sorted(set(data) - set(cfg))
        if unknown:
            raise CliUsageError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(data)
    explicit = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    cfg.update(explicit)
    return cfg


def _require(cfg, *keys):
    for key in keys:
        if cfg.get(key) is None:
            raise CliUsageError(f"--{key.replace('_', '-')} is required")


def _parse_list(text, conv):
    try:
        return [conv(tok) for tok in str(text).split(",") if tok.strip() != ""]
    except ValueError:
        raise CliUsageError(f"cannot parse list: {text!r}")


def _fingerprint(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _finish_outputs(out_dir: Path, command: str, cfg: dict, files: list) -> None:
    resolved = dict(cfg, command=command)
    (out_dir / "config.json").write_text(json.dumps(resolved, sort_keys=True, indent=2) + "\n")
    manifest = {
        "command": command,
        "config_fingerprint": _fingerprint(resolved),
        "files": sorted(set(files) | {"config.json"}),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_tsv(path: Path, header, rows) -> None:
    def fmt(x):
        if isinstance(x, float):
            return f"{x:.17g}"
        return str(x)

    with path.open("w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(fmt(x) for x in row) + "\n")


def _load_data(cfg, key="data") -> Graph:
    g = load_graph(cfg[key])
    mode = cfg.get("feature_transform", "none")
    if mode != "none":
        g = with_features(g, transform_features(g.features, mode))
    return g


def _workers(cfg) -> int:
    w = int(cfg.get("workers", 0) or 0)
    if w > 0:
        return w
    env = os.environ.get("HSGPPT_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_gen_csbm(cfg) -> int:
    _require(cfg, "out")
    params = csbm.CsbmParams(
        n=int(cfg["n"]), f=int(cfg["f"]), d_avg=float(cfg["d"]),
        h=float(cfg["h"]), mu=float(cfg["mu"]), seed=int(cfg["seed"]),
    )
    g = csbm.generate(params)
    out = _out_dir(cfg)
    save_graph(g, out)
    _finish_outputs(out, "gen-csbm", cfg, ["meta.json", "edges.tsv", "features.bin", "labels.tsv"])
    print(f"wrote {g.name}: {g.n_nodes} nodes, {g.n_edges} edges -> {out}")
    return EXIT_OK


def _cmd_analyze(cfg) -> int:
    _require(cfg, "data", "out")
    g = _load_data(cfg)
    out = _out_dir(cfg)
    files = []

    profile = spectral.high_freq_profile(g, cfg["kind"])
    _write_tsv(out / "s_high.tsv", ["dim", "s_high"], list(enumerate(profile)))
    files.append("s_high.tsv")

    report = {
        "dataset": g.name,
        "n_nodes": g.n_nodes,
        "n_edges": g.n_edges,
        "feature_dim": g.feature_dim,
        "laplacian_kind": cfg["kind"],
        "mean_s_high": float(np.nanmean(profile)),
        "homophily": None,
        "energy_identity": None,
    }
    if g.labels is not None:
        report["homophily"] = edge_homophily(g)
        errors = []
        s_vals = []
        for j in range(g.feature_dim):
            x = g.features[:, j]
            try:
                ident = spectral.energy_identity_check(g, x)
            except ValueError:
                continue
            errors.append(ident.abs_error)
            s_vals.append(ident.s_high)
        if errors:
            report["energy_identity"] = {
                "columns_checked": len(errors),
                "max_abs_error": float(np.max(errors)),
                "mean_s_high_unnormalized": float(np.mean(s_vals)),
            }

    if g.n_nodes <= int(cfg["eigen_limit"]):
        decomp = spectral.eigendecompose(laplacian(g, "normalized"), limit=int(cfg["eigen_limit"]))
        energies = []
        for j in range(g.feature_dim):
            x = g.features[:, j]
            if float(x @ x) == 0.0:
                continue
            energies.append(spectral.spectral_energy(decomp, x))
        if energies:
            mean_energy = np.mean(np.stack(energies), axis=0)
            _write_tsv(
                out / "spectral_energy.tsv",
                ["lambda", "mean_energy"],
                list(zip(decomp.eigenvalues, mean_energy)),
            )
            files.append("spectral_energy.tsv")
    else:
        report["spectral_energy"] = "skipped: graph exceeds dense eigensolver limit"

    bank = spectral.FilterBank.full(int(cfg["order"]))
    lam, curves = spectral.response_grid(list(bank.filters) + list(spectral.TRIPLE_FILTERS))
    header = ["lambda"] + list(curves)
    rows = [[lam[i]] + [curves[name][i] for name in curves] for i in range(lam.size)]
    _write_tsv(out / "filter_curves.tsv", header, rows)
    files.append("filter_curves.tsv")

    (out / "analysis.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    files.append("analysis.json")
    _finish_outputs(out, "analyze", cfg, files)
    for key in ("homophily", "mean_s_high"):
        print(f"{key}: {report[key]}")
    if report["energy_identity"]:
        print(f"energy identity max abs error: {report['energy_identity']['max_abs_error']:.3e}")
    return EXIT_OK


def _pretrain_config(cfg) -> PretrainConfig:
    filters = ((0, int(cfg["order"])),) if cfg.get("low_pass_only") else None
    return PretrainConfig(
        order=int(cfg["order"]),
        hidden_dim=int(cfg["hidden"]),
        lr=float(cfg.get("lr", cfg.get("pretrain_lr"))),
        epochs=int(cfg.get("epochs", cfg.get("pretrain_epochs"))),
        patience=int(cfg["patience"]),
        seed=int(cfg.get("seed", 0)),
        filters=filters,
    )


def _cmd_pretrain(cfg) -> int:
    _require(cfg, "data", "out")
    g = _load_data(cfg)
    out = _out_dir(cfg)
    model, history = pretrain(g, _pretrain_config(cfg))
    save_model(model, out / "model.ckpt")
    _write_tsv(out / "loss_history.tsv", ["epoch", "loss"], list(enumerate(history)))
    _finish_outputs(out, "pretrain", cfg, ["model.ckpt", "loss_history.tsv"])
    print(f"pre-trained {model.bank.size} filter encoder(s) on {g.name}: "
          f"final loss {history[-1]:.4f} ({len(history)} epochs)")
    return EXIT_OK


def _tune_config(cfg, variant: str) -> TuneConfig:
    spec = make_ablation(variant)
    n_prompt = int(cfg["n_prompt"]) if spec.n_prompt is None else spec.n_prompt
    tau_cross = cfg["tau_cross"]
    return TuneConfig(
        n_prompt=n_prompt,
        tau_inner=float(cfg["tau_inner"]),
        tau_cross=float(tau_cross) if tau_cross is not None else None,
        lr=float(cfg.get("lr", cfg.get("tune_lr"))),
        epochs=int(cfg.get("epochs", cfg.get("tune_epochs"))),
        eval_every=int(cfg["eval_every"]),
        seed=int(cfg.get("seed", 0)),
        shared_prompt=spec.shared_prompt,
        normalize=spec.normalize,
    )


def _cmd_tune(cfg) -> int:
    _require(cfg, "data", "ckpt", "out")
    g = _load_data(cfg)
    ckpt = Path(cfg["ckpt"])
    if not ckpt.is_file():
        raise DatasetError("checkpoint not found", path=ckpt)
    frozen = freeze(load_model(ckpt))
    out = _out_dir(cfg)
    split = kshot_split(g, int(cfg["k"]), seed=int(cfg["seed"]))
    state, history = prompt.tune(g, frozen, split, _tune_config(cfg, cfg["variant"]))
    prompt.save_state(state, out / "state.bin")
    _write_tsv(out / "tune_history.tsv", ["epoch", "loss", "val_f1"], history)
    _finish_outputs(out, "tune", cfg, ["state.bin", "tune_history.tsv"])
    best = max((row[2] for row in history if np.isfinite(row[2])), default=float("nan"))
    print(f"tuned on {g.name}: best val F1 {best:.4f}, backbone hash verified")
    return EXIT_OK


def _pipeline_config(cfg) -> evaluate.PipelineConfig:
    return evaluate.PipelineConfig(
        pretrain=PretrainConfig(
            order=int(cfg["order"]),
            hidden_dim=int(cfg["hidden"]),
            lr=float(cfg["pretrain_lr"]),
            epochs=int(cfg["pretrain_epochs"]),
            patience=int(cfg["patience"]),
        ),
        tune=_tune_config(
            {**cfg, "lr": cfg["tune_lr"], "epochs": cfg["tune_epochs"]},
            cfg.get("variant", "full"),
        ),
        k_shots=int(cfg["k"]),
        f1_average=cfg.get("f1_average", "macro"),
        svd_dim=int(cfg.get("svd_dim", 128)),
    )


def _cmd_eval(cfg) -> int:
    _require(cfg, "out")
    seeds = _parse_list(cfg["seeds"], int)
    if not seeds:
        raise CliUsageError("at least one seed is required")
    pipeline = _pipeline_config(cfg)
    t0 = time.perf_counter()
    if cfg["mode"] == "transductive":
        _require(cfg, "data")
        g = _load_data(cfg)
        report = evaluate.run_transductive(g, pipeline, seeds, workers=_workers(cfg))
    else:
        _require(cfg, "source", "target")
        source = _load_data(cfg, "source")
        target = _load_data(cfg, "target")
        report = evaluate.run_inductive(source, target, pipeline, seeds)
    report.wall_clock["total"] = time.perf_counter() - t0
    out = _out_dir(cfg)
    (out / "report.json").write_text(
        json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n"
    )
    (out / "report.txt").write_text(report.to_text(include_timings=False))
    (out / "timings.json").write_text(
        json.dumps({k: round(v, 3) for k, v in report.wall_clock.items()}, sort_keys=True) + "\n"
    )
    _finish_outputs(out, "eval", cfg, ["report.json", "report.txt", "timings.json"])
    print(report.to_text(include_timings=False))
    # timing telemetry goes to stderr so stdout stays bit-reproducible
    for phase, secs in report.wall_clock.items():
        print(f"time {phase:<14} {secs:.2f}s", file=sys.stderr)
    return EXIT_OK


def _cmd_sweep(cfg) -> int:
    _require(cfg, "out")
    h_values = _parse_list(cfg["h_values"], float)
    seeds = _parse_list(cfg["seeds"], int)
    params = csbm.CsbmParams(
        n=int(cfg["n"]), f=int(cfg["f"]), d_avg=float(cfg["d"]), mu=float(cfg["mu"])
    )
    cells = evaluate.filter_sweep_study(h_values, seeds, params)
    out = _out_dir(cfg)
    _write_tsv(
        out / "sweep.tsv",
        ["h", "seed", "filter", "test_f1"],
        [(c.h, c.seed, c.filter, c.test_f1) for c in cells],
    )
    table = evaluate.sweep_table(cells)
    _write_tsv(
        out / "sweep_mean.tsv",
        ["h", "filter", "mean_test_f1"],
        [(h, f, v) for (h, f), v in sorted(table.items())],
    )
    _finish_outputs(out, "sweep", cfg, ["sweep.tsv", "sweep_mean.tsv"])
    for (h, f), v in sorted(table.items()):
        print(f"h={h:.1f} {f:<5} {v:.4f}")
    return EXIT_OK


def _cmd_ablate(cfg) -> int:
    _require(cfg, "data", "out")
    g = _load_data(cfg)
    seeds = _parse_list(cfg["seeds"], int)
    pipeline = _pipeline_config({**cfg, "variant": "full", "svd_dim": 128, "f1_average": "macro"})
    rows = evaluate.run_ablation_study(g, pipeline, seeds)
    out = _out_dir(cfg)
    tsv_rows = [
        (r.variant, r.mean_f1, r.std_f1 if r.std_f1 is not None else float("nan"), *r.per_seed)
        for r in rows
    ]
    seed_cols = [f"seed{s}" for s in seeds]
    _write_tsv(out / "ablation.tsv", ["variant", "mean_f1", "std_f1", *seed_cols], tsv_rows)
    _finish_outputs(out, "ablate", cfg, ["ablation.tsv"])
    for r in rows:
        std = f" +/- {r.std_f1:.4f}" if r.std_f1 is not None else ""
        print(f"{r.variant:<16} {r.mean_f1:.4f}{std}")
    return EXIT_OK


def _cmd_gradcheck(cfg) -> int:
    tol = float(cfg["tol"])
    seed = int(cfg["seed"])
    reports = gradient_check_reports(seed)
    worst = 0.0
    for name, rep in reports:
        status = "ok" if rep.passed(tol) else "FAIL"
        print(f"{name}: max rel error {rep.max_rel_error:.3e} [{status}]")
        for entry in rep.entries:
            print(f"  {entry.name:<24} {entry.max_rel_error:.3e} ({entry.checked} coords)")
        worst = max(worst, rep.max_rel_error)
    if worst >= tol:
        raise NumericError(f"gradient check failed: {worst:.3e} >= {tol:.1e}")
    return EXIT_OK


def gradient_check_reports(seed: int = 0):
    """Finite-difference reports for both training graphs (small instances)."""
    g1 = csbm.generate(csbm.CsbmParams(n=12, f=4, d_avg=4, h=0.3, mu=4.0, seed=seed))
    model = PretrainedModel(spectral.FilterBank.full(2), g1.feature_dim, 8, seed=seed)
    loss_fn = contrastive_loss_fn(model, g1, corrupt_features(g1, seed=seed + 1))
    rep1 = finite_diff_check(loss_fn, model.params(), seed=seed)

    g2 = csbm.generate(csbm.CsbmParams(n=16, f=4, d_avg=5, h=0.3, mu=4.0, seed=seed + 2))
    frozen = freeze(PretrainedModel(spectral.FilterBank.full(2), g2.feature_dim, 8, seed=seed))
    split = kshot_split(g2, 2, seed=seed)
    state = prompt.init_state(g2, frozen, TuneConfig(n_prompt=3, seed=seed), n_classes=2)
    shots = np.concatenate(split.shot_indices)
    loss_fn2 = tuning_loss_fn(g2, frozen, state, shots)
    rep2 = finite_diff_check(loss_fn2, state.tunable_params(), seed=seed)
    return [("contrastive pre-training graph", rep1), ("prompt tuning graph", rep2)]


_COMMANDS = {
    "gen-csbm": _cmd_gen_csbm,
    "analyze": _cmd_analyze,
    "pretrain": _cmd_pretrain,
    "tune": _cmd_tune,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "ablate": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
        if not getattr(ns, "command", None):
            parser.print_help()
            return EXIT_USAGE
        cfg = _merge_config(ns.command, ns)
        return _COMMANDS[ns.command](cfg)
    except CliUsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DatasetError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
