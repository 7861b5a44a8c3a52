"""End-to-end CLI: exit codes, config precedence, artifacts, determinism."""

import json

import pytest

from hsgppt.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main


def run(*argv):
    return main([str(a) for a in argv])


def gen(tmp_path, name="data", n=40, h=0.3, seed=0, f=6, d=5.0, mu=4.0):
    out = tmp_path / name
    rc = run("gen-csbm", "--n", n, "--f", f, "--d", d, "--h", h,
             "--mu", mu, "--seed", seed, "--out", out)
    assert rc == EXIT_OK
    return out


def snapshot(folder):
    return {p.name: p.read_bytes() for p in sorted(folder.iterdir()) if p.is_file()}


def test_gen_csbm_artifacts(tmp_path):
    out = gen(tmp_path)
    names = {p.name for p in out.iterdir()}
    assert names == {"meta.json", "edges.tsv", "features.bin", "labels.tsv",
                     "config.json", "manifest.json"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "gen-csbm"
    assert set(manifest["files"]) <= names
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["n"] == 40 and cfg["h"] == 0.3 and cfg["command"] == "gen-csbm"


def test_rerun_reproduces_bit_exact(tmp_path):
    out = gen(tmp_path, seed=3)
    first = snapshot(out)
    out2 = gen(tmp_path, seed=3)
    assert out2 == out
    assert snapshot(out) == first


def test_analyze_outputs(tmp_path, capsys):
    data = gen(tmp_path)
    out = tmp_path / "diag"
    assert run("analyze", "--data", data, "--out", out) == EXIT_OK
    names = {p.name for p in out.iterdir()}
    assert {"s_high.tsv", "analysis.json", "filter_curves.tsv",
            "spectral_energy.tsv"} <= names
    report = json.loads((out / "analysis.json").read_text())
    assert report["n_nodes"] == 40
    assert 0.0 <= report["homophily"] <= 1.0
    assert report["energy_identity"]["max_abs_error"] < 1e-9
    header = (out / "s_high.tsv").read_text().splitlines()[0]
    assert header == "dim\ts_high"


def test_analyze_eigen_limit_skips_dense_part(tmp_path):
    data = gen(tmp_path)
    out = tmp_path / "diag"
    assert run("analyze", "--data", data, "--out", out, "--eigen-limit", 10) == EXIT_OK
    assert not (out / "spectral_energy.tsv").exists()


def test_pretrain_tune_chain(tmp_path, capsys):
    data = gen(tmp_path)
    pre = tmp_path / "pre"
    assert run("pretrain", "--data", data, "--out", pre, "--hidden", 8,
               "--epochs", 5, "--patience", 5) == EXIT_OK
    assert (pre / "model.ckpt").exists()
    hist = (pre / "loss_history.tsv").read_text().splitlines()
    assert hist[0] == "epoch\tloss" and len(hist) == 6

    tun = tmp_path / "tun"
    assert run("tune", "--data", data, "--ckpt", pre / "model.ckpt", "--out", tun,
               "--k", 2, "--n-prompt", 3, "--epochs", 4, "--eval-every", 2) == EXIT_OK
    assert (tun / "state.bin").exists()
    rows = (tun / "tune_history.tsv").read_text().splitlines()
    assert rows[0] == "epoch\tloss\tval_f1" and len(rows) == 5
    assert "backbone hash verified" in capsys.readouterr().out


def test_eval_deterministic_report(tmp_path):
    data = gen(tmp_path)
    out = tmp_path / "ev"
    args = ("eval", "--mode", "transductive", "--data", data, "--out", out,
            "--seeds", "0,1", "--k", 2, "--hidden", 8, "--pretrain-epochs", 4,
            "--patience", 4, "--tune-epochs", 4, "--eval-every", 2, "--n-prompt", 3)
    assert run(*args) == EXIT_OK
    report1 = (out / "report.json").read_bytes()
    assert (out / "report.txt").exists()
    assert (out / "timings.json").exists()
    assert b"wall_clock" not in report1  # timings live in their own file
    assert run(*args) == EXIT_OK
    assert (out / "report.json").read_bytes() == report1
    parsed = json.loads(report1)
    assert parsed["mode"] == "transductive" and len(parsed["per_seed"]) == 2


def test_eval_inductive(tmp_path):
    src = gen(tmp_path, "src", n=50, h=0.7, seed=0, f=8)
    tgt = gen(tmp_path, "tgt", n=40, h=0.3, seed=1, f=8)
    out = tmp_path / "ind"
    assert run("eval", "--mode", "inductive", "--source", src, "--target", tgt,
               "--out", out, "--seeds", "0", "--k", 2, "--hidden", 8,
               "--pretrain-epochs", 3, "--patience", 3, "--tune-epochs", 3,
               "--eval-every", 3, "--n-prompt", 3, "--svd-dim", 6) == EXIT_OK
    parsed = json.loads((out / "report.json").read_text())
    assert parsed["mode"] == "inductive"
    assert "->" in parsed["dataset"]


def test_sweep_outputs(tmp_path):
    out = tmp_path / "sw"
    assert run("sweep", "--out", out, "--h-values", "0.1,0.9", "--seeds", "0",
               "--n", 80, "--f", 8, "--d", 6, "--mu", 8) == EXIT_OK
    body = (out / "sweep.tsv").read_text().splitlines()
    assert body[0] == "h\tseed\tfilter\ttest_f1"
    assert len(body) == 1 + 2 * 3
    mean = (out / "sweep_mean.tsv").read_text().splitlines()
    assert mean[0] == "h\tfilter\tmean_test_f1"


def test_ablate_outputs(tmp_path):
    data = gen(tmp_path)
    out = tmp_path / "ab"
    assert run("ablate", "--data", data, "--out", out, "--seeds", "0", "--k", 2,
               "--hidden", 8, "--pretrain-epochs", 3, "--patience", 3,
               "--tune-epochs", 3, "--eval-every", 3, "--n-prompt", 3) == EXIT_OK
    rows = (out / "ablation.tsv").read_text().splitlines()
    assert rows[0].startswith("variant\t")
    variants = [r.split("\t")[0] for r in rows[1:]]
    assert variants == ["full", "low_pass_only", "single_prompt", "no_prompt",
                        "no_prompt_norm"]


def test_gradcheck_pass_and_numeric_failure(capsys):
    assert run("gradcheck", "--tol", "1e-4") == EXIT_OK
    out = capsys.readouterr().out
    assert "contrastive pre-training graph" in out
    assert "prompt tuning graph" in out
    assert run("gradcheck", "--tol", "1e-12") == EXIT_NUMERIC


def test_usage_errors():
    assert run() == EXIT_USAGE
    assert run("no-such-command") == EXIT_USAGE
    assert run("gen-csbm") == EXIT_USAGE  # --out missing
    assert run("analyze", "--data") == EXIT_USAGE  # dangling value
    assert run("gen-csbm", "--n", "notanumber", "--out", "x") == EXIT_USAGE


def test_missing_data_is_data_error(tmp_path):
    assert run("analyze", "--data", tmp_path / "nope", "--out", tmp_path / "o") == EXIT_DATA


def test_config_file_precedence(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"n": 30, "h": 0.8, "d": 4.0, "out": str(tmp_path / "a")}))
    assert run("gen-csbm", "--config", cfg_path) == EXIT_OK
    meta = json.loads((tmp_path / "a" / "meta.json").read_text())
    assert meta["n_nodes"] == 30

    # explicit flag beats the config file
    cfg_path.write_text(json.dumps({"n": 30, "d": 4.0, "out": str(tmp_path / "b")}))
    assert run("gen-csbm", "--config", cfg_path, "--n", 36) == EXIT_OK
    meta = json.loads((tmp_path / "b" / "meta.json").read_text())
    assert meta["n_nodes"] == 36


def test_config_file_errors(tmp_path):
    missing = tmp_path / "absent.json"
    assert run("gen-csbm", "--config", missing) == EXIT_DATA
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n": 30, "d": 4.0, "bogus_key": 1, "out": str(tmp_path / "c")}))
    assert run("gen-csbm", "--config", bad) == EXIT_USAGE


def test_feature_transform_flag(tmp_path):
    data = gen(tmp_path)
    out = tmp_path / "rn"
    assert run("analyze", "--data", data, "--out", out,
               "--feature-transform", "row-normalize") == EXIT_OK
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["feature_transform"] == "row-normalize"
