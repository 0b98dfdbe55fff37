import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from dib.cli import CliError, load_config, main, train_config

FAST_SETS = [
    "--set", "train.epochs=2",
    "--set", "train.hidden=8",
    "--set", "train.heads=2",
    "--set", "train.fusion_layers=1",
    "--set", "train.batch_size=8",
    "--set", "train.dropout=0.0",
    "--set", "kernel.k_rank=5",
    "--set", "data.n_samples=40",
]


def run_cli(argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def batch_csv(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "batch.csv"
    np.savetxt(path, rng.standard_normal((10, 4)), delimiter=",")
    return path


class TestConfig:
    def test_defaults_load(self):
        cfg = load_config()
        assert cfg["kernel"]["alpha"] == 1.9
        assert cfg["train"]["epochs"] == 50
        tc = train_config(cfg)
        assert tc.k_rank == 10 and tc.beta_uni == 1e-5

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[nope]\nx = 1\n")
        with pytest.raises(CliError, match="unknown config section"):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[train]\nlearning = 1\n")
        with pytest.raises(CliError, match="unknown config key"):
            load_config(path)

    def test_set_override(self):
        cfg = load_config(sets=["train.epochs=7", "kernel.alpha=1.5"])
        assert cfg["train"]["epochs"] == 7
        assert cfg["kernel"]["alpha"] == 1.5

    def test_bad_set_rejected(self):
        with pytest.raises(CliError):
            load_config(sets=["train.epochs"])
        with pytest.raises(CliError):
            load_config(sets=["train.nothing=3"])

    def test_env_override(self):
        cfg = load_config(env={"DIB_TRAIN__EPOCHS": "9", "UNRELATED": "x"})
        assert cfg["train"]["epochs"] == 9

    def test_file_then_set_precedence(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[train]\nepochs = 11\n")
        cfg = load_config(path, sets=["train.epochs=13"])
        assert cfg["train"]["epochs"] == 13

    def test_bool_coercion(self):
        cfg = load_config(sets=["train.disable_all_lrib=true"])
        assert cfg["train"]["disable_all_lrib"] is True
        with pytest.raises(CliError):
            load_config(sets=["train.disable_all_lrib=maybe"])


class TestEntropyCommand:
    def test_identical_rows_zero_entropy(self, tmp_path, capsys):
        path = tmp_path / "same.csv"
        np.savetxt(path, np.tile(np.arange(3.0), (6, 1)), delimiter=",")
        assert run_cli(["entropy", path]) == 0
        out = json.loads(capsys.readouterr().out)
        assert abs(out["h"]) <= 1e-12

    def test_k_n_minus_1_equals_full(self, batch_csv, capsys):
        assert run_cli(["entropy", batch_csv, "--k", "n-1"]) == 0
        h_low = json.loads(capsys.readouterr().out)["h"]
        assert run_cli(["entropy", batch_csv, "--full"]) == 0
        h_full = json.loads(capsys.readouterr().out)["h"]
        assert abs(h_low - h_full) <= 1e-10

    def test_two_batch_mi(self, batch_csv, tmp_path, capsys):
        other = tmp_path / "b.csv"
        np.savetxt(other, np.random.default_rng(1).standard_normal((10, 3)), delimiter=",")
        assert run_cli(["entropy", batch_csv, other, "--k", "5"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert set(out) >= {"h", "h_b", "h_joint", "mi"}
        assert abs(out["mi"] - (out["h"] + out["h_b"] - out["h_joint"])) <= 1e-12

    def test_oracle_recomputation(self, batch_csv, capsys):
        # independent script-style recomputation of the same quantity
        assert run_cli(["entropy", batch_csv, "--k", "5"]) == 0
        reported = json.loads(capsys.readouterr().out)["h"]
        x = np.loadtxt(batch_csv, delimiter=",")
        d2 = ((x[:, None] - x[None]) ** 2).sum(-1)
        pos = np.sort(d2[np.triu_indices(10, 1)])
        sigma2 = pos[pos > 0][:5].mean()
        a = np.exp(-d2 / (2 * sigma2)) / 10
        vals = np.maximum(np.linalg.eigvalsh(a)[::-1], 0)
        lam_r = max(0.0, (1 - vals[:5].sum()) / 5)
        s = (vals[:5] ** 1.9).sum() + 5 * lam_r**1.9
        assert abs(reported - np.log2(s) / (1 - 1.9)) <= 1e-10

    def test_missing_file_error_json(self, capsys):
        assert run_cli(["entropy", "/nonexistent/batch.csv"]) == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "CliError"
        assert "not found" in err["message"]


class TestPipeline:
    def test_gen_corrupt_train_eval(self, tmp_path, capsys):
        gen_dir = tmp_path / "gen"
        assert run_cli(["gen-data", "--out", gen_dir, *FAST_SETS]) == 0
        capsys.readouterr()
        assert (gen_dir / "dataset" / "meta.json").exists()
        assert (gen_dir / "config.ini").exists()
        assert (gen_dir / "seeds.txt").exists()
        assert (gen_dir / "version.txt").exists()

        cor_dir = tmp_path / "cor"
        assert run_cli([
            "corrupt", "--data", gen_dir / "dataset", "--out", cor_dir,
            "--set", "corrupt.kind=gaussian-noise", "--set", "corrupt.std=0.5",
            *FAST_SETS,
        ]) == 0
        capsys.readouterr()
        meta = json.loads((cor_dir / "dataset" / "meta.json").read_text())
        assert meta["corruptions"][0]["kind"] == "gaussian-noise"

        train_dir = tmp_path / "train"
        assert run_cli(["train", "--data", gen_dir / "dataset", "--out", train_dir, *FAST_SETS]) == 0
        train_out = json.loads(capsys.readouterr().out)
        assert (train_dir / "checkpoint.bin").exists()
        assert (train_dir / "train_log.jsonl").exists()
        assert (train_dir / "metrics.json").exists()

        assert run_cli([
            "eval", "--data", gen_dir / "dataset",
            "--checkpoint", train_dir / "checkpoint.bin", "--split", "test", *FAST_SETS,
        ]) == 0
        eval_out = json.loads(capsys.readouterr().out)
        assert eval_out["metrics"] == train_out["test"]

    def test_corrupt_scoped_to_test_split(self, tmp_path, capsys):
        gen_dir = tmp_path / "gen"
        run_cli(["gen-data", "--out", gen_dir, *FAST_SETS])
        capsys.readouterr()
        cor_dir = tmp_path / "cor"
        assert run_cli([
            "corrupt", "--data", gen_dir / "dataset", "--out", cor_dir,
            "--set", "corrupt.kind=gaussian-noise", "--set", "corrupt.std=1.0",
            "--set", "corrupt.splits=test", "--set", "corrupt.modalities=a",
            *FAST_SETS,
        ]) == 0
        capsys.readouterr()
        from dib.data import load_dataset
        from dib.trainkit import split_indices

        before = load_dataset(gen_dir / "dataset")
        after = load_dataset(cor_dir / "dataset")
        _, _, test_idx = split_indices(before.n, seed=0)
        changed = np.any(after.features["a"] != before.features["a"], axis=(1, 2))
        assert changed[test_idx].all()
        untouched = np.setdiff1d(np.arange(before.n), test_idx)
        assert not changed[untouched].any()

    def test_default_scale_smoke_under_five_minutes(self, tmp_path, capsys):
        # gen -> train -> eval at full default scale (200 samples, 50 epochs)
        import time

        start = time.perf_counter()
        gen_dir = tmp_path / "gen"
        assert run_cli(["gen-data", "--out", gen_dir]) == 0
        capsys.readouterr()
        train_dir = tmp_path / "train"
        assert run_cli(["train", "--data", gen_dir / "dataset", "--out", train_dir]) == 0
        capsys.readouterr()
        assert run_cli([
            "eval", "--data", gen_dir / "dataset",
            "--checkpoint", train_dir / "checkpoint.bin",
        ]) == 0
        capsys.readouterr()
        assert time.perf_counter() - start < 300

    def test_train_determinism_bitwise(self, tmp_path, capsys):
        gen_dir = tmp_path / "gen"
        run_cli(["gen-data", "--out", gen_dir, *FAST_SETS])
        capsys.readouterr()
        digests = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run_cli(["train", "--data", gen_dir / "dataset", "--out", out, *FAST_SETS]) == 0
            capsys.readouterr()
            digests.append((
                (out / "train_log.jsonl").read_bytes(),
                (out / "metrics.json").read_bytes(),
                (out / "checkpoint.bin").read_bytes(),
            ))
        assert digests[0] == digests[1]


class TestBenchCommands:
    def test_bench_missing_rate_zero_equals_plain_eval(self, tmp_path, capsys):
        gen_dir = tmp_path / "gen"
        run_cli(["gen-data", "--out", gen_dir, *FAST_SETS])
        capsys.readouterr()
        out_dir = tmp_path / "bm"
        assert run_cli([
            "bench-missing", "--data", gen_dir / "dataset", "--out", out_dir,
            "--rates", "0", "--set", "train.seeds=0", *FAST_SETS,
        ]) == 0
        capsys.readouterr()
        rows = (out_dir / "bench_missing.csv").read_text().strip().split("\n")
        assert len(rows) == 2  # header + the rate-0 reference row

        train_dir = tmp_path / "t0"
        run_cli(["train", "--data", gen_dir / "dataset", "--out", train_dir,
                 "--seed", "0", *FAST_SETS])
        metrics = json.loads(capsys.readouterr().out)["test"]
        header, row = (line.split(",") for line in rows)
        csv_acc2 = float(row[header.index("acc2")])
        assert abs(csv_acc2 - metrics["acc2"]) <= 1e-12

    def test_sweep_beta_single_point(self, tmp_path, capsys):
        gen_dir = tmp_path / "gen"
        run_cli(["gen-data", "--out", gen_dir, *FAST_SETS])
        capsys.readouterr()
        out_dir = tmp_path / "sb"
        assert run_cli([
            "sweep-beta", "--data", gen_dir / "dataset", "--out", out_dir,
            "--betas", "0.001", "--set", "train.seeds=0", *FAST_SETS,
        ]) == 0
        summary = json.loads(capsys.readouterr().out)
        rows = (out_dir / "sweep_beta.csv").read_text().strip().split("\n")
        assert len(rows) == 2
        assert summary["betas"] == [0.001]

    def test_bench_noise_outputs(self, tmp_path, capsys):
        gen_dir = tmp_path / "gen"
        run_cli(["gen-data", "--out", gen_dir, *FAST_SETS])
        capsys.readouterr()
        out_dir = tmp_path / "bn"
        assert run_cli([
            "bench-noise", "--data", gen_dir / "dataset", "--out", out_dir,
            "--set", "train.seeds=0", *FAST_SETS,
        ]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert set(summary["mean_avg_decline"]) == {"full", "no_ib"}
        rows = (out_dir / "bench_noise.csv").read_text().strip().split("\n")
        assert len(rows) == 3  # header + one row per variant
        header = rows[0].split(",")
        assert {"seed", "variant", "avg_decline", "clean_acc2", "noisy_acc2"} <= set(header)

    def test_bench_intensity_outputs(self, tmp_path, capsys):
        gen_dir = tmp_path / "gen"
        run_cli(["gen-data", "--out", gen_dir, *FAST_SETS])
        capsys.readouterr()
        out_dir = tmp_path / "bi"
        assert run_cli([
            "bench-intensity", "--data", gen_dir / "dataset", "--out", out_dir,
            "--levels", "0.06,0.10", "--set", "train.seeds=0", *FAST_SETS,
        ]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["levels"] == [0.06, 0.10]
        rows = (out_dir / "bench_intensity.csv").read_text().strip().split("\n")
        assert len(rows) == 3
        assert rows[0].split(",") == ["level", "avg_decline_mean", "avg_decline_std"]

    def test_bench_rerun_identical_csv(self, tmp_path, capsys):
        gen_dir = tmp_path / "gen"
        run_cli(["gen-data", "--out", gen_dir, *FAST_SETS])
        capsys.readouterr()
        contents = []
        for name in ("r1", "r2"):
            out_dir = tmp_path / name
            assert run_cli([
                "bench-missing", "--data", gen_dir / "dataset", "--out", out_dir,
                "--rates", "0.5", "--set", "train.seeds=0,1", *FAST_SETS,
            ]) == 0
            capsys.readouterr()
            contents.append((out_dir / "bench_missing.csv").read_bytes())
        assert contents[0] == contents[1]


class TestInstalledEntryPoint:
    def test_console_script_runs(self, tmp_path):
        exe = shutil.which("dib")
        if exe is None:
            pytest.skip("console script not installed")
        rng = np.random.default_rng(3)
        path = tmp_path / "batch.csv"
        np.savetxt(path, rng.standard_normal((8, 3)), delimiter=",")
        proc = subprocess.run([exe, "entropy", str(path)], capture_output=True, text=True)
        assert proc.returncode == 0
        payload = json.loads(proc.stdout)
        assert 0.0 <= payload["h"] <= np.log2(8) + 1e-9
