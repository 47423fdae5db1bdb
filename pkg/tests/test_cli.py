import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from robust_lspi import bench
from robust_lspi.cli import main
from robust_lspi.config import load_config, parse_config
from robust_lspi.errors import ConfigError
from robust_lspi.rlspi import read_weights

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL_CHAIN = {
    "environment": {"kind": "chain", "n_states": 10, "slip": 0.1},
    "algorithm": "rlspi",
    "uncertainty": {"kind": "sphere", "radius": 0.01, "radius_rule": "frobenius_scaled"},
    "K": 3,
    "t": 5,
    "h": 20,
    "sweep": {"knob": "slip", "values": [0.1, 0.3]},
    "replications": 3,
}

SMALL_CARTPOLE = {
    "environment": {"kind": "cartpole"},
    "algorithm": "rlspi",
    "features": {"kind": "rbf", "counts": [2, 2, 2, 2]},
    "uncertainty": {"kind": "sphere", "radius": 0.001},
    "ridge": 1.0,
    "K": 2,
    "t": 2,
    "h": 30,
    "eval_episodes": 2,
    "sweep": {"knob": "gravity", "values": [9.8, 12.0]},
    "replications": 2,
}


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=1))
    return path


def cli(*args):
    return subprocess.run([sys.executable, "-m", "robust_lspi", *map(str, args)], capture_output=True, text=True)


class TestConfig:
    @pytest.mark.parametrize("name", ["chain_rlspi.json", "chain_robust_slips.json", "cartpole_rlspi.json", "mountain_car_rlspi.json"])
    def test_shipped_configs_validate(self, name):
        assert load_config(CONFIGS / name).replications >= 1

    def test_defaults_resolved(self):
        cfg = parse_config(json.dumps({"environment": {"kind": "chain"}}))
        assert cfg.features == {"kind": "polynomial", "degree": 2, "low": [0.0], "high": [9.0]}
        assert cfg.sweep == {"knob": "slip", "values": [0.1]}
        assert cfg.replications == 20 and cfg.uncertainty == {"kind": "none"}

    @pytest.mark.parametrize(
        "doc, line, fragment",
        [
            ('{\n "environment": {"kind": "chain"},\n "alpha": 1.5\n}', 3, "alpha"),
            ('{\n "environment": {"kind": "chain"},\n\n "colour": 1\n}', 4, "unknown key"),
            ('{\n "environment": {"kind": "chain"},\n "K": "ten"\n}', 3, "int"),
            ('{\n "environment": {"kind": "chain",\n   "speed": 2}\n}', 3, "speed"),
            ('{\n "environment": {"kind": "cartpole"},\n "sweep": {\n  "knob": "slip", "values": [1]}\n}', 4, "valid knobs"),
            ('{\n "environment": {"kind": "chain"},\n "algorithm": "exact-robust-pi"\n}', 3, "slip_sets"),
        ],
    )
    def test_line_anchored_errors(self, doc, line, fragment):
        with pytest.raises(ConfigError, match=fragment) as info:
            parse_config(doc, "x.json")
        assert str(info.value).startswith(f"x.json:{line}:")

    def test_json_syntax_error(self):
        with pytest.raises(ConfigError, match=r"x.json:2:\d+: invalid JSON"):
            parse_config('{\n "environment": ,\n}', "x.json")


class TestBench:
    def test_single_cell(self, tmp_path):
        cfg = parse_config(json.dumps({**SMALL_CHAIN, "replications": 1, "sweep": {"knob": "slip", "values": [0.2]}}))
        bench.run_experiment(cfg, tmp_path)
        rows = list(csv.reader(open(tmp_path / "results.csv")))
        assert rows[0] == ["knob", "value", "seed", "metric"] and len(rows) == 2

    def test_aggregates_recomputable(self, tmp_path):
        cfg = parse_config(json.dumps(SMALL_CHAIN))
        bench.run_experiment(cfg, tmp_path)
        raw = list(csv.DictReader(open(tmp_path / "results.csv")))
        agg = list(csv.DictReader(open(tmp_path / "aggregate.csv")))
        assert sorted({int(r["seed"]) for r in raw}) == [0, 1, 2]
        for row in agg:
            m = np.array([float(r["metric"]) for r in raw if r["value"] == row["value"]])
            assert int(row["n"]) == len(m) == 3
            assert float(row["mean"]) == pytest.approx(m.mean(), abs=1e-12)
            assert float(row["std"]) == pytest.approx(m.std(), abs=1e-12)

    def test_full_precision_numbers(self, tmp_path):
        cfg = parse_config(json.dumps({**SMALL_CHAIN, "replications": 1}))
        sweep = bench.run_experiment(cfg, tmp_path)
        raw = list(csv.DictReader(open(tmp_path / "results.csv")))
        assert [float(r["metric"]) for r in raw] == [m for _, _, m in sweep.rows]

    def test_exact_ordering_over_slip_sweep(self, tmp_path):
        base = {
            "environment": {"kind": "chain", "reward_states": [0, 6]},
            "uncertainty": {"kind": "slip_sets", "slips": [0.1, 0.2, 0.3]},
            "sweep": {"knob": "slip", "values": [0.1, 0.2, 0.3]},
            "replications": 1,
        }
        robust = bench.run_experiment(parse_config(json.dumps({**base, "algorithm": "exact-robust-pi"})))
        nominal = bench.run_experiment(parse_config(json.dumps({**base, "algorithm": "exact-pi"})))
        worst = lambda res: min(m for _, _, m in res.rows)
        assert worst(robust) >= worst(nominal) - 1e-12

    def test_threads_from_env(self, monkeypatch):
        monkeypatch.setenv("ROBUST_LSPI_THREADS", "3")
        assert bench.threads_from_env() == 3
        monkeypatch.delenv("ROBUST_LSPI_THREADS")
        assert bench.threads_from_env() == 1


class TestCli:
    def test_validate(self, tmp_path, capsys):
        assert main(["validate", str(write(tmp_path, SMALL_CHAIN))]) == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed["features"]["kind"] == "polynomial"

    def test_bad_config_exit_two(self, tmp_path, capsys):
        path = write(tmp_path, {**SMALL_CHAIN, "lam": 2.0})
        assert main(["validate", str(path)]) == 2
        err = capsys.readouterr().err
        assert f"{path}:" in err and "lam" in err
        line = int(err.split(f"{path}:")[1].split(":")[0])
        assert '"lam"' in path.read_text().splitlines()[line - 1]

    def test_unknown_flag(self, tmp_path):
        proc = cli("run", write(tmp_path, SMALL_CHAIN), "--bogus")
        assert proc.returncode == 2 and "usage" in proc.stderr

    def test_missing_config_file(self, tmp_path):
        assert main(["validate", str(tmp_path / "nope.json")]) == 2

    def test_oracle(self, capsys):
        assert main(["oracle", str(CONFIGS / "chain_model.json")]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[1] == "policy: 0 0 0 0 0 1 1 1 1 1"
        assert out[2] == "policy_iteration_agrees: true"
        assert len(out[0].split()) == 11

    def test_run_then_eval(self, tmp_path, capsys):
        cfg_path = write(tmp_path, SMALL_CHAIN)
        out = tmp_path / "out"
        assert main(["run", str(cfg_path), "--out-dir", str(out), "--reps", "2", "--seed", "4"]) == 0
        capsys.readouterr()
        for seed in (4, 5):
            records = [json.loads(x) for x in (out / f"seed_{seed}" / "records.jsonl").read_text().splitlines()]
            assert main(["eval", "--weights", str(out / f"seed_{seed}" / "weights.csv"), "--env", str(cfg_path), "--seed", str(seed)]) == 0
            assert float(capsys.readouterr().out) == pytest.approx(records[-1]["metrics"]["score"], abs=1e-12)

    @pytest.mark.slow
    def test_run_then_eval_continuous(self, tmp_path, capsys):
        cfg_path = write(tmp_path, {**SMALL_CARTPOLE, "replications": 1})
        out = tmp_path / "out"
        assert main(["run", str(cfg_path), "--out-dir", str(out)]) == 0
        capsys.readouterr()
        records = [json.loads(x) for x in (out / "seed_0" / "records.jsonl").read_text().splitlines()]
        assert main(["eval", "--weights", str(out / "seed_0" / "weights.csv"), "--env", str(cfg_path)]) == 0
        assert float(capsys.readouterr().out) == pytest.approx(records[-1]["metrics"]["score"], abs=1e-12)

    def test_sweep_overrides(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["sweep", str(write(tmp_path, SMALL_CHAIN)), "--knob", "slip", "--values", "0.2,0.4", "--reps", "1", "--out-dir", str(out)]) == 0
        values = [r["value"] for r in csv.DictReader(open(out / "results.csv"))]
        assert values == ["0.2", "0.4"]

    def test_sweep_unknown_knob(self, tmp_path):
        assert main(["sweep", str(write(tmp_path, SMALL_CHAIN)), "--knob", "gravity", "--values", "1", "--out-dir", str(tmp_path / "o")]) == 1

    def test_runtime_failure_writes_log(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise RuntimeError("kaboom")

        monkeypatch.setattr(bench, "train", boom)
        out = tmp_path / "out"
        assert main(["run", str(write(tmp_path, SMALL_CHAIN)), "--out-dir", str(out)]) == 1
        assert "kaboom" in (out / "run.log").read_text()

    def test_weights_file_format(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", str(write(tmp_path, {**SMALL_CHAIN, "replications": 1})), "--out-dir", str(out)]) == 0
        weights = read_weights(out / "seed_0" / "weights.csv")
        assert sorted(weights) == [0, 1, 2] and all(len(w) == 6 for w in weights.values())


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


class TestDeterminism:
    @pytest.mark.parametrize("doc", [SMALL_CHAIN, {**SMALL_CARTPOLE, "K": 1}], ids=["chain", "cartpole"])
    def test_byte_identical_runs(self, tmp_path, doc):
        cfg_path = write(tmp_path, doc)
        trees = []
        for i, threads in enumerate((1, 1, 2)):
            out = tmp_path / f"out{i}"
            proc = cli("run", cfg_path, "--out-dir", out, "--threads", threads, "--seed", 11)
            assert proc.returncode == 0, proc.stderr
            trees.append(tree_bytes(out))
        assert trees[0] and trees[0] == trees[1] == trees[2]
