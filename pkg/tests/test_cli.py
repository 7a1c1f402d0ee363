import json
import math

import numpy as np
import pytest

import quadkiri as qk
from quadkiri.cli import main
from quadkiri.dataset import save_field


@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_ds")
    code = main([
        "gen", "--count", "6", "--split", "test", "--seed", "4",
        "--grid", "6x6", "--out", str(out), "--verify-samples", "6",
    ])
    assert code == 0
    return out


class TestGen:
    def test_generates_and_verifies(self, cli_dataset):
        manifest = json.loads((cli_dataset / "manifest.json").read_text())
        assert manifest["counts"]["test"] == 6
        assert (cli_dataset / "config_gen_test.json").exists()

    def test_missing_out_is_config_error(self):
        assert main(["gen", "--count", "2"]) == 2

    def test_rerun_is_byte_identical(self, tmp_path):
        import hashlib

        def digest(d):
            h = hashlib.sha256()
            for f in sorted((d / "test").iterdir()):
                h.update(f.name.encode() + f.read_bytes())
            return h.hexdigest()

        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert main(["gen", "--count", "3", "--split", "test", "--seed", "4",
                         "--grid", "5x5", "--out", str(d),
                         "--verify-samples", "3"]) == 0
        assert digest(a) == digest(b)


class TestSolve:
    def test_solve_writes_jsonl_and_figure(self, cli_dataset, tmp_path):
        out = tmp_path / "runs"
        code = main([
            "solve", "--method", "pso", "--k", "1", "--dataset", str(cli_dataset),
            "--split", "test", "--limit", "2", "--max-evals", "48",
            "--out", str(out), "--seed", "0",
        ])
        assert code == 0
        lines = (out / "solve_pso.jsonl").read_text().strip().splitlines()
        assert len(lines) == 2
        rec = json.loads(lines[0])
        assert {"method", "seed", "grid", "target_id", "siou", "success",
                "evals", "seconds", "stop_reason"} <= set(rec)
        assert (out / "solve_pso.png").exists()

    def test_unknown_method(self, cli_dataset, tmp_path):
        assert main(["solve", "--method", "sgd", "--dataset", str(cli_dataset),
                     "--out", str(tmp_path)]) == 2

    def test_missing_dataset(self, tmp_path):
        assert main(["solve", "--method", "pso",
                     "--dataset", str(tmp_path / "nope"),
                     "--out", str(tmp_path)]) == 2

    def test_best_of_k_accounting(self, cli_dataset, tmp_path):
        out = tmp_path / "k4"
        code = main([
            "solve", "--method", "pso", "--k", "4", "--dataset", str(cli_dataset),
            "--split", "test", "--limit", "1", "--max-evals", "48",
            "--out", str(out), "--seed", "0",
        ])
        assert code == 0
        rec = json.loads((out / "solve_pso.jsonl").read_text().splitlines()[0])
        assert rec["evals"] <= rec["evals_total"] <= 4 * 48


class TestEval:
    def test_identity_pair(self, cli_dataset, tmp_path, capsys):
        mask = next((cli_dataset / "test").glob("y_*.pgm"))
        assert main(["eval", "--pred", str(mask), "--target", str(mask)]) == 0
        out = capsys.readouterr().out
        assert json.loads(out.strip())["siou"] == 1.0

    def test_resolution_mismatch(self, tmp_path, cli_dataset):
        small = tmp_path / "small.pgm"
        qk.write_pgm(np.ones((64, 64), bool), small)
        mask = next((cli_dataset / "test").glob("y_*.pgm"))
        assert main(["eval", "--pred", str(small), "--target", str(mask)]) == 2

    def test_field_with_tv(self, cli_dataset, capsys):
        field = sorted((cli_dataset / "test").glob("x_*.txt"))[0]
        target = cli_dataset / "test" / field.name.replace("x_", "y_").replace(
            ".txt", ".pgm")
        assert main(["eval", "--field", str(field), "--target", str(target),
                     "--report-tv"]) == 0
        rec = json.loads(capsys.readouterr().out.strip())
        assert rec["tv"] > 0
        assert rec["siou"] == 1.0  # matching pair from the dataset
        assert rec["success"] is True


class TestGrpo:
    def test_trace_counts(self, cli_dataset, tmp_path):
        target = next((cli_dataset / "test").glob("y_*.pgm"))
        out = tmp_path / "rl"
        code = main([
            "grpo", "--mode", "accuracy", "--calls", "40", "--group", "4",
            "--target", str(target), "--grid", "6x6", "--out", str(out),
            "--seed", "1",
        ])
        assert code == 0
        lines = (out / "grpo_trace.jsonl").read_text().strip().splitlines()
        assert len(lines) == 10
        assert json.loads(lines[-1])["call_count"] == 40
        assert (out / "grpo_trace.png").exists()
        assert (out / "policy_mean_z.txt").exists()

    def test_unknown_mode(self, tmp_path):
        assert main(["grpo", "--mode", "zen", "--target", "heart",
                     "--out", str(tmp_path)]) == 2

    def test_indivisible_calls(self, tmp_path):
        assert main(["grpo", "--calls", "10", "--group", "4",
                     "--target", "heart", "--out", str(tmp_path)]) == 2


class TestBench:
    def test_csv_and_figure(self, tmp_path):
        out = tmp_path / "bench"
        code = main([
            "bench", "--grids", "6", "--methods", "pso", "--targets", "circle",
            "--max-evals", "48", "--out", str(out), "--seed", "0",
        ])
        assert code == 0
        lines = (out / "bench.csv").read_text().strip().splitlines()
        assert lines[0] == "run_id,grid,method,target,seconds,evals"
        assert len(lines) == 2
        assert (out / "bench.png").exists()

    def test_appends_with_run_id(self, tmp_path):
        out = tmp_path / "bench"
        for _ in range(2):
            assert main(["bench", "--grids", "6", "--methods", "pso",
                         "--targets", "circle", "--max-evals", "24",
                         "--out", str(out)]) == 0
        lines = (out / "bench.csv").read_text().strip().splitlines()[1:]
        assert [line.split(",")[0] for line in lines] == ["0", "1"]

    def test_grid_out_of_range(self, tmp_path):
        assert main(["bench", "--grids", "30", "--out", str(tmp_path)]) == 2


class TestExport:
    def test_feasible_field_round_trips(self, tmp_path):
        field_path = tmp_path / "x.txt"
        save_field(qk.RatioField(np.ones((3, 3))), field_path)
        out = tmp_path / "cut.dxf"
        code = main(["export", "--field", str(field_path), "--out", str(out),
                     "--scale-mm", "10"])
        assert code == 0
        plan = qk.read_dxf(out)
        assert len(plan.paths) >= 9
        assert len(plan.connectors) == 12  # 3*(3-1) + (3-1)*3

    def test_zero_radius_untrimmed(self, tmp_path):
        field_path = tmp_path / "x.txt"
        save_field(qk.RatioField(np.ones((2, 2))), field_path)
        out = tmp_path / "cut.dxf"
        assert main(["export", "--field", str(field_path), "--out", str(out),
                     "--connector-radius", "0"]) == 0
        plan = qk.read_dxf(out)
        assert len(plan.paths) == 4 and all(plan.closed)

    def test_infeasible_refused(self, tmp_path):
        # alternating extreme ratios overlap far beyond the threshold
        rng = np.random.default_rng(0)
        bad = None
        z = qk.sobol_stream(100, 200, seed=1)
        for k in range(200):
            x = qk.z_to_ratio(z[k].reshape(10, 10))
            layout = qk.march_decode(x, math.pi / 3)
            if not qk.check_feasible(layout, 0.02):
                bad = x
                break
        assert bad is not None
        field_path = tmp_path / "bad.txt"
        save_field(bad, field_path)
        assert main(["export", "--field", str(field_path),
                     "--out", str(tmp_path / "no.dxf")]) == 5


class TestConfigFile:
    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("count=3\nsplit=test\ngrid=5x5\nseed=4\n")
        out = tmp_path / "ds"
        assert main(["gen", "--config", str(cfg), "--out", str(out),
                     "--verify-samples", "3"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["counts"]["test"] == 3
