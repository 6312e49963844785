import json

import pytest

from confmc.cli import main
from confmc.sweep import DEFAULT_PR_PAIRS, SweepSpec, run_sweep, spec_from_dict, write_csv
from confmc.formats import ConfigError


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({
        "N": 65, "k": 57, "v_max": 1, "v0": 1, "env": "obj",
        "stop_semantics": "absorb",
    }))
    return str(path)


@pytest.fixture
def small_scenario_file(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps({
        "N": 8, "k": 6, "v_max": 2, "v0": 2, "env": "ped",
    }))
    return str(path)


@pytest.fixture
def sweep_spec_file(tmp_path):
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps({
        "scenario": {"N": 8, "k": 6},
        "env": ["ped", "obj"],
        "v_max": [1, 2],
        "v0": "1..v_max",
        "cm": "cm1",
        "formula": {"ped": "stop-on-ped", "obj": "no-false-stop"},
        "out": str(tmp_path / "rows.csv"),
    }))
    return str(path)


class TestCheck:
    def test_prints_slow_approach_probability(self, scenario_file, capsys):
        assert main(["check", scenario_file, "--cm", "cm1", "--formula", "no-false-stop"]) == 0
        out = capsys.readouterr().out
        assert "probability 0.866666667" in out

    def test_json_output(self, scenario_file, capsys):
        assert main([
            "check", scenario_file, "--cm", "cm1",
            "--formula", "G(env=ped | !(cell=56 & speed=0))", "--json",
        ]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["probability"] == pytest.approx(13 / 15, abs=1e-9)
        assert payload["engine"] == "linear"

    def test_perfect_perception(self, small_scenario_file, capsys):
        assert main([
            "check", small_scenario_file, "--cm", "identity", "--formula", "stop-on-ped",
        ]) == 0
        assert "probability 1.000000000" in capsys.readouterr().out

    def test_pr_matrix_option(self, small_scenario_file, capsys):
        assert main([
            "check", small_scenario_file, "--pr", "0.8,0.8", "--formula", "stop-on-ped",
        ]) == 0

    def test_malformed_formula_exit_code(self, scenario_file, capsys):
        assert main(["check", scenario_file, "--formula", "cell=="]) == 2
        assert "offset" in capsys.readouterr().err

    def test_unsupported_fragment_exit_code(self, scenario_file):
        assert main(["check", scenario_file, "--formula", "G F (cell=1)"]) == 2

    def test_missing_scenario_exit_code(self, tmp_path):
        assert main(["check", str(tmp_path / "nope.json"), "--formula", "F(cell=1)"]) == 3

    def test_infeasible_pr_exit_code(self, small_scenario_file):
        assert main([
            "check", small_scenario_file, "--pr", "0.2,0.9", "--formula", "stop-on-ped",
        ]) == 3


class TestSweepCommand:
    def test_writes_csv_and_figures(self, sweep_spec_file, tmp_path, capsys):
        assert main(["sweep", sweep_spec_file]) == 0
        out = capsys.readouterr().out
        csv_path = tmp_path / "rows.csv"
        assert csv_path.exists()
        text = csv_path.read_text()
        assert text.startswith("env,v0,v_max,")
        assert len(text.splitlines()) == 1 + 2 * 3  # header + 2 envs x (1+2) points
        assert (tmp_path / "rows_ped.png").exists()
        assert (tmp_path / "rows_obj.png").exists()
        assert "wrote" in out

    def test_byte_identical_reruns(self, sweep_spec_file, tmp_path):
        assert main(["sweep", sweep_spec_file, "--no-plot"]) == 0
        first = (tmp_path / "rows.csv").read_bytes()
        assert main(["sweep", sweep_spec_file, "--no-plot"]) == 0
        assert (tmp_path / "rows.csv").read_bytes() == first

    def test_timing_breaks_byte_identity_but_fills_column(self, sweep_spec_file, tmp_path):
        assert main(["sweep", sweep_spec_file, "--no-plot", "--timing"]) == 0
        lines = (tmp_path / "rows.csv").read_text().splitlines()
        header = lines[0].split(",")
        column = header.index("wall_time_ms")
        assert all(line.split(",")[column] for line in lines[1:])

    def test_rows_reproduced_by_check(self, sweep_spec_file, tmp_path, capsys):
        assert main(["sweep", sweep_spec_file, "--no-plot"]) == 0
        capsys.readouterr()
        import csv as csvmod

        rows = list(csvmod.DictReader(open(tmp_path / "rows.csv")))
        for row in rows[:3]:
            scenario = tmp_path / "probe.json"
            scenario.write_text(json.dumps({
                "N": 8, "k": 6, "v_max": int(row["v_max"]), "v0": int(row["v0"]),
                "env": row["env"],
            }))
            assert main([
                "check", str(scenario), "--cm", "cm1",
                "--formula", row["formula"], "--json",
            ]) == 0
            payload = json.loads(capsys.readouterr().out)
            assert payload["probability"] == pytest.approx(
                float(row["probability"]), abs=1e-12
            )

    def test_split_output_per_env(self, tmp_path):
        spec = tmp_path / "sweep.json"
        spec.write_text(json.dumps({
            "scenario": {"N": 8, "k": 6},
            "env": ["ped", "obj"],
            "v_max": [2],
            "v0": [1],
            "cm": "cm1",
            "formula": {"ped": "stop-on-ped", "obj": "no-false-stop"},
            "out": str(tmp_path / "split_{env}.csv"),
        }))
        assert main(["sweep", str(spec), "--no-plot"]) == 0
        assert (tmp_path / "split_ped.csv").exists()
        assert (tmp_path / "split_obj.csv").exists()

    def test_empty_range_rejected(self, tmp_path):
        spec = tmp_path / "sweep.json"
        spec.write_text(json.dumps({
            "scenario": {"N": 8, "k": 6},
            "env": ["ped"],
            "v_max": [2],
            "v0": [],
            "cm": "cm1",
        }))
        assert main(["sweep", str(spec)]) == 3

    def test_partial_failure_recorded(self, tmp_path, capsys):
        # v_max=3 cannot brake in time on the tiny road; row errors, run continues
        spec = tmp_path / "sweep.json"
        spec.write_text(json.dumps({
            "scenario": {"N": 8, "k": 6},
            "env": ["ped"],
            "v_max": [2, 3],
            "v0": [1],
            "cm": "cm1",
            "formula": "stop-on-ped",
            "out": str(tmp_path / "rows.csv"),
        }))
        assert main(["sweep", str(spec), "--no-plot"]) == 0
        lines = (tmp_path / "rows.csv").read_text().splitlines()
        assert len(lines) == 3
        good, bad = lines[1], lines[2]
        assert good.split(",")[7]  # probability present
        assert "no exact stop" in bad


class TestSweepApi:
    def test_default_pairs_are_feasible_and_recall_sorted(self):
        recalls = [r for _, r in DEFAULT_PR_PAIRS]
        assert recalls == sorted(recalls)
        from confmc.confusion import from_precision_recall

        for p, r in DEFAULT_PR_PAIRS:
            from_precision_recall(p, r)

    def test_spec_requires_exactly_one_matrix_source(self):
        with pytest.raises(ConfigError):
            SweepSpec(8, 6, (2,), (1,), (), cm_source="cm1")
        payload = {
            "scenario": {"N": 8, "k": 6},
            "env": ["ped"],
            "v_max": [2],
            "v0": [1],
            "cm": "cm1",
            "pr_pairs": [[0.8, 0.8]],
        }
        with pytest.raises(ConfigError):
            spec_from_dict(payload)

    def test_pr_sweep_rows_carry_operating_point(self, tmp_path):
        spec = spec_from_dict({
            "scenario": {"N": 8, "k": 6},
            "env": ["obj"],
            "v_max": [2],
            "v0": [1, 2],
            "pr_pairs": [[0.9, 0.7], [0.7, 0.9]],
            "formula": "no-false-stop",
        })
        rows = run_sweep(spec)
        assert len(rows) == 4
        assert rows[0].p == 0.9 and rows[0].r == 0.7
        assert rows[1].p == 0.7 and rows[1].r == 0.9
        write_csv(rows, tmp_path / "pr.csv")
        text = (tmp_path / "pr.csv").read_text()
        assert "0.9,0.7" in text


class TestOtherCommands:
    def test_metrics(self, capsys):
        assert main(["metrics", "--cm", "cm1", "--class", "ped", "--sizes", "1,1,1"]) == 0
        out = capsys.readouterr().out
        assert "recall              0.666666667" in out
        assert "precision           0.666666667" in out
        assert "precision_mean_rate 0.800000000" in out

    def test_metrics_sizes_omitted(self, capsys):
        assert main(["metrics", "--cm", "cm1", "--class", "ped"]) == 0
        out = capsys.readouterr().out
        assert "omitted" in out and "recall" in out

    def test_simulate_deterministic_output(self, small_scenario_file, capsys):
        argv = [
            "simulate", small_scenario_file, "--cm", "cm1",
            "--formula", "stop-on-ped", "--samples", "5000", "--seed", "21",
        ]
        assert main(argv) == 0
        first = capsys.readouterr().out
        assert main(argv) == 0
        assert capsys.readouterr().out == first

    def test_simulate_ci_covers_slow_approach(self, scenario_file, capsys):
        assert main([
            "simulate", scenario_file, "--cm", "cm1",
            "--formula", "no-false-stop", "--samples", "100000", "--seed", "3",
        ]) == 0
        out = capsys.readouterr().out
        ci_text = out.split("ci [")[1].rstrip("]\n")
        low, high = (float(x) for x in ci_text.split(","))
        assert low <= 13 / 15 <= high

    def test_simulate_rejects_zero_samples(self, scenario_file):
        assert main([
            "simulate", scenario_file, "--cm", "cm1",
            "--formula", "no-false-stop", "--samples", "0",
        ]) == 3

    def test_verify_controller(self, capsys):
        assert main(["verify-controller", "--N", "65", "--k", "57", "--v-max", "5"]) == 0
        assert "satisfies" in capsys.readouterr().out

    def test_export_import_flow(self, small_scenario_file, tmp_path, capsys):
        prefix = str(tmp_path / "chain")
        assert main([
            "export", small_scenario_file, "--cm", "cm1",
            "--format", "explicit", "--out", prefix,
        ]) == 0
        capsys.readouterr()
        assert main(["import", prefix, "--formula", "G(!(cell=5 & speed=0) | env=ped)"]) == 0
        out = capsys.readouterr().out
        assert "stochastic ok" in out and "probability" in out

    def test_import_bad_file_exit_code(self, tmp_path):
        assert main(["import", str(tmp_path / "missing")]) == 5

    def test_export_prism_and_dot(self, small_scenario_file, tmp_path):
        for fmt, ext in (("prism", ".pm"), ("dot", ".dot")):
            out = tmp_path / f"c_{fmt}"
            assert main([
                "export", small_scenario_file, "--cm", "cm1",
                "--format", fmt, "--out", str(out),
            ]) == 0
            assert out.with_suffix(ext).exists()
