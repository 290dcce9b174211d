import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from refracted_stopping import presets
from refracted_stopping.cli import main
from refracted_stopping.config import from_dict, parse_grid, parse_m_list
from refracted_stopping.errors import ConfigError
from refracted_stopping.model import phi

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def case1(N=5, M=1, gamma=0.02, **numerics):
    return {
        "model": {"sigma": 0.2, "rho": 1.5, "gamma": gamma, "jumps": {"preset": "exponential"}},
        "problem": {"K": 100, "alpha_rate": -0.02, "delta": 0.5, "N": N, "M": M},
        "numerics": numerics,
    }


def write(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestSolveCommand:
    def test_thresholds_file(self, tmp_path):
        out = tmp_path / "out"
        assert main(["solve", "--config", write(tmp_path, case1()), "--out-dir", str(out)]) == 0
        rows = read_csv(out / "thresholds.csv")
        assert rows[0] == ["stage", "threshold"]
        a = [float(r[1]) for r in rows[1:]]
        assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 4, 5]
        assert all(x > y for x, y in zip(a, a[1:]))
        assert min(a) > math.log(100)

    def test_single_stage_payoff_region(self, tmp_path):
        out = tmp_path / "out"
        assert main(["solve", "--config", write(tmp_path, case1(N=1)), "--out-dir", str(out), "--grid", "6:9:31"]) == 0
        a1 = float(read_csv(out / "thresholds.csv")[1][1])
        rows = read_csv(out / "values.csv")
        assert rows[0] == ["x", "v1"]
        above = [(float(x), float(v)) for x, v in rows[1:] if float(x) >= a1]
        assert above
        for x, v in above:
            assert v == pytest.approx(math.exp(x) - 100, rel=1e-13)

    def test_full_precision_and_summary(self, tmp_path):
        out = tmp_path / "out"
        main(["solve", "--config", write(tmp_path, case1(N=2, M=2)), "--out-dir", str(out)])
        row = read_csv(out / "thresholds.csv")[1]
        assert len(row[1].replace(".", "").lstrip("0")) >= 16
        summary = json.loads((out / "summary.json").read_text())
        res = summary["results"]
        assert set(res["timings"]) == {"roots", "recursion"}
        assert len(res["roots"]) == 2
        assert res["diagnostics"]
        assert summary["problem"]["M"] == 2

    def test_summary_round_trip_is_bit_identical(self, tmp_path):
        data = case1(N=3, M=2)
        data["model"] = {
            "sigma": 0.2, "rho": 1.5, "gamma": 0.1,
            "jumps": {"alpha": presets.FOLDED_NORMAL_ALPHA.tolist(), "T": presets.FOLDED_NORMAL_T.tolist(), "normalize_alpha": True},
        }
        first, second = tmp_path / "a", tmp_path / "b"
        assert main(["solve", "--config", write(tmp_path, data), "--out-dir", str(first)]) == 0
        assert main(["solve", "--config", str(first / "summary.json"), "--out-dir", str(second)]) == 0
        a = json.loads((first / "summary.json").read_text())["results"]["thresholds"]
        b = json.loads((second / "summary.json").read_text())["results"]["thresholds"]
        assert a == b
        assert (first / "thresholds.csv").read_bytes() == (second / "thresholds.csv").read_bytes()

    def test_breakdown_exit_code(self, tmp_path, capsys):
        code = main(["solve", "--config", str(CONFIGS / "case3_breakdown.yaml"), "--out-dir", str(tmp_path)])
        assert code == 4
        err = capsys.readouterr().err
        assert err.startswith("PrecisionBreakdown")
        assert "stage" in err

    def test_assumption_exit_code(self, tmp_path, capsys):
        assert main(["solve", "--config", write(tmp_path, case1(gamma=-0.05)), "--out-dir", str(tmp_path)]) == 3
        assert capsys.readouterr().err.startswith("AssumptionViolated")


class TestConfig:
    def test_exactly_one_drift_source(self):
        data = case1()
        data["model"]["drift_tilde"] = 0.69
        with pytest.raises(ConfigError):
            from_dict(data)
        del data["model"]["gamma"]
        assert from_dict(data).model.drift_tilde == 0.69

    @pytest.mark.parametrize(
        "patch",
        [
            {"problem": {"K": 100, "alpha_rate": -0.02, "delta": 0.5, "N": 0, "M": 1}},
            {"numerics": {"continuity_tol": -1.0}},
            {"numerics": {"grid": {"lo": 2.0, "hi": 1.0, "n": 10}}},
            {"numerics": {"mc": {"paths": 0}}},
            {"outputs": {"path": "x"}},
        ],
    )
    def test_invalid_blocks(self, patch):
        data = case1()
        data.update(patch)
        with pytest.raises(ConfigError):
            from_dict(data)

    def test_unknown_preset(self):
        data = case1()
        data["model"]["jumps"] = {"preset": "pareto"}
        with pytest.raises(ConfigError):
            from_dict(data)

    def test_flag_parsers(self):
        assert parse_grid("1:2:3").n == 3
        assert parse_m_list("1, 3,5") == [1, 3, 5]
        for bad in ("1:2", "2:1:5", "a:b:c"):
            with pytest.raises(ConfigError):
                parse_grid(bad)
        with pytest.raises(ConfigError):
            parse_m_list("1,x")

    def test_config_error_exit_code(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("model: [1, 2\n")
        assert main(["solve", "--config", str(path)]) == 2
        assert capsys.readouterr().err.startswith("ConfigError")
        assert main(["solve", "--config", str(tmp_path / "missing.yaml")]) == 2

    def test_json_config(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(case1(N=1)))
        assert main(["solve", "--config", str(path), "--out-dir", str(tmp_path / "o")]) == 0

    def test_example_configs_load(self):
        from refracted_stopping.config import load_config

        for path in CONFIGS.glob("*.yaml"):
            load_config(path)


class TestEvalCommand:
    def test_threshold_gives_payoff_side(self, tmp_path, capsys):
        cfg = write(tmp_path, case1(N=1))
        main(["solve", "--config", cfg, "--out-dir", str(tmp_path / "o")])
        a1 = read_csv(tmp_path / "o" / "thresholds.csv")[1][1]
        capsys.readouterr()
        assert main(["eval", "--config", cfg, a1]) == 0
        value = float(capsys.readouterr().out.strip())
        assert value == pytest.approx(math.exp(float(a1)) - 100, rel=1e-14)

    def test_far_below_decays_at_phi_alpha(self, tmp_path, capsys):
        cfg = write(tmp_path, case1(N=3, M=2))
        x = 7.0 - 10.0 - 5.0
        assert main(["eval", "--config", cfg, str(x), str(x - 1)]) == 0
        hi, lo = (float(v) for v in capsys.readouterr().out.split())
        assert hi > 0 and lo > 0
        pa = phi(from_dict(case1()).model, -0.02)
        assert hi / lo == pytest.approx(math.exp(pa), rel=1e-6)

    def test_empty_list(self, tmp_path, capsys):
        assert main(["eval", "--config", write(tmp_path, case1())]) == 0
        assert capsys.readouterr().out == ""


class TestCompareCommand:
    def test_rows_and_const(self, tmp_path):
        data = case1(mc={"paths": 2000, "m_list": [1, 2], "constant": True})
        out = tmp_path / "o"
        assert main(["compare-mc", "--config", write(tmp_path, data), "--out-dir", str(out), "--seed", "3"]) == 0
        rows = read_csv(out / "compare.csv")
        assert rows[0][:5] == ["M", "closed_form", "mc_mean", "ci_low", "ci_high"]
        assert [r[0] for r in rows[1:]] == ["1", "2", "const"]
        assert float(rows[1][1]) == pytest.approx(1823.65, rel=1e-3)
        assert rows[3][1] == ""

    def test_const_row_omitted_by_default(self, tmp_path):
        data = case1(mc={"paths": 1000})
        out = tmp_path / "o"
        assert main(["compare-mc", "--config", write(tmp_path, data), "--out-dir", str(out), "--m-list", "1"]) == 0
        rows = read_csv(out / "compare.csv")
        assert [r[0] for r in rows[1:]] == ["1"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "refracted_stopping", "eval", "--config", write(tmp_path, case1(N=1)), "7.6"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert float(proc.stdout) == pytest.approx(math.exp(7.6) - 100, rel=1e-14)
