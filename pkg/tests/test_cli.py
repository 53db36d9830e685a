import json

import numpy as np
import pytest

from qdbell.cli import main
from qdbell.qmath import density_from_json, singlet
from qdbell.tomography import TomoCounts, exact_counts


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestAnalyzeBell:
    def test_bundled_table(self, capsys):
        code, out, _ = run(capsys, "analyze-bell")
        assert code == 0
        assert "S = 2.3766" in out
        assert "violation" in out and "no violation" not in out

    def test_json(self, capsys):
        code, out, _ = run(capsys, "analyze-bell", "--json")
        doc = json.loads(out)
        assert doc["S"] == pytest.approx(2.377, abs=0.005)
        assert doc["violates"] is True

    def test_uniform_table(self, capsys, tmp_path):
        f = tmp_path / "u.csv"
        rows = [f"{a},{b},25" for a in (0, 45, 90, 135) for b in (22.5, 67.5, 112.5, 157.5)]
        f.write_text("alpha_deg,beta_deg,count\n" + "\n".join(rows) + "\n")
        code, out, _ = run(capsys, "analyze-bell", str(f))
        assert code == 0
        assert "no violation" in out

    def test_missing_setting_named(self, capsys, tmp_path):
        f = tmp_path / "m.csv"
        rows = [f"{a},{b},25" for a in (0, 45, 90, 135) for b in (22.5, 67.5, 112.5, 157.5)]
        rows.remove("45,67.5,25")
        f.write_text("alpha_deg,beta_deg,count\n" + "\n".join(rows) + "\n")
        code, _, err = run(capsys, "analyze-bell", str(f))
        assert code == 2
        assert "alpha=45, beta=67.5" in err

    def test_parse_error_line(self, capsys, tmp_path):
        f = tmp_path / "bad.csv"
        f.write_text("alpha_deg,beta_deg,count\n0,22.5,abc\n")
        code, _, err = run(capsys, "analyze-bell", str(f))
        assert code == 2
        assert "line 2" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "analyze-bell", str(tmp_path / "nope.csv"))
        assert code == 2
        assert "cannot read" in err

    def test_bad_angles(self, capsys):
        assert run(capsys, "analyze-bell", "--angles", "1,2,3")[0] == 2


class TestFlags:
    @pytest.mark.parametrize(
        "flag, value",
        [("--g2", "0.3"), ("--overlap", "1.5"), ("--ratio", "3"), ("--overlap", "abc")],
    )
    def test_out_of_range(self, capsys, flag, value):
        code, _, err = run(capsys, "model-rho", flag, value)
        assert code == 2
        assert "permitted interval" in err or "must be a number" in err

    def test_unknown_command(self, capsys):
        assert run(capsys, "frobnicate")[0] == 2


class TestModelCommands:
    def test_model_rho_json(self, capsys):
        code, out, _ = run(capsys, "model-rho", "--g2", "0", "--overlap", "1", "--ratio", "1")
        assert code == 0
        np.testing.assert_allclose(density_from_json(out).matrix, singlet().matrix, atol=1e-12)

    def test_oracle_compare(self, capsys):
        code, out, _ = run(capsys, "oracle-compare", "--g2", "0.02", "--overlap", "0.8", "--ratio", "1.1")
        doc = json.loads(out)
        assert code == 0
        assert doc["fidelity"] >= 1 - 1e-9
        assert doc["max_abs_diff"] < 1e-9

    def test_qber_model(self, capsys):
        code, out, _ = run(capsys, "qber", "--overlap", "0.6", "--basis", "45")
        assert code == 0
        assert json.loads(out)["qber"] == pytest.approx(0.2)

    def test_qber_from_file(self, capsys, tmp_path):
        f = tmp_path / "rho.json"
        f.write_text(singlet().to_json())
        code, out, _ = run(capsys, "qber", "--input", str(f))
        assert json.loads(out)["qber"] == pytest.approx(0.0, abs=1e-12)

    def test_qber_unphysical_input(self, capsys, tmp_path):
        f = tmp_path / "rho.json"
        doc = json.loads(singlet().to_json())
        doc["re"][0][0] = 0.5
        f.write_text(json.dumps(doc))
        assert run(capsys, "qber", "--input", str(f))[0] == 2


class TestSimulation:
    def test_simulate_bell_reproducible(self, capsys, tmp_path):
        args = ["simulate-bell", "--shots", "50000", "--seed", "3"]
        code1, out1, _ = run(capsys, *args, "--out", str(tmp_path / "a.csv"))
        code2, out2, _ = run(capsys, *args, "--threads", "2", "--out", str(tmp_path / "b.csv"))
        assert code1 == code2 == 0
        assert out1 == out2
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert json.loads(out1)["S"] > 2

    def test_simulated_table_feeds_analysis(self, capsys, tmp_path):
        f = tmp_path / "t.csv"
        run(capsys, "simulate-bell", "--shots", "50000", "--out", str(f))
        code, out, _ = run(capsys, "analyze-bell", str(f), "--angles", "0,45,67.5,22.5", "--json")
        assert code == 0
        assert json.loads(out)["S"] > 2

    def test_histogram(self, capsys, tmp_path):
        f = tmp_path / "h.csv"
        code, out, _ = run(capsys, "histogram", "--shots", "20000", "--width-ps", "0", "--out", str(f))
        assert code == 0
        assert f.read_text().startswith("tau_ns,count\n")
        assert json.loads(out)["central"] > 0

    def test_histogram_bytes_stable(self, capsys, tmp_path):
        for name in ("a", "b"):
            run(capsys, "histogram", "--shots", "20000", "--seed", "5", "--out", str(tmp_path / name))
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


class TestTomography:
    def test_simulate_and_reconstruct(self, capsys, tmp_path):
        counts = tmp_path / "c.csv"
        rho = tmp_path / "rho.json"
        flags = ["--g2", "0.02", "--overlap", "0.8", "--ratio", "1.1"]
        assert run(capsys, "tomo-simulate", *flags, "--pairs", "10000", "--seed", "1", "--out", str(counts))[0] == 0
        code, out, _ = run(capsys, "tomo-reconstruct", str(counts), *flags, "--out", str(rho))
        doc = json.loads(out)
        assert code == 0
        assert doc["converged"] is True
        assert doc["fidelity_to_model"] >= 0.99
        density_from_json(rho.read_text())

    def test_linear_method(self, capsys, tmp_path):
        f = tmp_path / "c.csv"
        f.write_text(exact_counts(singlet(), 1000).to_csv())
        code, out, _ = run(capsys, "tomo-reconstruct", str(f), "--method", "linear")
        assert code == 0
        assert json.loads(out)["negativity"] == pytest.approx(1.0, abs=1e-9)

    def test_linear_unphysical_is_runtime_error(self, capsys, tmp_path):
        counts = exact_counts(singlet(), 1000).counts.copy()
        counts[0] = 400.0  # HH far above what any state allows with HV, VH
        f = tmp_path / "c.csv"
        f.write_text(TomoCounts(counts).to_csv())
        code, _, err = run(capsys, "tomo-reconstruct", str(f), "--method", "linear")
        assert code == 1
        assert "unphysical" in err

    def test_iteration_cap_reports_nonconvergence(self, capsys, tmp_path):
        f = tmp_path / "c.csv"
        f.write_text(exact_counts(singlet(), 1000).to_csv())
        code, out, err = run(capsys, "tomo-reconstruct", str(f), "--max-iter", "1")
        assert code == 1
        assert json.loads(out)["converged"] is False

    def test_bad_token(self, capsys, tmp_path):
        f = tmp_path / "c.csv"
        f.write_text("first,second,count\nH,Q,1\n")
        code, _, err = run(capsys, "tomo-reconstruct", str(f))
        assert code == 2
        assert "line 2" in err
