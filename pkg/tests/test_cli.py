import json

import numpy as np
import pytest

from vibrocorr import OracleReport, load_checkpoint, read_trace
from vibrocorr.cli import main

FAST_MODEL = """
omega_eg_cm1 = 1000
omega0_cm1 = 100
delta = 0.8
drive_amp_cm1 = 50
n_levels = 4
temperature_k = 298
eta_cm1 = 20
big_lambda_cm1 = 100
n_matsubara = 1
dt_fs = 0.25
depth = 2
t_step_ps = 0.01
equilibration_ps = 0.25
"""


def conf(tmp_path, text, name="run.conf"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestRunTasks:
    def test_g1(self, tmp_path):
        path = conf(tmp_path, FAST_MODEL + "task = g1\nop_first = phonon\nt_end_ps = 0.5\n")
        out = tmp_path / "out"
        assert main(["g1", "--config", path, "--out", str(out)]) == 0
        trace, prov = read_trace(out / "g1_phonon.csv")
        assert trace.axis == "t"
        assert trace.grid_ps[-1] == pytest.approx(0.5)
        assert prov["eta_cm1"] == "20"

    def test_g2(self, tmp_path):
        path = conf(tmp_path, FAST_MODEL +
                    "task = g2\nop_first = photon\nop_second = phonon\n"
                    "t_anchor_ps = 0.3\ntau_max_ps = 0.1\ntau_step_ps = 0.005\n"
                    "t_end_ps = 1.5\n")
        out = tmp_path / "out"
        assert main(["g2", "--config", path, "--out", str(out)]) == 0
        trace, _ = read_trace(out / "g2_photon_phonon.csv")
        assert trace.axis == "tau"
        assert trace.t_anchor_ps == 0.3
        assert trace.normalized

    def test_equilibrate_writes_checkpoint(self, tmp_path):
        path = conf(tmp_path, FAST_MODEL + "task = equilibrate\n")
        out = tmp_path / "out"
        assert main(["equilibrate", "--config", path, "--out", str(out)]) == 0
        state = load_checkpoint(out / "equilibrated.heom")
        assert state.time_fs == 0.0
        assert state.space.size == 6  # two modes, depth 2
        trace, _ = read_trace(out / "equilibration_phonon.csv")
        assert trace.grid_ps[0] == pytest.approx(-0.25)

    def test_svg_format(self, tmp_path):
        path = conf(tmp_path, FAST_MODEL +
                    "task = g1\nop_first = photon\nt_end_ps = 0.2\nformats = csv,svg\n")
        out = tmp_path / "out"
        assert main(["g1", "--config", path, "--out", str(out)]) == 0
        assert (out / "g1_photon.svg").exists()


class TestScan:
    SCAN = (FAST_MODEL + "task = scan\nscan_task = g1\nop_first = phonon\n"
            "scan_eta_cm1 = 0, 20\nscan_lambda_scale = 0, 1\nt_end_ps = 0.3\n")

    def test_scan_outputs_and_manifest(self, tmp_path):
        path = conf(tmp_path, self.SCAN)
        out = tmp_path / "out"
        assert main(["scan", "--config", path, "--out", str(out), "--threads", "2"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "complete"
        assert len(manifest["cells"]) == 4
        for cell in manifest["cells"]:
            assert (out / cell["file"]).exists()
            assert "eta_cm1" in cell["params"]

    def test_single_cell_scan_matches_direct_run(self, tmp_path):
        single = (FAST_MODEL + "task = scan\nscan_task = g1\nop_first = phonon\n"
                  "scan_eta_cm1 = 20\nscan_delta = 0.8\nt_end_ps = 0.3\n")
        direct = FAST_MODEL + "task = g1\nop_first = phonon\nt_end_ps = 0.3\n"
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["scan", "--config", conf(tmp_path, single, "s.conf"),
                     "--out", str(out_a)]) == 0
        assert main(["g1", "--config", conf(tmp_path, direct, "d.conf"),
                     "--out", str(out_b)]) == 0
        scan_csv = (out_a / "g1_phonon_eta20_delta0.8.csv").read_bytes()
        direct_csv = (out_b / "g1_phonon.csv").read_bytes()
        assert scan_csv == direct_csv

    def test_lambda_scale_presets_produce_twelve_cells(self, tmp_path):
        # eta in {0,5,10} x lambda presets {0, l/2, l, 2l} -> 12 cells, with
        # delta_j = sqrt(2 * scale * lambda / omega0)
        from vibrocorr.cli import _scan_cells
        from vibrocorr.config import parse_config
        text = ("task = scan\nscan_task = g1\nop_first = photon\n"
                "scan_eta_cm1 = 0, 5, 10\nscan_lambda_scale = 0, 0.5, 1, 2\n")
        cfg = parse_config(conf(tmp_path, text, "presets.conf"))
        cells = _scan_cells(cfg)
        assert len(cells) == 12
        deltas = sorted({d for _, d in cells})
        lam = cfg.model.lambda_reorg
        expected = sorted(np.sqrt(2.0 * s * lam / cfg.model.omega_0)
                          for s in (0.0, 0.5, 1.0, 2.0))
        assert np.allclose(deltas, expected, atol=1e-12)
        assert deltas[2] == pytest.approx(1.2)

    def test_rerun_bitwise_identical(self, tmp_path):
        path = conf(tmp_path, self.SCAN)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["scan", "--config", path, "--out", str(out_a), "--threads", "2"]) == 0
        assert main(["scan", "--config", path, "--out", str(out_b), "--threads", "2"]) == 0
        for csv in sorted(out_a.glob("*.csv")):
            assert csv.read_bytes() == (out_b / csv.name).read_bytes()
        assert (out_a / "manifest.json").read_text() == (out_b / "manifest.json").read_text()


class TestScanFailure:
    def test_worker_failure_writes_partial_manifest(self, tmp_path, capsys):
        text = (FAST_MODEL.replace("dt_fs = 0.25", "dt_fs = 40")
                          .replace("t_step_ps = 0.01", "t_step_ps = 0.4")
                          .replace("equilibration_ps = 0.25", "equilibration_ps = 0")
                + "task = scan\nscan_task = g1\nop_first = phonon\n"
                  "scan_eta_cm1 = 0, 20\nscan_delta = 0.8\nt_end_ps = 40\n")
        path = conf(tmp_path, text)
        out = tmp_path / "out"
        assert main(["scan", "--config", path, "--out", str(out)]) == 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "partial"
        assert "failed_cell" in manifest
        assert "instability" in capsys.readouterr().err


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path, capsys):
        path = conf(tmp_path, "task = g1\n")  # missing op_first
        assert main(["g1", "--config", path]) == 2
        assert "op_first" in capsys.readouterr().err

    def test_subcommand_task_mismatch_is_2(self, tmp_path, capsys):
        path = conf(tmp_path, FAST_MODEL + "task = g1\nop_first = photon\n")
        assert main(["g2", "--config", path]) == 2
        assert "subcommand" in capsys.readouterr().err

    def test_missing_steady_state_is_2(self, tmp_path, capsys):
        path = conf(tmp_path, FAST_MODEL +
                    "task = g2\nop_first = photon\nop_second = photon\n"
                    "t_anchor_ps = auto\ntau_max_ps = 0.05\nt_end_ps = 0.5\n")
        assert main(["g2", "--config", path, "--out", str(tmp_path / "o")]) == 2
        assert "extend t_end" in capsys.readouterr().err

    def test_instability_is_3(self, tmp_path, capsys):
        blowup = FAST_MODEL.replace("dt_fs = 0.25", "dt_fs = 50") \
                           .replace("t_step_ps = 0.01", "t_step_ps = 0.5") \
                           .replace("equilibration_ps = 0.25", "equilibration_ps = 0")
        path = conf(tmp_path, blowup + "task = g1\nop_first = photon\nt_end_ps = 40\n")
        assert main(["g1", "--config", path, "--out", str(tmp_path / "o")]) == 3
        assert "instability" in capsys.readouterr().err

    def test_oracle_failure_is_4(self, tmp_path, monkeypatch, capsys):
        import vibrocorr.cli as cli_mod

        def fake_suite(report_path=None):
            reports = [OracleReport(name="stub", max_rel_err=1.0, passed=False)]
            if report_path:
                with open(report_path, "w") as fh:
                    for r in reports:
                        fh.write(r.to_json() + "\n")
            return reports

        monkeypatch.setattr(cli_mod, "run_oracle_suite", fake_suite)
        assert main(["verify", "--out", str(tmp_path)]) == 4
        assert (tmp_path / "oracle_report.jsonl").exists()
        assert "FAIL" in capsys.readouterr().out

    def test_verify_flag_gates_task(self, tmp_path, monkeypatch):
        import vibrocorr.cli as cli_mod
        monkeypatch.setattr(
            cli_mod, "run_oracle_suite",
            lambda report_path=None: [OracleReport("stub", 1.0, False)])
        path = conf(tmp_path, FAST_MODEL + "task = g1\nop_first = photon\nt_end_ps = 0.2\n")
        assert main(["g1", "--config", path, "--out", str(tmp_path / "o"),
                     "--verify"]) == 4
        assert not (tmp_path / "o" / "g1_photon.csv").exists()
