import csv
import json

import numpy as np
import pytest

from tikhonov_hs import cli
from tikhonov_hs.artifacts import read_manifest
from tikhonov_hs.experiments import CellResult, ContrastEntry, OversmoothingReport, RateFit, Table1Report, Table1Row
from tikhonov_hs.hilbert_scale import Grid, GridFunction
from tikhonov_hs.settings import FIGURE3_ALPHAS
from tikhonov_hs.tikhonov_solver import Reconstruction


def write_config(path, text: str):
    path.write_text(text, encoding="utf-8")
    return path


def read_rows(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


SMALL = "n: 64\ngrid:\n  alpha0: 1.0e-7\n  q: 3.1622776601683795\n  count: 12\nnoise:\n  deltas: [0.0179]\n"


@pytest.fixture(autouse=True)
def keep_logging(mocker):
    return mocker.patch.object(cli, "configure_logging")


class TestMain:
    def test_invalid_config(self, tmp_path):
        path = write_config(tmp_path / "run.yaml", "grid:\n  q: 0.5\n")
        assert cli.main(["solve", "--config", str(path)]) == cli.EXIT_CONFIG

    def test_missing_config(self, tmp_path):
        assert cli.main(["solve", "--config", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG

    def test_missing_alpha(self, tmp_path, caplog):
        path = write_config(tmp_path / "run.yaml", "experiment: single\n")
        assert cli.main(["solve", "--config", str(path)]) == cli.EXIT_CONFIG
        assert "alpha" in caplog.text

    def test_oracle_without_solution(self, tmp_path):
        path = write_config(
            tmp_path / "run.yaml", "solution: null\ndata_path: data.csv\nrule:\n  name: oracle\n"
        )
        assert cli.main(["select", "--config", str(path)]) == cli.EXIT_CONFIG

    def test_unreachable_discrepancy(self, tmp_path, caplog):
        path = write_config(tmp_path / "run.yaml", SMALL + "rule:\n  name: discrepancy\n  c_dp: 1.0e-6\n")
        code = cli.main(["select", "--config", str(path), "--out", str(tmp_path / "out")])
        assert code == cli.EXIT_FAILURE
        assert "residual target unreachable" in caplog.text

    def test_grid_endpoint_bounds(self, tmp_path, caplog):
        text = SMALL.replace("  count: 12\n", "  count: 12\n  c_f: 1.0e+5\n  c_g: 1.0e-20\n")
        path = write_config(tmp_path / "run.yaml", text)
        assert cli.main(["solve", "--config", str(path), "--out", str(tmp_path / "out")]) == cli.EXIT_CONFIG
        assert "grid.c_f" in caplog.text
        assert not (tmp_path / "out").exists()

    def test_solve_single(self, tmp_path, capsys):
        path = write_config(
            tmp_path / "run.yaml", "n: 100\nexperiment: single\nalpha: 1.0e-4\nnoise:\n  deltas: [0.0]\n"
        )
        out = tmp_path / "out"
        assert cli.main(["solve", "--config", str(path), "--out", str(out)]) == cli.EXIT_OK
        printed = capsys.readouterr().out.split()
        assert printed == [str(out / "reconstruction.csv"), str(out / "manifest.json")]
        rows = read_rows(out / "reconstruction.csv")
        t = np.array([float(r["t"]) for r in rows])
        x = np.array([float(r["x"]) for r in rows])
        interior = t <= 0.3
        assert np.max(np.abs(x[interior] - 1.0)) < 0.25
        assert x[-1] == 0.0

    def test_solve_path(self, tmp_path):
        path = write_config(tmp_path / "run.yaml", SMALL)
        out = tmp_path / "out"
        assert cli.main(["solve", "--config", str(path), "--out", str(out), "--seed", "4"]) == cli.EXIT_OK
        rows = read_rows(out / "path.csv")
        assert len(rows) == 12
        assert all(r["status"] == "ok" for r in rows)
        config = read_manifest(out / "manifest.json")
        assert config.noise.seed == 4
        assert config.output_dir == str(out)

    def test_select(self, tmp_path):
        path = write_config(tmp_path / "run.yaml", SMALL + "rule:\n  name: balancing_first\n  c_bp: 0.1\n")
        out = tmp_path / "out"
        assert cli.main(["select", "--config", str(path), "--out", str(out)]) == cli.EXIT_OK
        record = json.loads((out / "selection.json").read_text(encoding="utf-8"))
        assert record["rule"] == "balancing_first"
        assert record["alpha_star"] in record["alphas"]
        comparisons = record["comparisons"]
        assert all(c["j"] == c["i"] + 1 for c in comparisons)
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["command"] == "select"
        assert manifest["artifacts"] == ["selection.json", "reconstruction.csv"]
        assert {"numpy", "scipy", "python"} <= set(manifest["versions"])

    def test_same_seed_same_bytes(self, tmp_path):
        path = write_config(tmp_path / "run.yaml", SMALL)
        for name in ("a", "b"):
            assert cli.main(["solve", "--config", str(path), "--out", str(tmp_path / name)]) == cli.EXIT_OK
        assert (tmp_path / "a" / "path.csv").read_bytes() == (tmp_path / "b" / "path.csv").read_bytes()


class TestReproduce:
    def test_table1(self, tmp_path, mocker):
        fit = RateFit(c=1.0, kappa=1 / 3, residual=0.0, samples=())
        report = Table1Report(
            table=tuple(Table1Row(c_bp, fit, fit, cells=8, failed=0) for c_bp in (0.02, 0.05, 0.1)),
            cells=(CellResult(0.1, 0.0179, 0, 1e-6, 0.2),),
        )
        run = mocker.patch.object(cli, "run_table1", return_value=report)
        out = tmp_path / "out"
        assert cli.main(["reproduce", "table1", "--out", str(out)]) == cli.EXIT_OK
        c_bp_list, deltas, seeds, _ = run.call_args.args
        assert c_bp_list == (0.02, 0.05, 0.1)
        assert len(deltas) == 8
        assert seeds == (0,)
        rows = read_rows(out / "table1.csv")
        assert [float(r["c_bp"]) for r in rows] == [0.02, 0.05, 0.1]
        assert all(float(r["kappa_x"]) == pytest.approx(1 / 3) for r in rows)

    def test_figure3(self, tmp_path, mocker):
        grid = Grid(10)
        entries = []
        for solution in ("one", "parabola"):
            for alpha in FIGURE3_ALPHAS:
                x = GridFunction.zeros(grid)
                reconstruction = Reconstruction(x, alpha, 0.0, 0.0, 0.0)
                entries.append(ContrastEntry(solution, alpha, reconstruction, 1.0, 0.0, 0.0))
        mocker.patch.object(cli, "run_oversmoothing_contrast", return_value=OversmoothingReport(0.0179, tuple(entries)))
        out = tmp_path / "out"
        assert cli.main(["reproduce", "figure3", "--out", str(out)]) == cli.EXIT_OK
        reconstructions = sorted(out.glob("figure3_*_alpha*.csv"))
        assert len(reconstructions) == 8
        assert len(read_rows(out / "figure3.csv")) == 8
        assert list(read_rows(reconstructions[0])[0]) == ["t", "x", "x_dag"]

    def test_verbose(self, tmp_path, keep_logging):
        path = write_config(tmp_path / "run.yaml", "grid:\n  q: 0.5\n")
        cli.main(["solve", "--config", str(path), "--verbose"])
        keep_logging.assert_called_once_with(True)

    def test_unknown_target(self):
        with pytest.raises(SystemExit):
            cli.main(["reproduce", "figure9"])
