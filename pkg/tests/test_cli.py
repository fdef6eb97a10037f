import csv
import json

import numpy as np
import pytest

from fnar.cli import main
from fnar.simulate import mc_alpha


def run(args):
    return main([str(a) for a in args])


@pytest.fixture()
def sim_dir(tmp_path):
    out = tmp_path / "sim"
    out.mkdir()
    code = run(["simulate", "--n", 40, "--T", 5, "--r", 1, "--seed", 7, "--out", out])
    assert code == 0
    return out


class TestSimulate:
    def test_outputs_exist(self, sim_dir):
        for name in ("observations.csv", "covariates.csv", "weights.csv",
                     "truth_functions.csv"):
            assert (sim_dir / name).exists()

    def test_missing_output_dir_is_io_error(self, tmp_path):
        code = run(["simulate", "--n", 10, "--T", 3, "--r", 1, "--seed", 1,
                    "--out", tmp_path / "nope"])
        assert code == 2

    def test_nonstationary_scale_is_model_error(self, tmp_path):
        out = tmp_path / "sim2"
        out.mkdir()
        code = run(["simulate", "--n", 10, "--T", 3, "--r", 1, "--seed", 1,
                    "--alpha-scale", 2.0, "--out", out])
        assert code == 3


class TestEstimate:
    def test_round_trip_recovers_truth(self, sim_dir, tmp_path):
        est = tmp_path / "est"
        est.mkdir()
        code = run([
            "estimate", "--observations", sim_dir / "observations.csv",
            "--covariates", sim_dir / "covariates.csv",
            "--weights", sim_dir / "weights.csv",
            "--operator", "epanechnikov", "--out", est,
        ])
        assert code == 0
        with open(est / "alpha_hat.csv") as fh:
            rows = list(csv.DictReader(fh))
        s = np.array([float(r["s"]) for r in rows])
        est_vals = np.array([float(r["estimate"]) for r in rows])
        sup_err = np.max(np.abs(est_vals - mc_alpha(s)))
        # 3x the typical sup error of this design (RMSE ~ 0.065)
        assert sup_err < 0.40
        report = (est / "fit_report.txt").read_text()
        assert "converged: True" in report
        assert (est / "fixed_effects.csv").exists()
        assert (est / "beta1_hat.csv").exists()

    def test_single_period_is_data_error(self, sim_dir, tmp_path):
        rows = []
        with open(sim_dir / "observations.csv") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r[1] == "0"]
        obs1 = tmp_path / "obs1.csv"
        with open(obs1, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        cov_rows = []
        with open(sim_dir / "covariates.csv") as fh:
            reader = csv.reader(fh)
            cov_header = next(reader)
            cov_rows = [r for r in reader if r[1] == "0"]
        cov1 = tmp_path / "cov1.csv"
        with open(cov1, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cov_header)
            writer.writerows(cov_rows)
        est = tmp_path / "est1"
        est.mkdir()
        code = run(["estimate", "--observations", obs1, "--covariates", cov1,
                    "--weights", sim_dir / "weights.csv", "--out", est])
        assert code == 4

    def test_irregular_observation_times_accepted(self, tmp_path):
        rng = np.random.default_rng(5)
        n, T = 8, 4
        obs = tmp_path / "obs.csv"
        cov = tmp_path / "cov.csv"
        wfile = tmp_path / "w.csv"
        with open(obs, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["unit", "period", "s", "y"])
            for i in range(n):
                for t in range(T):
                    n_pts = rng.integers(5, 12)  # irregular per unit-period
                    pts = np.sort(rng.uniform(0, 1, size=n_pts))
                    for s in pts:
                        writer.writerow([i, t, s, rng.normal()])
        with open(cov, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["unit", "period", "x1"])
            for i in range(n):
                for t in range(T):
                    writer.writerow([i, t, rng.normal()])
        with open(wfile, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "j", "weight"])
            for i in range(n):
                writer.writerow([i, (i + 1) % n, 0.5])
                writer.writerow([i, (i - 1) % n, 0.5])
        est = tmp_path / "est"
        est.mkdir()
        code = run(["estimate", "--observations", obs, "--covariates", cov,
                    "--weights", wfile, "--grid-count", 33, "--moment-points", 6,
                    "--out", est])
        assert code == 0

    def test_schema_error_reports_line(self, tmp_path, capsys):
        obs = tmp_path / "obs.csv"
        obs.write_text("unit,period,s,y\n0,0,0.5,1.0\n0,0,banana,2.0\n")
        cov = tmp_path / "cov.csv"
        cov.write_text("unit,period,x1\n0,0,1.0\n")
        est = tmp_path / "est"
        est.mkdir()
        code = run(["estimate", "--observations", obs, "--covariates", cov,
                    "--weights", obs, "--out", est])
        assert code == 4
        assert ":3:" in capsys.readouterr().err

    def test_coords_weights_path(self, sim_dir, tmp_path):
        # distance-band weights built from station coordinates
        coords = tmp_path / "coords.csv"
        with open(coords, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["unit", "lon", "lat"])
            rng = np.random.default_rng(0)
            for i in range(40):
                writer.writerow([i, rng.uniform(0, 3), rng.uniform(0, 3)])
        est = tmp_path / "est"
        est.mkdir()
        code = run([
            "estimate", "--observations", sim_dir / "observations.csv",
            "--covariates", sim_dir / "covariates.csv",
            "--coords", coords, "--threshold", 1.0, "--out", est,
        ])
        assert code == 0


class TestMonteCarlo:
    def test_preset_table(self, tmp_path):
        out = tmp_path / "mc.csv"
        code = run(["montecarlo", "--preset", "benchmark-table1-row1",
                    "--replications", 2, "--seed", 5, "--out", out])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "n,T,L,Ktilde,r,estimator,target,bias,rmse"
        assert len(lines) == 7  # three estimators x two targets

    def test_unknown_preset(self, tmp_path):
        code = run(["montecarlo", "--preset", "bogus", "--seed", 5])
        assert code == 4

    def test_explicit_design(self, tmp_path):
        out = tmp_path / "mc.csv"
        code = run(["montecarlo", "--n", 16, "--T", 3, "--moment-points", 8,
                    "--r", 1.0, "--estimators", "2sls", "--replications", 2,
                    "--seed", 9, "--out", out])
        assert code == 0
        assert len(out.read_text().splitlines()) == 3


class TestEffects:
    @pytest.fixture()
    def star_files(self, tmp_path):
        wfile = tmp_path / "w.csv"
        n = 5
        with open(wfile, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "j", "weight"])
            for j in range(1, n):
                writer.writerow([0, j, 1.0 / (n - 1)])
                writer.writerow([j, 0, 1.0])
        alpha = tmp_path / "alpha.csv"
        with open(alpha, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s", "value"])
            for s in np.linspace(0, 1, 21):
                writer.writerow([s, 0.4])
        shock = tmp_path / "eta.csv"
        with open(shock, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s", "value"])
            for s in np.linspace(0, 1, 21):
                writer.writerow([s, 1.0])
        return wfile, alpha, shock

    def test_impulse_tables(self, star_files, tmp_path, capsys):
        wfile, alpha, shock = star_files
        out = tmp_path / "eff"
        out.mkdir()
        code = run(["effects", "impulse", "--alpha-file", alpha, "--weights", wfile,
                    "--operator", "point-eval", "--unit", 0, "--shock-file", shock,
                    "--orders", 5, "--grid-count", 33, "--out", out])
        assert code == 0
        with open(out / "impulse_orders.csv") as fh:
            rows = list(csv.DictReader(fh))
        orders = {int(r["order"]) for r in rows}
        assert orders == set(range(6))

    def test_key_player_finds_hub(self, star_files, tmp_path, capsys):
        wfile, alpha, shock = star_files
        code = run(["effects", "keyplayer", "--alpha-file", alpha, "--weights", wfile,
                    "--operator", "point-eval", "--shock-file", shock,
                    "--grid-count", 33])
        assert code == 0
        assert "risk key player: unit 0" in capsys.readouterr().out

    def test_marginal_requires_beta(self, star_files, tmp_path):
        wfile, alpha, shock = star_files
        out = tmp_path / "eff"
        out.mkdir()
        code = run(["effects", "marginal", "--alpha-file", alpha, "--weights", wfile,
                    "--unit", 1, "--grid-count", 33, "--out", out])
        assert code == 4


class TestConfigFile:
    def test_config_supplies_defaults_flags_win(self, tmp_path):
        cfg = tmp_path / "config.json"
        out_a = tmp_path / "a"
        out_a.mkdir()
        cfg.write_text(json.dumps({
            "simulate": {"n": 12, "T": 3, "r": 1.0, "seed": 4, "out": str(out_a),
                         "grid-count": 33}
        }))
        code = run(["--config", cfg, "simulate"])
        assert code == 0
        assert (out_a / "observations.csv").exists()
        # explicit flag beats the config value
        out_b = tmp_path / "b"
        out_b.mkdir()
        code = run(["--config", cfg, "simulate", "--out", out_b, "--seed", 8])
        assert code == 0
        assert (out_b / "observations.csv").exists()
