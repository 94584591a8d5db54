import json
import shutil

import numpy as np
import pytest
from scipy.stats import qmc

from glidermdo import cli, evaluation

TINY = """
[run]
seed = 1
[sizing]
particles = 8
iterations = 15
local_iterations = 10
[reduction]
ensemble_size = 64
[optimizer]
n_lf = 16
n_hf = 8
max_iterations = 2
scan = 512
mc_samples = 256
k_max = 3
[surrogate]
n_eps = 4
"""


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.toml"
    path.write_text(TINY)
    return path


@pytest.fixture(scope="module")
def pipeline(tiny_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    codes = {}
    for stage in ("sample", "reduce", "train", "optimize", "report"):
        codes[stage] = cli.main([stage, "--config", str(tiny_config), "--out", str(out)])
    return out, codes


def run(cfg, out, *args):
    return cli.main([args[0], "--config", str(cfg), "--out", str(out), *args[1:]])


class TestPipeline:
    def test_all_stages_succeed(self, pipeline):
        _, codes = pipeline
        assert codes == dict.fromkeys(codes, 0)

    def test_artifacts_written(self, pipeline):
        out, _ = pipeline
        for name in (
            "ensemble.csv", "sample_failures.csv", "embedding.json", "retention.csv", "training.csv",
            "surrogates.json", "surrogates_final.json", "optimize_report.json", "archive.csv",
            "hv_history.csv", "budget.csv", "pareto_iter_1.csv", "polar_overlay.csv", "retention_curve.csv",
        ):
            assert (out / name).is_file(), name

    def test_tables_carry_config_hash(self, pipeline):
        out, _ = pipeline
        for name in ("ensemble.csv", "training.csv", "archive.csv", "hv_history.csv", "budget.csv"):
            first = (out / name).read_text().splitlines()[0]
            assert first.startswith("# ") and "config_hash" in json.loads(first[2:])

    def test_report_rows_match_archive(self, pipeline):
        out, _ = pipeline
        _, rows, _ = cli.read_table(out / "archive.csv")
        for t in sorted({int(r[0]) for r in rows}):
            _, front, _ = cli.read_table(out / f"front_iter_{t}.csv")
            assert len(front) == sum(int(r[0]) == t for r in rows)
        report = json.loads((out / "optimize_report.json").read_text())
        for t in range(1, report["iterations"] + 1):
            src = out / f"pareto_iter_{t}.csv"
            if src.is_file():
                assert len(cli.read_table(out / f"ellipses_iter_{t}.csv")[1]) == len(cli.read_table(src)[1])

    def test_ellipse_axes_copy_sigmas(self, pipeline):
        out, _ = pipeline
        h, rows, _ = cli.read_table(out / "pareto_iter_1.csv")
        _, ell, _ = cli.read_table(out / "ellipses_iter_1.csv")
        col = {k: i for i, k in enumerate(h)}
        assert [[r[col["sigma1"]], r[col["sigma2"]]] for r in rows] == [e[2:4] for e in ell]

    def test_report_contents(self, pipeline):
        out, _ = pipeline
        report = json.loads((out / "optimize_report.json").read_text())
        hv = report["hypervolume_history"]
        assert np.all(np.diff(hv) >= 0)
        assert report["evaluations"]["lf"] >= report["evaluations"]["hf"]
        assert report["final_max_normalized_uncertainty"] >= 0
        assert len(report["final_front_designs"]) == len(report["final_front"]["f"])

    def test_sample_is_deterministic(self, pipeline, tiny_config, tmp_path):
        out, _ = pipeline
        assert run(tiny_config, tmp_path, "sample") == 0
        assert (tmp_path / "ensemble.csv").read_bytes() == (out / "ensemble.csv").read_bytes()

    def test_stale_hash_rejected(self, pipeline, tiny_config, tmp_path):
        out, _ = pipeline
        shutil.copy(out / "ensemble.csv", tmp_path / "ensemble.csv")
        shutil.copy(out / "embedding.json", tmp_path / "embedding.json")
        assert cli.main(["reduce", "--config", str(tiny_config), "--out", str(tmp_path), "--seed", "2"]) == 2
        changed = tmp_path / "eta.toml"
        changed.write_text(TINY.replace("[reduction]\n", "[reduction]\neta = 0.9\n"))
        assert run(changed, tmp_path, "train") == 2
        # a stage that does not read eta still accepts the ensemble
        assert run(changed, tmp_path, "reduce") == 0

    def test_predict(self, pipeline, tiny_config, tmp_path):
        out, _ = pipeline
        n_x = len(json.loads((out / "surrogates_final.json").read_text())["bounds"])
        pts = tmp_path / "pts.csv"
        pts.write_text(",".join(f"x{j}" for j in range(n_x)) + "\n" + ",".join(["0.0"] * n_x) + "\n")
        assert cli.main(["predict", "--config", str(tiny_config), "--out", str(out), "--input", str(pts)]) == 0
        header, rows, _ = cli.read_table(out / "predictions.csv")
        assert header[-4:] == ["f1", "U1", "f2", "U2"] and len(rows) == 1

    def test_predict_wrong_width(self, pipeline, tiny_config, tmp_path):
        out, _ = pipeline
        pts = tmp_path / "pts.csv"
        pts.write_text("x0\n0.0\n")
        assert cli.main(["predict", "--config", str(tiny_config), "--out", str(out), "--input", str(pts)]) == 2


def test_polar_writes_both_fidelities(tiny_config, tmp_path):
    assert run(tiny_config, tmp_path, "polar") == 0
    for fid in (1, 2):
        header, rows, meta = cli.read_table(tmp_path / f"polar_fidelity{fid}.csv")
        assert header == ["aoa_deg", "lift_N", "drag_N"] and len(rows) == 15
        assert meta["fidelity"] == fid


def test_size_baseline(tiny_config, tmp_path):
    assert run(tiny_config, tmp_path, "size", "--trace") == 0
    result = json.loads((tmp_path / "sizing.json").read_text())
    assert result["feasible"] and result["W_empty_star"] > 0
    assert "trace" in result


def test_size_rejects_short_design(tiny_config, tmp_path):
    design = tmp_path / "d.json"
    design.write_text("[0.1, 0.2]")
    assert run(tiny_config, tmp_path, "size", "--design", str(design)) == 2


def test_missing_upstream_artifact(tiny_config, tmp_path):
    assert run(tiny_config, tmp_path, "reduce") == 2
    assert run(tiny_config, tmp_path, "optimize") == 2


def test_bad_config(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[reduction]\neta = 2.0\n")
    assert cli.main(["polar", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_bad_thread_count(tiny_config, tmp_path):
    assert run(tiny_config, tmp_path, "polar", "--threads", "0") == 2


def test_sobol_ensemble_dyadic_balance(space):
    # 64 scrambled Sobol points put exactly 8 in each of the 8 equal bins per coordinate
    z = qmc.Sobol(len(space.names), scramble=True, seed=1).random_base2(6)
    U = space.from_unit(z)
    for j in range(U.shape[1]):
        width = space.upper[j] - space.lower[j]
        if width == 0:
            continue
        bins = np.floor((U[:, j] - space.lower[j]) / width * 8).astype(int)
        assert np.bincount(np.minimum(bins, 7), minlength=8).tolist() == [8] * 8


def test_ensemble_uses_sobol_design(evaluator, space):
    ens = evaluation.sample_ensemble(evaluator, space, 4, seed=1, threads=1)
    expected = space.from_unit(qmc.Sobol(len(space.names), scramble=True, seed=1).random_base2(2))
    np.testing.assert_allclose(ens.U, expected[ens.index], rtol=1e-12)
