import json

import numpy as np
import pytest

from gpshape.cli import main
from gpshape.io import load_model, load_ply, load_xyz
from gpshape.meshes import icosphere


def write_obj(mesh, path):
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.faces:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A sampled sphere with a trained K=1 model, shared across CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    write_obj(icosphere(3), root / "sphere.obj")
    (root / "fast.cfg").write_text("max_iters = 40\nqueries = 1500\n")
    assert (
        main(
            [
                "sample",
                "--mesh", str(root / "sphere.obj"),
                "--out", str(root / "data"),
                "--cameras", "12",
                "--rays", "400",
                "--train-size", "300",
                "--test-size", "800",
                "--seed", "0",
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "train",
                "--input", str(root / "data" / "train.xyz"),
                "--out", str(root / "model.bin"),
                "--config", str(root / "fast.cfg"),
                "--k", "1",
                "--kernel", "rq",
                "--seed", "0",
                "--normalization", str(root / "data" / "normalization.txt"),
            ]
        )
        == 0
    )
    return root


class TestSample:
    def test_outputs_exist_with_requested_sizes(self, workspace):
        data = workspace / "data"
        assert len(load_xyz(data / "train.xyz")) == 300
        assert len(load_xyz(data / "test.xyz")) == 800
        assert (data / "dense.xyz").exists()
        assert (data / "normalization.txt").exists()

    def test_train_test_disjoint(self, workspace):
        data = workspace / "data"
        train = {tuple(p) for p in load_xyz(data / "train.xyz")}
        test = load_xyz(data / "test.xyz")
        assert not any(tuple(p) in train for p in test)

    def test_same_seed_reproduces_files(self, workspace, tmp_path):
        assert (
            main(
                [
                    "sample",
                    "--mesh", str(workspace / "sphere.obj"),
                    "--out", str(tmp_path / "again"),
                    "--cameras", "12",
                    "--rays", "400",
                    "--train-size", "300",
                    "--test-size", "800",
                    "--seed", "0",
                ]
            )
            == 0
        )
        original = (workspace / "data" / "train.xyz").read_bytes()
        assert (tmp_path / "again" / "train.xyz").read_bytes() == original

    def test_budget_too_large_is_domain_error(self, workspace, tmp_path):
        code = main(
            [
                "sample",
                "--mesh", str(workspace / "sphere.obj"),
                "--out", str(tmp_path / "big"),
                "--cameras", "4",
                "--rays", "50",
                "--train-size", "10000",
                "--test-size", "30000",
            ]
        )
        assert code == 1

    def test_missing_mesh_is_file_error(self, tmp_path):
        code = main(
            ["sample", "--mesh", str(tmp_path / "no.obj"), "--out", str(tmp_path / "o")]
        )
        assert code == 2


class TestTrain:
    def test_model_loads_and_predicts_radius_one(self, workspace):
        model = load_model(workspace / "model.bin")
        assert model.n_clusters == 1
        dirs = np.array([[np.pi / 2, 0.0], [np.pi / 3, 2.0]])
        mean, _ = model.regressors[0].predict_batch(dirs)
        center = np.asarray(model.refs.centers[0])
        assert np.max(np.abs(mean - 1.0)) < 0.1 + np.linalg.norm(center)

    def test_normalization_sidecar_stored(self, workspace):
        model = load_model(workspace / "model.bin")
        assert model.normalization.scale > 0

    def test_same_seed_byte_identical_model(self, workspace, tmp_path):
        assert (
            main(
                [
                    "train",
                    "--input", str(workspace / "data" / "train.xyz"),
                    "--out", str(tmp_path / "model2.bin"),
                    "--config", str(workspace / "fast.cfg"),
                    "--k", "1",
                    "--kernel", "rq",
                    "--seed", "0",
                    "--normalization", str(workspace / "data" / "normalization.txt"),
                ]
            )
            == 0
        )
        assert (tmp_path / "model2.bin").read_bytes() == (
            workspace / "model.bin"
        ).read_bytes()

    def test_does_not_mutate_input(self, workspace, tmp_path):
        before = (workspace / "data" / "train.xyz").read_bytes()
        main(
            [
                "train",
                "--input", str(workspace / "data" / "train.xyz"),
                "--out", str(tmp_path / "m.bin"),
                "--config", str(workspace / "fast.cfg"),
                "--k", "1",
            ]
        )
        assert (workspace / "data" / "train.xyz").read_bytes() == before

    def test_empty_cluster_names_cluster_and_exits_1(self, workspace, tmp_path, capsys):
        centers = tmp_path / "centers.xyz"
        centers.write_text("0 0 0\n9 9 9\n")
        code = main(
            [
                "train",
                "--input", str(workspace / "data" / "train.xyz"),
                "--out", str(tmp_path / "m.bin"),
                "--centers", str(centers),
            ]
        )
        assert code == 1
        assert "cluster 1" in capsys.readouterr().err

    def test_missing_input_exits_2(self, tmp_path):
        code = main(
            ["train", "--input", str(tmp_path / "no.xyz"), "--out", str(tmp_path / "m.bin")]
        )
        assert code == 2

    def test_bad_config_key_exits_2(self, workspace, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("warp_speed = 9\n")
        code = main(
            [
                "train",
                "--input", str(workspace / "data" / "train.xyz"),
                "--out", str(tmp_path / "m.bin"),
                "--config", str(cfg),
            ]
        )
        assert code == 2


class TestEval:
    def test_report_and_heatmap(self, workspace, tmp_path, capsys):
        code = main(
            [
                "eval",
                "--model", str(workspace / "model.bin"),
                "--test", str(workspace / "data" / "test.xyz"),
                "--report", str(tmp_path / "report.json"),
                "--heatmap", str(tmp_path / "heat.ply"),
                "--queries", "1500",
                "--seed", "0",
            ]
        )
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert "chamfer_x1e3" in report
        assert report["chamfer_x1e3"] == pytest.approx(report["chamfer"] * 1e3)
        assert report["tau"] == 0.01
        # stdout carries the same single-line JSON
        assert json.loads(capsys.readouterr().out.strip()) == report
        heat = load_ply(tmp_path / "heat.ply")
        assert len(heat) == 800

    def test_rerun_identical_report(self, workspace, tmp_path):
        argv = [
            "eval",
            "--model", str(workspace / "model.bin"),
            "--test", str(workspace / "data" / "test.xyz"),
            "--queries", "1000",
            "--seed", "3",
        ]
        assert main(argv + ["--report", str(tmp_path / "a.json")]) == 0
        assert main(argv + ["--report", str(tmp_path / "b.json")]) == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_missing_model_exits_2(self, workspace, tmp_path):
        code = main(
            [
                "eval",
                "--model", str(tmp_path / "no.bin"),
                "--test", str(workspace / "data" / "test.xyz"),
            ]
        )
        assert code == 2


class TestReconstruct:
    def test_xyz_output(self, workspace, tmp_path):
        out = tmp_path / "recon.xyz"
        assert (
            main(
                [
                    "reconstruct",
                    "--model", str(workspace / "model.bin"),
                    "--out", str(out),
                    "--queries", "400",
                ]
            )
            == 0
        )
        pts = load_xyz(out)
        assert len(pts) == 400
        norms = np.linalg.norm(pts, axis=1)
        assert norms.min() > 0.9 and norms.max() < 1.1

    def test_ply_output_and_denormalize(self, workspace, tmp_path):
        out = tmp_path / "recon.ply"
        assert (
            main(
                [
                    "reconstruct",
                    "--model", str(workspace / "model.bin"),
                    "--out", str(out),
                    "--queries", "200",
                    "--denormalize",
                ]
            )
            == 0
        )
        assert len(load_ply(out)) == 200


class TestLikelihood:
    def test_file_output(self, workspace, tmp_path):
        out = tmp_path / "lik.txt"
        assert (
            main(
                [
                    "likelihood",
                    "--model", str(workspace / "model.bin"),
                    "--input", str(workspace / "data" / "train.xyz"),
                    "--out", str(out),
                ]
            )
            == 0
        )
        values = [float(line) for line in out.read_text().splitlines()]
        assert len(values) == 300
        assert all(v >= 0 for v in values)

    def test_stdout_output(self, workspace, capsys):
        assert (
            main(
                [
                    "likelihood",
                    "--model", str(workspace / "model.bin"),
                    "--input", str(workspace / "data" / "train.xyz"),
                ]
            )
            == 0
        )
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 300


class TestCluster:
    def test_writes_k_centers(self, workspace, tmp_path):
        out = tmp_path / "centers.xyz"
        assert (
            main(
                [
                    "cluster",
                    "--input", str(workspace / "data" / "train.xyz"),
                    "--out", str(out),
                    "--k", "3",
                    "--seed", "0",
                ]
            )
            == 0
        )
        assert len(load_xyz(out)) == 3

    def test_em_method_works(self, workspace, tmp_path):
        out = tmp_path / "c.xyz"
        code = main(
            [
                "cluster",
                "--input", str(workspace / "data" / "train.xyz"),
                "--out", str(out),
                "--k", "2",
                "--method", "em",
                "--seed", "0",
            ]
        )
        assert code == 0
        assert len(load_xyz(out)) == 2

    def test_em_needs_enough_points(self, workspace, tmp_path):
        code = main(
            [
                "cluster",
                "--input", str(workspace / "data" / "train.xyz"),
                "--out", str(tmp_path / "c.xyz"),
                "--k", "100",
                "--method", "em",
            ]
        )
        assert code == 1  # 300 points cannot support 100 covariance estimates


class TestAblateK:
    def test_row_per_k_with_failures_marked(self, workspace, tmp_path):
        out = tmp_path / "ablate.csv"
        code = main(
            [
                "ablate-k",
                "--train", str(workspace / "data" / "train.xyz"),
                "--test", str(workspace / "data" / "test.xyz"),
                "--k-list", "1,2,40000",
                "--config", str(workspace / "fast.cfg"),
                "--seed", "0",
                "--out", str(out),
            ]
        )
        assert code == 0
        rows = out.read_text().strip().splitlines()
        assert rows[0] == "k,chamfer,precision,recall,fscore,train_seconds,status"
        assert len(rows) == 4
        assert rows[1].startswith("1,") and rows[1].endswith(",ok")
        assert rows[2].startswith("2,") and rows[2].endswith(",ok")
        assert rows[3] == "40000,,,,,,error"

    def test_deterministic_modulo_timing(self, workspace, tmp_path):
        argv = [
            "ablate-k",
            "--train", str(workspace / "data" / "train.xyz"),
            "--test", str(workspace / "data" / "test.xyz"),
            "--k-list", "1,2",
            "--config", str(workspace / "fast.cfg"),
            "--seed", "1",
        ]
        assert main(argv + ["--out", str(tmp_path / "a.csv")]) == 0
        assert main(argv + ["--out", str(tmp_path / "b.csv")]) == 0

        def strip_timing(path):
            rows = [line.split(",") for line in path.read_text().splitlines()]
            return [row[:5] + row[6:] for row in rows]

        assert strip_timing(tmp_path / "a.csv") == strip_timing(tmp_path / "b.csv")


class TestAblateKernel:
    def test_defaults_to_all_six_kinds(self, workspace, tmp_path):
        out = tmp_path / "kernels.csv"
        code = main(
            [
                "ablate-kernel",
                "--train", str(workspace / "data" / "train.xyz"),
                "--test", str(workspace / "data" / "test.xyz"),
                "--k", "2",
                "--config", str(workspace / "fast.cfg"),
                "--seed", "0",
                "--out", str(out),
            ]
        )
        assert code == 0
        rows = out.read_text().strip().splitlines()
        assert len(rows) == 7
        kinds = [row.split(",")[0] for row in rows[1:]]
        assert kinds == ["rq", "rbf", "matern", "periodic", "linear", "polynomial"]
        assert all(row.endswith(",ok") for row in rows[1:])


class TestInspect:
    def test_reports_cluster_count(self, workspace, tmp_path, capsys):
        model_path = tmp_path / "k3.bin"
        assert (
            main(
                [
                    "train",
                    "--input", str(workspace / "data" / "train.xyz"),
                    "--out", str(model_path),
                    "--config", str(workspace / "fast.cfg"),
                    "--k", "3",
                    "--seed", "0",
                ]
            )
            == 0
        )
        capsys.readouterr()
        assert main(["inspect", "--model", str(model_path)]) == 0
        out = capsys.readouterr().out
        assert "clusters: 3" in out
        assert out.count("cluster ") == 3

    def test_missing_model_exits_2(self, tmp_path):
        assert main(["inspect", "--model", str(tmp_path / "no.bin")]) == 2


class TestUsageErrors:
    def test_unknown_command_exits_2(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["frobnicate"])
        assert excinfo.value.code == 2

    def test_missing_required_flag_exits_2(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["inspect"])
        assert excinfo.value.code == 2
