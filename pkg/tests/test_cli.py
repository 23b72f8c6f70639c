import subprocess
import sys

import numpy as np
import pytest

import tallmat as tm
from tallmat.cli import main, parse_size


def report(text):
    out = {}
    for line in text.splitlines():
        if "=" in line and " " not in line.split("=", 1)[0]:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().out


@pytest.fixture
def blobs(tmp_path, capsys):
    path = tmp_path / "blobs.flmx"
    code, _ = run(capsys, "gen", "blobs", "--n", 3000, "--p", 8, "--k", 3, "--seed", 1, "--out", path,
                  "--part-rows", 1024)
    assert code == 0
    return path


class TestParseSize:
    @pytest.mark.parametrize("text,value", [("256M", 256 << 20), ("64KiB", 64 << 10), ("1g", 1 << 30), ("512", 512)])
    def test_units(self, text, value):
        assert parse_size(text) == value

    def test_bad(self):
        with pytest.raises(Exception):
            parse_size("12 parsecs")


class TestGen:
    def test_deterministic(self, tmp_path, capsys):
        for name in ("a", "b"):
            run(capsys, "gen", "blobs", "--n", 500, "--p", 4, "--seed", 7, "--out", tmp_path / f"{name}.flmx")
        assert (tmp_path / "a.flmx").read_bytes() == (tmp_path / "b.flmx").read_bytes()
        assert (tmp_path / "a.labels.flmx").read_bytes() == (tmp_path / "b.labels.flmx").read_bytes()

    def test_blob_separation(self, tmp_path, capsys):
        run(capsys, "gen", "blobs", "--n", 2000, "--p", 2, "--k", 4, "--sep", 10, "--out", tmp_path / "b.flmx")
        with tm.Engine(workers=1).activate():
            X = tm.to_local(tm.load_native(str(tmp_path / "b.flmx")))
            y = tm.to_local(tm.load_native(str(tmp_path / "b.labels.flmx"))).ravel()
        means = np.array([X[y == c].mean(axis=0) for c in range(4)])
        gaps = np.linalg.norm(means[:, None] - means[None], axis=2)[np.triu_indices(4, 1)]
        assert gaps.min() >= 9.9

    def test_graph_edges(self, tmp_path, capsys):
        code, out = run(capsys, "gen", "graph", "--n", 1000, "--degree", 8, "--out", tmp_path / "g.txt")
        edges = int(report(out)["edges"])
        assert code == 0 and 7900 <= edges <= 8000
        assert len((tmp_path / "g.txt").read_text().splitlines()) == edges

    def test_normal_shape(self, tmp_path, capsys):
        _, out = run(capsys, "gen", "normal", "--n", 100, "--p", 40, "--out", tmp_path / "c.flmx")
        assert report(out)["p"] == "40"


class TestRun:
    def test_kmeans_with_labels(self, blobs, capsys):
        labels = str(blobs).replace(".flmx", ".labels.flmx")
        code, out = run(capsys, "run", "kmeans", "--input", blobs, "--labels", labels, "--k", 3,
                        "--backing", "file", "--part-rows", 1024, "--workers", 2)
        rep = report(out)
        assert code == 0
        assert rep["moved_last"] == "0" and rep["converged"] == "1"
        assert float(rep["ari"]) >= 0.99
        for key in ("workers", "backing", "mem_budget", "io_batch", "wall_seconds", "bytes_read", "peak_pool_bytes"):
            assert key in rep

    def test_pagerank_cycle(self, tmp_path, capsys):
        g = tmp_path / "cycle.txt"
        g.write_text("0 1\n1 2\n2 0\n")
        code, out = run(capsys, "run", "pagerank", "--input", g)
        assert code == 0
        pr = [float(v) for v in report(out)["pr"].split(",")]
        np.testing.assert_allclose(pr, [1 / 3] * 3, atol=1e-12)

    def test_correlation_reads_once(self, tmp_path, capsys):
        path = tmp_path / "u.flmx"
        run(capsys, "gen", "uniform", "--n", 20000, "--p", 4, "--out", path, "--part-rows", 4096)
        code, out = run(capsys, "run", "correlation", "--input", path, "--backing", "file")
        rep = report(out)
        assert code == 0 and int(rep["bytes_read"]) == 20000 * 4 * 8

    def test_not_converged_exit(self, blobs, capsys):
        code, out = run(capsys, "run", "kmeans", "--input", blobs, "--k", 3, "--max-iters", 1)
        assert code == 1 and report(out)["status"] == "not_converged"

    def test_result_file(self, blobs, tmp_path, capsys):
        out_path = tmp_path / "pca.csv"
        code, out = run(capsys, "run", "pca", "--input", blobs, "--k", 2, "--out", out_path)
        assert code == 0 and out_path.exists()
        assert len(report(out)["eigenvalues"].split(",")) == 2

    @pytest.mark.parametrize("algo", ["logistic", "naive-bayes", "lda"])
    def test_supervised(self, tmp_path, capsys, algo):
        path = tmp_path / "l.flmx"
        run(capsys, "gen", "logistic2d", "--n", 400, "--out", path)
        code, out = run(capsys, "run", algo, "--input", path, "--labels", str(path).replace(".flmx", ".labels.flmx"),
                        "--max-iters", 5000)
        assert code == 0
        assert float(report(out)["accuracy"]) >= 0.99

    def test_mvrnorm(self, capsys):
        code, out = run(capsys, "run", "mvrnorm", "--n", 50000, "--p", 2, "--sigma-diag", "4,1", "--seed", 3)
        assert code == 0 and float(report(out)["cov_rel_err"]) < 0.05

    def test_missing_labels(self, blobs, capsys):
        code, out = run(capsys, "run", "lda", "--input", blobs)
        assert code == 2 and report(out)["category"] == "invalid_argument"

    def test_engine_error_category(self, tmp_path, capsys):
        bad = tmp_path / "bad.flmx"
        bad.write_bytes(b"JUNK" + bytes(64))
        code, out = run(capsys, "run", "correlation", "--input", bad)
        rep = report(out)
        assert code == 2 and rep["status"] == "error" and rep["category"] == "format"

    def test_missing_file(self, tmp_path, capsys):
        code, out = run(capsys, "run", "pagerank", "--input", tmp_path / "none.txt")
        assert code == 2 and report(out)["category"] == "io"


class TestBench:
    def test_correlation_modes(self, tmp_path, capsys):
        path = tmp_path / "u.flmx"
        run(capsys, "gen", "uniform", "--n", 20000, "--p", 4, "--out", path, "--part-rows", 4096)
        code, out = run(capsys, "bench", "correlation", "--input", path, "--part-rows", 4096)
        assert code == 0
        rep = report(out)
        assert rep["results_equal"] == "1" and "workers" in rep
        lines = out.splitlines()
        head = lines.index("mode seconds bytes_read bytes_written peak_pool_bytes")
        table = {r.split()[0]: [float(x) for x in r.split()[1:]] for r in lines[head + 1:head + 5]}
        assert set(table) == {"fused/memory", "fused/file", "unfused/memory", "unfused/file"}
        assert table["unfused/file"][1] >= 2 * table["fused/file"][1]


class TestDag:
    def test_kmeans_iter(self, capsys):
        _, out = run(capsys, "dag", "kmeans-iter")
        assert "inner_prod" in out and "groupby_row" in out

    def test_corr_single_root(self, capsys):
        _, out = run(capsys, "dag", "corr")
        assert out.count("rnorm_matrix") == 1

    def test_byte_stable(self):
        outs = [subprocess.run([sys.executable, "-m", "tallmat", "dag", "logreg-iter"], capture_output=True,
                               check=True).stdout for _ in range(2)]
        assert outs[0] == outs[1] and b"sigmoid" in outs[0]


class TestConvert:
    def test_round_trip(self, tmp_path, capsys):
        a = np.random.default_rng(0).normal(size=(50, 3))
        np.savetxt(tmp_path / "a.csv", a, delimiter=",", fmt="%.17g")
        assert run(capsys, "convert", tmp_path / "a.csv", tmp_path / "a.flmx")[0] == 0
        _, out = run(capsys, "convert", tmp_path / "a.flmx", tmp_path / "b.csv")
        assert report(out)["nrow"] == "50"
        np.testing.assert_array_equal(np.loadtxt(tmp_path / "b.csv", delimiter=","), a)
