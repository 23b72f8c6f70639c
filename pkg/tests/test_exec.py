import gc

import numpy as np
import pytest
from hypothesis import given, strategies as st

import tallmat as tm
from conftest import small_engine
from tallmat import kernels
from tallmat.dag import build_dag
from tallmat.errors import KernelError, LabelError, RegistryError
from tallmat.exec import Scheduler, Task, pipe_slice, schedule_next


class TestScheduler:
    def test_batches_then_stragglers(self):
        tasks = list(Scheduler(64, workers=4, io_batch=8))
        assert tasks[0] == Task(0, 8)
        assert [t.count for t in tasks[:4]] == [8, 8, 8, 8]
        assert tasks[-1].count == 1
        # 32 partitions left at the switch point, all handed out singly
        assert [t.count for t in tasks[4:]] == [1] * 32

    def test_fewer_partitions_than_workers(self):
        assert list(Scheduler(3, workers=4, io_batch=8)) == [Task(0, 1), Task(1, 1), Task(2, 1)]

    def test_empty_signal(self):
        s = Scheduler(1, 1, 1)
        assert schedule_next(s) == Task(0, 1)
        assert schedule_next(s) is None

    @given(st.integers(1, 500), st.integers(1, 16), st.integers(1, 64))
    def test_exact_cover_ascending(self, nparts, workers, io_batch):
        tasks = list(Scheduler(nparts, workers, io_batch))
        starts = [t.first for t in tasks]
        assert starts == sorted(starts)
        covered = [i for t in tasks for i in range(t.first, t.stop)]
        assert covered == list(range(nparts))
        for t in tasks:
            assert t.count in (1, io_batch)


def _corr_outputs(eng):
    with eng.activate():
        X = tm.rnorm_matrix(3000, 6, seed=11)
        s, G = tm.col_sums(X), tm.crossprod(X)
        tm.materialize(s, G)
        out = tm.to_local(s), tm.to_local(G)
    eng.close()
    return out


class TestRun:
    @pytest.mark.parametrize("workers", [2, 4, 8])
    def test_worker_count_invariance(self, tmp_path, workers):
        ref = _corr_outputs(small_engine(workers=1, part_rows=64, tmpdir=str(tmp_path)))
        got = _corr_outputs(small_engine(workers=workers, part_rows=64, tmpdir=str(tmp_path)))
        for a, b in zip(ref, got):
            assert a.tobytes() == b.tobytes()

    def test_file_backed_invariance(self, tmp_path):
        a = np.random.default_rng(0).normal(size=(3000, 6))
        outs = []
        for w in (1, 3):
            eng = small_engine(workers=w, part_rows=64, backing="file", tmpdir=str(tmp_path))
            with eng.activate():
                X = tm.from_local(a)
                eng.io.reset()
                G = tm.crossprod(X)
                outs.append(tm.to_local(G))
                assert eng.io.read_of(X.store.name) == a.nbytes
            eng.close()
        assert outs[0].tobytes() == outs[1].tobytes()
        np.testing.assert_allclose(outs[0], a.T @ a, rtol=1e-12)

    def test_one_worker_equals_eager(self, tmp_path):
        a = np.random.default_rng(1).normal(size=(500, 3))
        res = []
        for fused in (True, False):
            eng = small_engine(workers=1, fused=fused, tmpdir=str(tmp_path))
            with eng.activate():
                Y = tm.sapply(tm.mapply_row(tm.from_local(a), [1.0, 2.0, 3.0], "*"), "exp")
                res.append(tm.to_local(tm.agg_col(Y, "+")))
            eng.close()
        assert res[0].tobytes() == res[1].tobytes()

    def test_every_partition_once(self, engine):
        X = tm.from_local(np.ones((1000, 2)))
        tm.materialize(tm.agg(X, "+"))
        run = engine.last_run
        assert run.nparts == 63
        assert sum(run.parts_per_worker.values()) == 63
        # 16-row partitions walked in 8-row slices; the 8-row tail partition is one slice
        assert run.slices == 62 * 2 + 1

    def test_slice_rows_map_to_global_rows(self, engine):
        v = tm.seq_int(0, 999)
        assert tm.agg(v, "which.max").item() == 999
        np.testing.assert_array_equal(tm.to_local(tm.sapply(v, "identity")).ravel(), np.arange(1000))

    def test_pipe_slice_diamond_and_rows(self, engine):
        X = tm.from_local(np.arange(64.0).reshape(32, 2))
        A = tm.sapply(X, "abs")
        B = tm.mapply(tm.sapply(A, "sqrt"), tm.sapply(A, "neg"), "+")
        dag = build_dag([B.node])
        rows = np.arange(40.0, 48.0).reshape(4, 2)
        env = pipe_slice(dag, {X.node.id: rows}, 20, 24, {})
        np.testing.assert_array_equal(env[B.node.id], np.sqrt(rows) - rows)
        assert env[A.node.id].shape == (4, 2)

    def test_kernel_error_carries_rows(self, engine):
        labels = tm.from_local(np.r_[np.zeros(40), np.full(10, 7)].astype(np.int64))
        bad = tm.groupby_row(np.ones((50, 2)), labels, "+", 3)
        with pytest.raises(LabelError) as exc:
            tm.materialize(bad)
        assert exc.value.rows[0] >= 32

    def test_non_engine_error_wrapped(self, engine, monkeypatch):
        def boom(*args):
            raise ZeroDivisionError("boom")

        monkeypatch.setitem(kernels._ELEMENTWISE, "sapply", boom)
        Y = tm.sapply(tm.from_local(np.ones((20, 2))), "neg")
        with pytest.raises(KernelError, match="boom") as exc:
            tm.materialize(Y)
        assert exc.value.node_id == Y.node.id
        assert exc.value.rows == (0, 8)

    def test_engine_error_gets_node_id(self, engine):
        Y = tm.sapply(tm.from_local(np.ones((20, 2))), "neg")
        Y.node.fns = ("no-such-fn",)
        with pytest.raises(RegistryError) as exc:
            tm.materialize(Y)
        assert exc.value.node_id == Y.node.id

    def test_scratch_returns_to_pool(self, engine):
        X = tm.from_local(np.ones((500, 3)))
        live = engine.pool.live_count
        in_use = engine.pool.in_use_bytes
        tm.materialize(tm.agg_col(tm.sapply(X, "exp"), "+"))
        gc.collect()
        assert engine.pool.live_count == live
        assert engine.pool.in_use_bytes == in_use

    def test_file_reads_return_to_pool(self, file_engine):
        X = tm.from_local(np.ones((500, 3)))
        tm.materialize(tm.agg_col(X, "+"))
        gc.collect()
        assert file_engine.pool.in_use_bytes == 0
