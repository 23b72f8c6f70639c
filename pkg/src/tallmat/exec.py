"""Parallel DAG materialization with two-level partitioning.

I/O partitions are handed out by a :class:`Scheduler` in ascending order.  A
worker reads its partitions of every physical input in one request per input,
then walks each partition in fixed-height cache slices, evaluating the DAG's
nodes in topological order on the slice.  Sink nodes fold each slice into a
per-partition partial; the control thread merges partials in partition order,
which keeps floating-point results identical for any worker count.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import EngineError, KernelError
from .storage import MatrixMeta, create_tas


@dataclass(frozen=True)
class Task:
    first: int
    count: int

    @property
    def stop(self) -> int:
        return self.first + self.count


class Scheduler:
    """Hands out contiguous ascending partition ranges.

    Ranges hold ``io_batch`` partitions while more than ``workers * io_batch``
    remain, then single partitions so the tail spreads across workers.
    """

    def __init__(self, nparts: int, workers: int, io_batch: int):
        self.nparts = nparts
        self.workers = max(1, workers)
        self.io_batch = max(1, io_batch)
        self._next = 0
        self._lock = threading.Lock()
        self.issued: list[Task] = []

    def schedule_next(self) -> Task | None:
        with self._lock:
            remaining = self.nparts - self._next
            if remaining <= 0:
                return None
            count = self.io_batch if remaining > self.workers * self.io_batch else 1
            task = Task(self._next, count)
            self._next += count
            self.issued.append(task)
            return task

    def __iter__(self):
        while (task := self.schedule_next()) is not None:
            yield task


def schedule_next(scheduler: Scheduler) -> Task | None:
    return scheduler.schedule_next()


@dataclass
class RunStats:
    nparts: int = 0
    part_rows: int = 0
    slice_rows: int = 0
    io_batch: int = 0
    tasks: int = 0
    slices: int = 0
    parts_per_worker: dict = field(default_factory=dict)
    seconds: float = 0.0


def _source_slice(store, buf, s0, s1):
    pr = store.part_rows
    pieces = []
    r = s0
    while r < s1:
        pi = r // pr
        arr = buf.parts[pi - buf.first]
        lo = r - pi * pr
        hi = min(s1 - pi * pr, arr.shape[0])
        pieces.append(arr[lo:hi])
        r = pi * pr + hi
    out = pieces[0] if len(pieces) == 1 else np.concatenate(pieces, axis=0)
    return np.ascontiguousarray(out)


def pipe_slice(dag, sources: dict, s0: int, s1: int, partials: dict) -> dict:
    """Evaluate every node of ``dag`` on rows ``[s0, s1)``.

    ``sources`` maps physical node ids to their slice arrays.  Sink partials
    fold into ``partials`` (keyed by node id); the returned dict maps node ids
    to the slice of every element-wise node.
    """
    env = dict(sources)
    for n in dag.order:
        try:
            ins = [env[i.id] for i in n.inputs]
            bvals = n.state.get("_bvals", ())
            if n.sink:
                part = kernels.sink_slice(n, ins, bvals, s0, s1)
                cur = partials.get(n.id)
                partials[n.id] = part if cur is None else kernels.merge(n, cur, part)
            else:
                env[n.id] = kernels.eval_slice(n, ins, bvals, s0, s1)
        except EngineError as e:
            if getattr(e, "node_id", None) is None:
                e.node_id, e.rows = n.id, (s0, s1)
            raise
        except Exception as e:
            raise KernelError(f"node #{n.id} {n.op} failed on rows [{s0}, {s1}): {e}", n.id, (s0, s1)) from e
    return env


def _resolve_bcast(dag, engine):
    from .dag import Matrix, to_local

    for n in dag.order:
        vals = []
        for b in n.bcast:
            arr = to_local(b, engine=engine) if isinstance(b, Matrix) else np.asarray(b)
            vals.append(np.ascontiguousarray(arr))
        n.state["_bvals"] = tuple(vals)


def run_dag(dag, engine) -> RunStats:
    """Materialize ``dag``: fill sink results and write out output nodes."""
    t0 = time.perf_counter()
    cfg = engine.config
    stores = {s.id: s.physical_store(engine) for s in dag.sources}
    part_rows = max([st.part_rows for st in stores.values()], default=cfg.part_rows)
    P = dag.nrows
    nparts = -(-P // part_rows)
    slice_rows = min(engine.slice_rows, part_rows)
    _resolve_bcast(dag, engine)

    file_bytes = sum(part_rows * st.ncol * st.meta.elem_size for st in stores.values() if st.backing == "file")
    if not file_bytes:
        widest = max([n.shape[1] for n in dag.order if not n.sink] + [1])
        file_bytes = part_rows * widest * 8
    io_batch = max(1, cfg.io_batch_bytes // file_bytes)

    outputs = {}
    for n in dag.outputs:
        where = n.cache or cfg.backing
        meta = MatrixMeta(P, n.shape[1], n.etype)
        if where == "file":
            outputs[n.id] = create_tas(meta, part_rows, "file", path=engine.temp_path(), pool=engine.pool, owned=True)
        else:
            outputs[n.id] = create_tas(meta, part_rows, "memory", pool=engine.pool)

    sinks = dag.sinks
    partials = {s.id: [None] * nparts for s in sinks}
    counts = np.zeros(nparts, dtype=np.int64)
    stats = RunStats(nparts=nparts, part_rows=part_rows, slice_rows=slice_rows, io_batch=io_batch)
    sched = Scheduler(nparts, cfg.workers, io_batch)
    cancel = threading.Event()
    errors = []
    lock = threading.Lock()

    def process(task: Task, wid: int):
        r_lo = task.first * part_rows
        r_hi = min(P, task.stop * part_rows)
        bufs = {}
        try:
            for sid, st in stores.items():
                sp0 = r_lo // st.part_rows
                sp1 = -(-r_hi // st.part_rows)
                bufs[sid] = st.read_partitions(sp0, sp1 - sp0, engine.io, engine.pool)
            for p in range(task.first, task.stop):
                if cancel.is_set():
                    return
                pr0 = p * part_rows
                pr1 = min(P, pr0 + part_rows)
                outs = {}
                try:
                    for nid, st in outputs.items():
                        region = engine.pool.allocate(st.part_nbytes(p))
                        outs[nid] = (region, region.view(st.dtype, (pr1 - pr0, st.ncol), st.order))
                    part_partials = {}
                    nslices = 0
                    for s0 in range(pr0, pr1, slice_rows):
                        s1 = min(pr1, s0 + slice_rows)
                        src = {sid: _source_slice(stores[sid], bufs[sid], s0, s1) for sid in stores}
                        env = pipe_slice(dag, src, s0, s1, part_partials)
                        for nid, (_, arr) in outs.items():
                            arr[s0 - pr0:s1 - pr0] = env[nid]
                        nslices += 1
                    for nid, (region, arr) in list(outs.items()):
                        st = outputs[nid]
                        if st.backing == "memory":
                            st.adopt_partition(p, region, arr)
                        else:
                            st.write_partition(p, arr, engine.io)
                            region.release()
                        del outs[nid]
                finally:
                    for region, _ in outs.values():
                        region.release()
                with lock:
                    for sid, part in part_partials.items():
                        partials[sid][p] = part
                    counts[p] += 1
                    stats.slices += nslices
                    stats.parts_per_worker[wid] = stats.parts_per_worker.get(wid, 0) + 1
        finally:
            for b in bufs.values():
                b.release()

    def worker(wid: int):
        try:
            while not cancel.is_set():
                task = sched.schedule_next()
                if task is None:
                    return
                process(task, wid)
        except BaseException as e:  # first failure cancels everyone
            with lock:
                errors.append(e)
            cancel.set()

    engine.io.begin()
    try:
        nworkers = min(cfg.workers, nparts)
        if nworkers <= 1:
            worker(0)
        else:
            futures = [engine.executor().submit(worker, w) for w in range(nworkers)]
            for f in futures:
                f.result()
    finally:
        engine.io.end()
    if errors:
        raise errors[0]
    if not np.all(counts == 1):
        bad = np.flatnonzero(counts != 1)
        raise RuntimeError(f"partitions {bad[:8].tolist()} processed {counts[bad[:8]].tolist()} times")

    for s in sinks:
        acc = None
        for part in partials[s.id]:
            if part is not None:
                acc = part if acc is None else kernels.merge(s, acc, part)
        s.result = kernels.finalize(s, acc)
    for n in dag.order:
        n.state.pop("_bvals", None)
        if n.id in outputs:
            n.store = outputs[n.id]
    for n in dag.order:
        if not n.pending:
            n.detach()
    stats.tasks = len(sched.issued)
    stats.seconds = time.perf_counter() - t0
    engine.last_run = stats
    return stats
