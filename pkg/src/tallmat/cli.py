"""Command-line front end: gen | run | bench | dag | convert.

Reports are ``key=value`` lines (plus an optional whitespace-delimited table
for ``bench``).  The exit status is 0 when the run completed (and converged,
for iterative algorithms), 1 when an iterative algorithm did not converge,
and 2 on an engine error, reported as ``status=error category=...``.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
import time

import numpy as np

from . import ml
from .dag import dump_dag, from_local, materialize, source, to_local
from .engine import Engine, EngineConfig
from .errors import EngineError
from .genops import agg, agg_row, groupby, groupby_row, inner_prod, mapply_col, mapply_row, sapply
from .io import load_dense_text, load_native, save_dense_text, save_native
from .rbase import crossprod, col_sums, rep_int, rnorm_matrix
from .sparse import load_sparse_edges
from .storage import create_tas

ALGORITHMS = ("kmeans", "logistic", "pca", "correlation", "naive-bayes", "lda", "pagerank", "mvrnorm")
_UNITS = {"": 1, "b": 1, "k": 1 << 10, "kb": 1 << 10, "kib": 1 << 10, "m": 1 << 20, "mb": 1 << 20,
          "mib": 1 << 20, "g": 1 << 30, "gb": 1 << 30, "gib": 1 << 30}


def parse_size(text: str) -> int:
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*([a-zA-Z]*)\s*", str(text))
    if not m or m.group(2).lower() not in _UNITS:
        raise argparse.ArgumentTypeError(f"bad size {text!r} (use e.g. 256M, 64KiB, 1G)")
    return int(float(m.group(1)) * _UNITS[m.group(2).lower()])


def _emit(stream, **kv):
    for k, v in kv.items():
        if isinstance(v, float):
            v = repr(v)
        elif isinstance(v, (list, tuple, np.ndarray)):
            v = ",".join(repr(float(x)) if isinstance(x, (float, np.floating)) else str(x) for x in np.ravel(v))
        stream.write(f"{k}={v}\n")


def engine_from_args(args, **overrides) -> Engine:
    cfg = dict(
        workers=args.workers,
        cache_budget=args.cache_budget,
        io_batch_bytes=args.io_batch,
        mem_budget=args.mem_budget,
        backing=args.backing,
        tmpdir=args.tmpdir,
        part_rows=args.part_rows,
        chunk_bytes=args.chunk_bytes,
    )
    cfg.update(overrides)
    return Engine(EngineConfig(**cfg))


def _config_report(eng: Engine, args) -> dict:
    c = eng.config
    return {
        "workers": c.workers, "mem_budget": c.mem_budget if c.mem_budget is not None else "none",
        "cache_budget": c.cache_budget, "io_batch": c.io_batch_bytes, "backing": c.backing,
        "part_rows": c.part_rows, "chunk_bytes": c.chunk_bytes, "fused": int(c.fused), "seed": args.seed,
    }


def load_input(path: str, eng: Engine):
    """Open a dense input; native files stay on disk under file backing."""
    if path.endswith(".flmx"):
        m = load_native(path)
        if eng.config.backing == "file":
            return m
        st = m.node.store
        mem = create_tas(st.meta, st.part_rows, "memory", pool=eng.pool)
        for p in range(st.nparts):
            buf = st.read_partitions(p, 1, eng.io, eng.pool)
            try:
                mem.write_partition(p, buf.parts[0])
            finally:
                buf.release()
        return source(mem, m.transposed)
    return load_dense_text(path)


def _labels(path):
    if path is None:
        return None
    if path.endswith(".flmx"):
        return to_local(load_native(path)).reshape(-1)
    return np.loadtxt(path, ndmin=1)


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    rng = np.random.default_rng(args.seed)
    out = args.out
    kind = args.kind
    if kind == "graph":
        n, deg = args.n, args.degree
        src = np.repeat(np.arange(n), deg)
        dst = rng.integers(0, n, size=src.size)
        keep = src != dst
        with open(out, "w") as f:
            for s, d in zip(src[keep], dst[keep]):
                f.write(f"{s} {d}\n")
        _emit(sys.stdout, kind=kind, n=n, edges=int(keep.sum()), out=out)
        return 0
    labels = None
    if kind == "blobs":
        centers = rng.normal(scale=args.sep, size=(args.k, args.p))
        if args.k > 1:
            # stretch so the closest pair of centers is at least --sep apart
            gaps = np.linalg.norm(centers[:, None] - centers[None], axis=2)[np.triu_indices(args.k, 1)]
            centers *= max(1.0, args.sep / gaps.min())
        labels = rng.integers(0, args.k, size=args.n)
        X = centers[labels] + rng.normal(scale=args.sigma, size=(args.n, args.p))
    elif kind == "logistic2d":
        labels = rng.integers(0, 2, size=args.n)
        X = rng.normal(size=(args.n, 2))
        X[:, 0] = np.where(labels == 1, 1.0, -1.0) * (args.margin + np.abs(X[:, 0]))
    elif kind == "uniform":
        X = rng.random((args.n, args.p))
    elif kind == "normal":
        X = rng.normal(size=(args.n, args.p))
    else:
        raise ValueError(f"unknown kind {kind}")
    with Engine(EngineConfig(backing="memory", part_rows=args.part_rows)).activate():
        save_native(from_local(X), out)
        if labels is not None:
            lab_path = args.labels_out or re.sub(r"(\.flmx)?$", ".labels.flmx", out, count=1)
            save_native(from_local(labels.astype(np.int64)), lab_path)
    _emit(sys.stdout, kind=kind, n=args.n, p=X.shape[1], out=out,
          **({"labels": lab_path} if labels is not None else {}))
    return 0


# ---------------------------------------------------------------------------
# run


def run_algorithm(name: str, args, eng: Engine):
    """Run one algorithm on the active engine; returns (report, result array, ok)."""
    rep = {}
    if name == "pagerank":
        G = load_sparse_edges(args.input)
        st = ml.pagerank(G, d=args.damping, epsilon=args.epsilon, max_iters=args.max_iters)
        rep.update(n=G.n, nnz=G.nnz, iterations=st.iterations, converged=int(st.converged),
                   pr_sum=float(st.pr.sum()), graph_bytes=os.path.getsize(args.input))
        if st.bytes_per_iter:
            rep["bytes_read_per_iter"] = st.bytes_per_iter[-1]
        if G.n <= 20:
            rep["pr"] = st.pr
        return rep, st.pr, st.converged
    if name == "mvrnorm":
        p = args.p
        sigma = np.eye(p) if args.sigma_diag is None else np.diag([float(x) for x in args.sigma_diag.split(",")])
        X = ml.mvrnorm(args.n, np.zeros(p), sigma, seed=args.seed)
        G = crossprod(X)
        s = col_sums(X)
        materialize(s, G)
        mu = to_local(s).reshape(-1) / args.n
        cov = to_local(G) / args.n - np.outer(mu, mu)
        rep.update(n=args.n, p=p, cov_rel_err=float(np.linalg.norm(cov - sigma) / np.linalg.norm(sigma)))
        return rep, cov, True
    X = load_input(args.input, eng)
    rep.update(n=X.nrow, p=X.ncol)
    y = _labels(args.labels)
    if name == "correlation":
        C = ml.correlation(X)
        return rep, C, True
    if name == "pca":
        r = ml.pca(X, args.k, center=args.center, tol=args.tol)
        rep["eigenvalues"] = r.values
        return rep, np.concatenate([r.values, r.vectors.ravel()]), True
    if name == "kmeans":
        r = ml.kmeans(X, args.k, max_iters=args.max_iters, seed=args.seed)
        labels = r.labels()
        rep.update(k=args.k, iterations=r.iterations, moved_last=r.moved_last, converged=int(r.converged),
                   objective=r.objective_trace[-1])
        if y is not None:
            rep["ari"] = ml.adjusted_rand_index(y, labels)
        return rep, np.concatenate([r.centers.ravel(), labels.astype(np.float64)]), r.converged
    if y is None:
        raise ValueError(f"{name} needs --labels")
    if name == "logistic":
        m = ml.logistic_regression(X, y, max_iters=args.max_iters, tol=args.tol)
        pred = to_local(m.predict(X)).reshape(-1)
        rep.update(iterations=m.iterations, converged=int(m.converged), stalled=int(m.stalled),
                   logloss=m.logloss_trace[-1], accuracy=ml.accuracy(y, pred))
        return rep, m.theta, m.converged
    if name == "naive-bayes":
        m = ml.naive_bayes_train(X, y)
        pred = to_local(ml.naive_bayes_predict(m, X)).reshape(-1)
        rep.update(k=m.k, accuracy=ml.accuracy(y, pred))
        return rep, np.concatenate([m.means.ravel(), m.variances.ravel()]), True
    if name == "lda":
        m = ml.lda_train(X, y)
        pred = to_local(ml.lda_predict(m, X)).reshape(-1)
        rep.update(k=m.means.shape[0], accuracy=ml.accuracy(y, pred))
        return rep, m.coef, True
    raise ValueError(f"unknown algorithm {name}")


def cmd_run(args) -> int:
    eng = engine_from_args(args)
    try:
        with eng.activate():
            t0 = time.perf_counter()
            rep, result, ok = run_algorithm(args.algorithm, args, eng)
            secs = time.perf_counter() - t0
            _emit(sys.stdout, command="run", algorithm=args.algorithm, **_config_report(eng, args))
            _emit(sys.stdout, **rep)
            _emit(sys.stdout, wall_seconds=secs, bytes_read=eng.io.bytes_read, bytes_written=eng.io.bytes_written,
                  read_calls=eng.io.read_calls, peak_pool_bytes=eng.pool.high_water_bytes,
                  status="ok" if ok else "not_converged")
            if args.out is not None:
                save_dense_text(np.atleast_2d(result), args.out)
    finally:
        eng.close()
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    modes = [(f, b) for f in args.fusion.split(",") for b in args.backings.split(",")]
    rows, results = [], {}
    for fused, backing in modes:
        eng = engine_from_args(args, fused=fused == "fused", backing=backing)
        try:
            with eng.activate():
                t0 = time.perf_counter()
                _, result, _ = run_algorithm(args.algorithm, args, eng)
                secs = time.perf_counter() - t0
                rows.append((f"{fused}/{backing}", secs, eng.io.bytes_read, eng.io.bytes_written,
                             eng.pool.high_water_bytes))
                results[(fused, backing)] = np.asarray(result)
        finally:
            eng.close()
    ref_key = modes[0]
    ref = results[ref_key]
    for key, res in results.items():
        if res.shape != ref.shape or not np.array_equal(res, ref, equal_nan=True):
            diff = np.nanmax(np.abs(res - ref)) if res.shape == ref.shape else float("nan")
            _emit(sys.stdout, status="error", category="mismatch",
                  detail=f"{'/'.join(key)} differs from {'/'.join(ref_key)} (max abs diff {diff!r})")
            return 3
    _emit(sys.stdout, command="bench", algorithm=args.algorithm, **_config_report(engine_from_args(args), args))
    sys.stdout.write("mode seconds bytes_read bytes_written peak_pool_bytes\n")
    for r in rows:
        sys.stdout.write(f"{r[0]} {r[1]:.4f} {r[2]} {r[3]} {r[4]}\n")
    _emit(sys.stdout, results_equal=1, status="ok")
    return 0


# ---------------------------------------------------------------------------
# dag


def dag_program(name: str, n: int, p: int, k: int, seed: int) -> str:
    """Build a canned program lazily and return its DAG dump."""
    X = rnorm_matrix(n, p, seed)
    if name == "kmeans-iter":
        C = np.arange(k * p, dtype=np.float64).reshape(k, p)
        D = inner_prod(X, C.T, "euclidean", "+")
        I = agg_row(D, "which.min")
        CNT = groupby(rep_int(1, n), I, "+", k)
        S = groupby_row(X, I, "+", k)
        C2 = mapply_row(S.t(), CNT, "/").t()
        return dump_dag(C2)
    if name == "logreg-iter":
        y = agg_row(X, "max") > 0.5
        theta = np.zeros((p, 1))
        Z = inner_prod(X, theta, "*", "+")
        loss = agg(sapply(Z, "softplus") - mapply_col(Z, y, "*"), "+")
        grad = crossprod(X, mapply_col(sapply(Z, "sigmoid"), y, "-"))
        return dump_dag(loss, grad)
    if name == "corr":
        return dump_dag(col_sums(X), crossprod(X))
    raise ValueError(f"unknown program {name!r}; choose kmeans-iter, logreg-iter or corr")


def cmd_dag(args) -> int:
    with Engine(EngineConfig(workers=1)).activate():
        sys.stdout.write(dag_program(args.program, args.n, args.p, args.k, args.seed))
    return 0


# ---------------------------------------------------------------------------
# convert


def cmd_convert(args) -> int:
    eng = engine_from_args(args, backing="memory")
    with eng.activate():
        if args.src.endswith(".flmx"):
            m = load_native(args.src)
        else:
            m = load_dense_text(args.src, delimiter=args.delimiter)
        if args.dst.endswith(".flmx"):
            save_native(m, args.dst)
        else:
            save_dense_text(to_local(m), args.dst, delimiter=args.delimiter)
        _emit(sys.stdout, src=args.src, dst=args.dst, nrow=m.nrow, ncol=m.ncol, elem_type=m.elem_type)
    eng.close()
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, default=EngineConfig().workers)
    common.add_argument("--mem-budget", type=parse_size, default=None)
    common.add_argument("--cache-budget", type=parse_size, default=256 << 10)
    common.add_argument("--io-batch", type=parse_size, default=64 << 20)
    common.add_argument("--backing", choices=("memory", "file"), default="memory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tmpdir", default=None)
    common.add_argument("--part-rows", type=int, default=1 << 16)
    common.add_argument("--chunk-bytes", type=parse_size, default=64 << 20)

    algo = argparse.ArgumentParser(add_help=False)
    algo.add_argument("algorithm", choices=ALGORITHMS)
    algo.add_argument("--input")
    algo.add_argument("--labels")
    algo.add_argument("--k", type=int, default=10)
    algo.add_argument("--max-iters", type=int, default=100)
    algo.add_argument("--damping", type=float, default=0.15)
    algo.add_argument("--epsilon", type=float, default=None)
    algo.add_argument("--center", action="store_true")
    algo.add_argument("--tol", type=float, default=1e-6)
    algo.add_argument("--n", type=int, default=100000)
    algo.add_argument("--p", type=int, default=4)
    algo.add_argument("--sigma-diag", default=None)

    ap = argparse.ArgumentParser(prog="tallmat", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate synthetic data")
    g.add_argument("kind", choices=("blobs", "logistic2d", "uniform", "normal", "graph"))
    g.add_argument("--n", type=int, default=30000)
    g.add_argument("--p", type=int, default=8)
    g.add_argument("--k", type=int, default=3)
    g.add_argument("--sep", type=float, default=10.0)
    g.add_argument("--sigma", type=float, default=0.1)
    g.add_argument("--margin", type=float, default=1.0)
    g.add_argument("--degree", type=int, default=8)
    g.add_argument("--out", required=True)
    g.add_argument("--labels-out", default=None)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", parents=[common, algo], help="run an algorithm")
    r.add_argument("--out", default=None, help="write the model/result as delimited text")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", parents=[common, algo], help="compare fused/unfused and memory/file modes")
    b.add_argument("--fusion", default="fused,unfused")
    b.add_argument("--backings", default="memory,file")
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("dag", parents=[common], help="print the DAG of a canned program")
    d.add_argument("program", choices=("kmeans-iter", "logreg-iter", "corr"))
    d.add_argument("--n", type=int, default=1000)
    d.add_argument("--p", type=int, default=8)
    d.add_argument("--k", type=int, default=3)
    d.set_defaults(func=cmd_dag)

    c = sub.add_parser("convert", parents=[common], help="convert between text and native formats")
    c.add_argument("src")
    c.add_argument("dst")
    c.add_argument("--delimiter", default=",")
    c.set_defaults(func=cmd_convert)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EngineError as e:
        _emit(sys.stdout, status="error", category=e.category)
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        _emit(sys.stdout, status="error", category="invalid_argument")
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        _emit(sys.stdout, status="error", category="io")
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
