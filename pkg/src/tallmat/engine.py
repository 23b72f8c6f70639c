"""Engine configuration and the process-wide current engine."""

from __future__ import annotations

import contextlib
import os
import shutil
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

from .storage import DEFAULT_CHUNK_BYTES, DEFAULT_PART_ROWS, ChunkPool, IoStats, is_power_of_two


@dataclass(frozen=True)
class EngineConfig:
    workers: int = max(1, os.cpu_count() or 1)
    part_rows: int = DEFAULT_PART_ROWS
    cache_budget: int = 256 << 10
    io_batch_bytes: int = 64 << 20
    chunk_bytes: int = DEFAULT_CHUNK_BYTES
    mem_budget: int | None = None
    backing: str = "memory"
    tmpdir: str | None = None
    fused: bool = True
    local_cap: int = 1 << 30

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not is_power_of_two(self.part_rows):
            raise ValueError(f"part_rows must be a power of two, got {self.part_rows}")
        if self.backing not in ("memory", "file"):
            raise ValueError(f"backing must be 'memory' or 'file', got {self.backing!r}")
        if self.cache_budget < 8:
            raise ValueError("cache_budget too small")

    def as_dict(self) -> dict:
        return asdict(self)


class Engine:
    """Owns the chunk pool, I/O counters, worker threads and temp files."""

    def __init__(self, config: EngineConfig | None = None, **overrides):
        config = config or EngineConfig()
        if overrides:
            config = replace(config, **overrides)
        self.config = config
        self.pool = ChunkPool(config.chunk_bytes, config.mem_budget)
        self.io = IoStats()
        self._tmpdir = None
        self._executor = None
        self._lock = threading.Lock()
        self._tmp_count = 0
        self.last_run = None

    @property
    def slice_rows(self) -> int:
        # slices hold whole rows of one 32-column f64 block
        return max(1, self.config.cache_budget // (32 * 8))

    @property
    def tmpdir(self) -> str:
        with self._lock:
            if self._tmpdir is None:
                self._tmpdir = tempfile.mkdtemp(prefix="tallmat-", dir=self.config.tmpdir)
            return self._tmpdir

    def temp_path(self, stem: str = "m") -> str:
        d = self.tmpdir
        with self._lock:
            self._tmp_count += 1
            return os.path.join(d, f"{stem}{self._tmp_count}.flmx")

    def executor(self) -> ThreadPoolExecutor:
        with self._lock:
            if self._executor is None:
                self._executor = ThreadPoolExecutor(self.config.workers, thread_name_prefix="tallmat")
            return self._executor

    def close(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
        if self._tmpdir is not None:
            shutil.rmtree(self._tmpdir, ignore_errors=True)
            self._tmpdir = None

    @contextlib.contextmanager
    def activate(self):
        prev = set_engine(self)
        try:
            yield self
        finally:
            set_engine(prev)


_current: Engine | None = None


def get_engine() -> Engine:
    global _current
    if _current is None:
        _current = Engine()
    return _current


def set_engine(engine: Engine | None) -> Engine | None:
    global _current
    prev, _current = _current, engine
    return prev


def configure(**kwargs) -> Engine:
    """Replace the current engine with a freshly configured one."""
    eng = Engine(**kwargs)
    set_engine(eng)
    return eng
