import sys

import pytest

from tallmat.engine import Engine, EngineConfig


def small_engine(**kw):
    # tiny partitions and slices so every test crosses partition and slice edges
    cfg = dict(workers=2, part_rows=16, cache_budget=8 * 256, io_batch_bytes=4096, chunk_bytes=1 << 16)
    cfg.update(kw)
    return Engine(EngineConfig(**cfg))


@pytest.fixture
def engine(tmp_path):
    eng = small_engine(tmpdir=str(tmp_path))
    with eng.activate():
        yield eng
    eng.close()


@pytest.fixture
def file_engine(tmp_path):
    eng = small_engine(tmpdir=str(tmp_path), backing="file")
    with eng.activate():
        yield eng
    eng.close()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.write_sep("=", "acceptance criteria")
        for num in sorted(verdicts):
            terminalreporter.write_line(verdicts[num])
