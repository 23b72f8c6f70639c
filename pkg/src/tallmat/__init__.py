"""Out-of-core, parallel dense matrix engine with lazy operator fusion."""

from .dag import Matrix, dump_dag, from_local, materialize, set_cache, to_local
from .engine import Engine, EngineConfig, configure, get_engine, set_engine
from .errors import (
    BadMagicError, ConvergenceError, EngineError, FormatError, GeometryError, KernelError, LabelError,
    MemoryBudgetError, ParseError, RegistryError, ShapeError, SingularMatrixError, SizeCapError,
    StorageIOError, TruncatedFileError, VersionMismatchError,
)
from .functions import agg_fn, agg_names, elem_fn, elem_names
from .genops import (
    agg, agg_col, agg_row, groupby, groupby_col, groupby_row, inner_prod, mapply, mapply_col,
    mapply_row, sapply,
)
from .io import load_dense_text, load_native, save_dense_text, save_native
from .rbase import (
    BlockMatrix, as_blocks, cbind, col_sums, crossprod, matmul, pmax, pmin, rbind, rep_int, rnorm_matrix,
    row_sums, runif_matrix, seq_int, subset_cols, subset_rows, t,
)
from .storage import ChunkPool, IoStats, MatrixMeta, TasStore, create_tas

__version__ = "0.1.0"
