"""Backend selection for the solver hot loops.

Two implementations of each kernel: the compiled Cython extension and a
scipy/numpy fallback with identical results.  By default each operation
uses whichever implementation benchmarks faster (the compiled CSR matvec,
but numpy's batched-BLAS matmul for the block-diagonal apply, which beats a
scalar loop at the block sizes arising here); set POLYSTRESS_KERNELS to
"compiled" or "fallback" to force one backend for everything.  See
benchmarks/kernel_bench.py for the comparison.
"""
from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sparse

try:
    from . import _speedups
except ImportError:
    _speedups = None

BACKENDS = ("compiled", "fallback")


def compiled_available() -> bool:
    return _speedups is not None


def _forced_backend() -> str | None:
    forced = os.environ.get("POLYSTRESS_KERNELS", "").strip().lower()
    if not forced:
        return None
    if forced not in BACKENDS:
        raise ValueError(f"POLYSTRESS_KERNELS must be one of {BACKENDS}")
    if forced == "compiled" and _speedups is None:
        raise RuntimeError("compiled kernels requested but the extension is not built")
    return forced


def active_backend(op: str = "csr_matvec") -> str:
    forced = _forced_backend()
    if forced is not None:
        return forced
    if op == "block_apply":
        return "fallback"  # batched BLAS matmul wins at these block sizes
    return "compiled" if _speedups is not None else "fallback"


class CsrOperator:
    """Symmetric-friendly CSR matvec dispatching to the active backend."""

    def __init__(self, matrix, backend: str | None = None):
        A = sparse.csr_matrix(matrix)
        A.sort_indices()
        self.matrix = A
        self.shape = A.shape
        self.backend = backend or active_backend("csr_matvec")
        if self.backend == "compiled":
            self._data = np.ascontiguousarray(A.data, dtype=np.float64)
            self._indices = np.ascontiguousarray(A.indices, dtype=np.int32)
            self._indptr = np.ascontiguousarray(A.indptr, dtype=np.int32)

    def matvec(self, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        if self.backend == "compiled":
            if out is None:
                out = np.empty(self.shape[0])
            x = np.ascontiguousarray(x, dtype=np.float64)
            _speedups.csr_matvec(self._data, self._indices, self._indptr, x, out)
            return out
        y = self.matrix @ x
        if out is not None:
            out[:] = y
            return out
        return y

    __call__ = matvec


class BlockDiagSolver:
    """Apply a block-diagonal inverse, optionally under a dof permutation.

    ``inv_blocks`` has shape (nblocks, bs, bs); ``perm`` maps positions in
    the contiguous block layout back to original dof indices.
    """

    def __init__(self, inv_blocks: np.ndarray, perm: np.ndarray | None = None,
                 backend: str | None = None):
        self.inv_blocks = np.ascontiguousarray(inv_blocks, dtype=np.float64)
        self.nblocks, self.block_size = self.inv_blocks.shape[:2]
        self.n = self.nblocks * self.block_size
        self.perm = None if perm is None else np.ascontiguousarray(perm, dtype=np.int64)
        self.backend = backend or active_backend("block_apply")

    def apply(self, r: np.ndarray) -> np.ndarray:
        z = np.empty(self.n)
        if self.backend == "compiled":
            r = np.ascontiguousarray(r, dtype=np.float64)
            if self.perm is None:
                _speedups.block_apply(self.inv_blocks, r, z)
            else:
                _speedups.permuted_block_apply(self.inv_blocks, self.perm, r, z)
            return z
        rb = r if self.perm is None else r[self.perm]
        zb = np.matmul(self.inv_blocks, rb.reshape(self.nblocks, self.block_size, 1))
        if self.perm is None:
            return zb.reshape(-1)
        z[self.perm] = zb.reshape(-1)
        return z

    __call__ = apply
