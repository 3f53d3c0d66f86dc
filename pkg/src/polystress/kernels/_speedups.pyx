# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the solver inner loops: CSR matrix-vector products
and (optionally permuted) block-diagonal solves with fused gather/scatter."""

from libc.stdint cimport int64_t


def csr_matvec(const double[::1] data, const int[::1] indices,
               const int[::1] indptr, const double[::1] x, double[::1] out):
    cdef Py_ssize_t i, jj, n = indptr.shape[0] - 1
    cdef double acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for jj in range(indptr[i], indptr[i + 1]):
                acc = acc + data[jj] * x[indices[jj]]
            out[i] = acc


def block_apply(const double[:, :, ::1] inv, const double[::1] r,
                double[::1] z):
    """z = blockdiag(inv) @ r for contiguous equal-size blocks."""
    cdef Py_ssize_t b, i, j, nb = inv.shape[0], bs = inv.shape[1]
    cdef double acc
    with nogil:
        for b in range(nb):
            for i in range(bs):
                acc = 0.0
                for j in range(bs):
                    acc = acc + inv[b, i, j] * r[b * bs + j]
                z[b * bs + i] = acc


def permuted_block_apply(const double[:, :, ::1] inv, const int64_t[::1] perm,
                         const double[::1] r, double[::1] z):
    """z[perm] = blockdiag(inv) @ r[perm], gather and scatter fused."""
    cdef Py_ssize_t b, i, j, nb = inv.shape[0], bs = inv.shape[1]
    cdef double acc
    with nogil:
        for b in range(nb):
            for i in range(bs):
                acc = 0.0
                for j in range(bs):
                    acc = acc + inv[b, i, j] * r[perm[b * bs + j]]
                z[perm[b * bs + i]] = acc
