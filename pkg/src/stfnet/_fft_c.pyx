# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled radix-2 butterfly kernel; mirrors stfnet._fft_py.fft_rows."""

import numpy as np

cimport numpy as cnp


def fft_rows(cnp.complex128_t[:, ::1] z, cnp.intp_t[::1] perm,
             cnp.complex128_t[::1] tw):
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t tau = z.shape[1]
    out = np.empty((n, tau), dtype=np.complex128)
    cdef cnp.complex128_t[:, ::1] b = out
    cdef Py_ssize_t i, j, size, half, step, start, k
    cdef cnp.complex128_t w, t, ev
    with nogil:
        for i in range(n):
            for j in range(tau):
                b[i, j] = z[i, perm[j]]
            size = 2
            while size <= tau:
                half = size >> 1
                step = tau // size
                start = 0
                while start < tau:
                    for k in range(half):
                        w = tw[k * step]
                        t = w * b[i, start + half + k]
                        ev = b[i, start + k]
                        b[i, start + k] = ev + t
                        b[i, start + half + k] = ev - t
                    start += size
                size <<= 1
    return out
