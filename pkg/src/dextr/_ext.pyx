# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled cyclic Jacobi eigensolver; mirrors :func:`dextr._fallback.jacobi_eigvalsh`."""
import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


def jacobi_eigvalsh(double[:, ::1] a_in, double tol=1e-12, int max_sweeps=100):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, sweeps)`` with eigenvalues unsorted (the final
    diagonal).  ``sweeps`` is -1 when the cap was hit before the
    off-diagonal Frobenius norm fell below ``tol * ||A||_F``.
    """
    cdef Py_ssize_t n = a_in.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] arr = np.array(a_in, dtype=np.float64, copy=True)
    cdef double[:, ::1] a = arr
    cdef Py_ssize_t p, q, k
    cdef double norm2 = 0.0, off2, apq, theta, t, c, s, akp, akq, app, aqq
    cdef int sweep

    for p in range(n):
        for q in range(n):
            norm2 += a[p, q] * a[p, q]
    if norm2 == 0.0:
        return np.zeros(n), 0
    cdef double limit = tol * tol * norm2

    for sweep in range(max_sweeps + 1):
        off2 = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off2 += 2.0 * a[p, q] * a[p, q]
        if off2 <= limit:
            return np.array([arr[k, k] for k in range(n)]), sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    akp = a[p, k]
                    akq = a[q, k]
                    a[p, k] = c * akp - s * akq
                    a[q, k] = s * akp + c * akq
                a[p, q] = 0.0
                a[q, p] = 0.0
    return np.array([arr[k, k] for k in range(n)]), -1

