# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 integration of closed-loop quadratic costs.

Same contract as :func:`mftune._cost_py.quadratic_costs`.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef struct Csr:
    Py_ssize_t* ptr
    Py_ssize_t* col
    double* val


cdef void _to_csr(const double* M, Py_ssize_t n, Csr* out) noexcept nogil:
    """Compress the non-zeros of a dense row-major ``n x n`` matrix."""
    cdef Py_ssize_t i, j, k = 0
    for i in range(n):
        out.ptr[i] = k
        for j in range(n):
            if M[i * n + j] != 0.0:
                out.col[k] = j
                out.val[k] = M[i * n + j]
                k += 1
    out.ptr[n] = k


cdef inline void _rhs(const Csr* A, const double* d, const double* z,
                      double* out, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(n):
        s = d[i]
        for k in range(A.ptr[i], A.ptr[i + 1]):
            s += A.val[k] * z[A.col[k]]
        out[i] = s


cdef inline double _quad(const Csr* W, const double* z, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double s = 0.0, r
    for i in range(n):
        r = 0.0
        for k in range(W.ptr[i], W.ptr[i + 1]):
            r += W.val[k] * z[W.col[k]]
        s += z[i] * r
    return s


cdef int _integrate(const Csr* A, const Csr* W, const double* d,
                    double* z, Py_ssize_t n, Py_ssize_t nsteps, double h,
                    double limit, double* work, double* cost) noexcept nogil:
    """Advance ``z`` in place; returns 1 if the state norm exceeded ``limit``."""
    cdef double* k1 = work
    cdef double* k2 = work + n
    cdef double* k3 = work + 2 * n
    cdef double* k4 = work + 3 * n
    cdef double* tmp = work + 4 * n
    cdef double c1, c2, c3, c4, nrm
    cdef double half = 0.5 * h, sixth = h / 6.0
    cdef double limit2 = limit * limit
    cdef Py_ssize_t step, i
    for step in range(nsteps):
        c1 = _quad(W, z, n)
        _rhs(A, d, z, k1, n)
        for i in range(n):
            tmp[i] = z[i] + half * k1[i]
        c2 = _quad(W, tmp, n)
        _rhs(A, d, tmp, k2, n)
        for i in range(n):
            tmp[i] = z[i] + half * k2[i]
        c3 = _quad(W, tmp, n)
        _rhs(A, d, tmp, k3, n)
        for i in range(n):
            tmp[i] = z[i] + h * k3[i]
        c4 = _quad(W, tmp, n)
        _rhs(A, d, tmp, k4, n)
        nrm = 0.0
        for i in range(n):
            z[i] += sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            nrm += z[i] * z[i]
        cost[0] += sixth * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        if nrm > limit2 or nrm != nrm:
            return 1
    return 0


def quadratic_costs(A_cl, W, Z0, d, double horizon, double step, double limit=1e6):
    A_arr = np.ascontiguousarray(A_cl, dtype=np.float64)
    W_arr = np.ascontiguousarray(W, dtype=np.float64)
    Z_arr = np.ascontiguousarray(np.asarray(Z0, dtype=np.float64).T)
    d_arr = np.ascontiguousarray(d, dtype=np.float64)
    if A_arr.ndim == 2:
        A_arr = A_arr[None]
    if W_arr.ndim == 2:
        W_arr = np.broadcast_to(W_arr, A_arr.shape).copy()
    cdef Py_ssize_t P = A_arr.shape[0]
    cdef Py_ssize_t n = A_arr.shape[1]
    cdef Py_ssize_t ncols = Z_arr.shape[0]
    cdef Py_ssize_t nsteps = <Py_ssize_t>round(horizon / step)
    cdef double h = horizon / nsteps
    cdef const double[:, :, ::1] Av = A_arr
    cdef const double[:, :, ::1] Wv = W_arr
    cdef const double[:, ::1] Zv = Z_arr
    cdef const double[::1] dv = d_arr
    J = np.zeros(P, dtype=np.float64)
    diverged = np.zeros(P, dtype=np.bool_)
    cdef double[::1] Jv = J
    cdef cnp.npy_bool[::1] Dv = diverged
    cdef double* work = <double*>malloc((6 * n + 2 * n * n) * sizeof(double))
    cdef Py_ssize_t* index = <Py_ssize_t*>malloc((4 * (n + 1) + 2 * n * n) * sizeof(Py_ssize_t))
    cdef double* z
    cdef double cost
    cdef Csr A_csr, W_csr
    cdef Py_ssize_t p, c, i
    if work == NULL or index == NULL:
        free(work)
        free(index)
        raise MemoryError()
    z = work + 5 * n
    A_csr.val = work + 6 * n
    W_csr.val = work + 6 * n + n * n
    A_csr.ptr = index
    W_csr.ptr = index + (n + 1)
    A_csr.col = index + 2 * (n + 1)
    W_csr.col = index + 2 * (n + 1) + n * n
    try:
        with nogil:
            for p in range(P):
                _to_csr(&Av[p, 0, 0], n, &A_csr)
                _to_csr(&Wv[p, 0, 0], n, &W_csr)
                for c in range(ncols):
                    for i in range(n):
                        z[i] = Zv[c, i]
                    cost = 0.0
                    if _integrate(&A_csr, &W_csr, &dv[0], z, n,
                                  nsteps, h, limit, work, &cost):
                        Dv[p] = 1
                    Jv[p] += cost
    finally:
        free(work)
        free(index)
    return J, diverged
