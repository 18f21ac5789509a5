# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled RK4 integrator for the gauge-projected flow.

Integrates psi' = log(q / c0) - m + kappa psi with q = c0 + L psi and
m = sum(w log(q / c0)). L is given in row-banded form rows[i, d + 2] = L[i, i + d].
"""
from libc.math cimport log
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef void apply_rows(const double[:, ::1] B, const double[::1] p, double[::1] out,
                     Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    out[0] = B[0, 2] * p[0] + B[0, 3] * p[1] + B[0, 4] * p[2]
    out[1] = B[1, 1] * p[0] + B[1, 2] * p[1] + B[1, 3] * p[2] + B[1, 4] * p[3]
    for i in range(2, n - 2):
        out[i] = (B[i, 0] * p[i - 2] + B[i, 1] * p[i - 1] + B[i, 2] * p[i]
                  + B[i, 3] * p[i + 1] + B[i, 4] * p[i + 2])
    out[n - 2] = B[n - 2, 0] * p[n - 4] + B[n - 2, 1] * p[n - 3] + B[n - 2, 2] * p[n - 2] + B[n - 2, 3] * p[n - 1]
    out[n - 1] = B[n - 1, 0] * p[n - 3] + B[n - 1, 1] * p[n - 2] + B[n - 1, 2] * p[n - 1]


cdef int rhs(const double[:, ::1] B, const double[::1] w, double c0, double kappa, double q_floor,
             const double[::1] p, double[::1] lp, double[::1] k, Py_ssize_t n,
             double* m_out, Py_ssize_t* node, double* qbad) noexcept nogil:
    # returns 0 on success, 1 on positivity failure, 2 on stability failure
    cdef Py_ssize_t i
    cdef double m = 0.0, q, qmin = 1e300
    cdef Py_ssize_t imin = 0
    apply_rows(B, p, lp, n)
    for i in range(n):
        q = c0 + lp[i]
        if q < qmin:
            qmin = q
            imin = i
    if not (qmin > 0.0):
        node[0] = imin
        qbad[0] = qmin
        return 1
    if qmin < q_floor:
        node[0] = imin
        qbad[0] = qmin
        return 2
    for i in range(n):
        k[i] = log(1.0 + lp[i] / c0)
        m += w[i] * k[i]
    for i in range(n):
        k[i] = k[i] - m + kappa * p[i]
    m_out[0] = m
    return 0


cdef double energy(const double[:, ::1] B, const double[::1] w, const double[::1] k,
                   double[::1] lp, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double e = 0.0
    apply_rows(B, k, lp, n)
    for i in range(n):
        e -= w[i] * k[i] * lp[i]
    return e


def rk4_integrate(double[:, ::1] rows, double[::1] w, double c0, double kappa,
                  psi0, double dt, long nsteps, long sample_every, long record_every,
                  double q_floor):
    """See :func:`sasakiflow._rk4_py.rk4_integrate` for the contract."""
    cdef Py_ssize_t n = w.shape[0], i
    cdef long s, ns = nsteps // sample_every + 1, nr = nsteps // record_every + 1
    cdef double[::1] psi = np.array(psi0, dtype=np.float64, copy=True)
    cdef double[::1] k1 = np.empty(n), k2 = np.empty(n), k3 = np.empty(n), k4 = np.empty(n)
    cdef double[::1] tmp = np.empty(n), lp = np.empty(n)
    samples_arr = np.empty((ns, n))
    m_arr = np.empty(nr)
    e_arr = np.empty(nr)
    cdef double[:, ::1] samples = samples_arr
    cdef double[::1] mrec = m_arr, erec = e_arr
    cdef double m = 0.0, mm = 0.0, qbad = 0.0, h2 = 0.5 * dt, h6 = dt / 6.0
    cdef Py_ssize_t node = -1
    cdef int status = 0
    cdef long fail_step = -1

    with nogil:
        for s in range(nsteps + 1):
            status = rhs(rows, w, c0, kappa, q_floor, psi, lp, k1, n, &m, &node, &qbad)
            if status != 0:
                fail_step = s
                break
            if s % record_every == 0:
                mrec[s // record_every] = m
                erec[s // record_every] = energy(rows, w, k1, lp, n)
            if s % sample_every == 0:
                for i in range(n):
                    samples[s // sample_every, i] = psi[i]
            if s == nsteps:
                break
            for i in range(n):
                tmp[i] = psi[i] + h2 * k1[i]
            status = rhs(rows, w, c0, kappa, q_floor, tmp, lp, k2, n, &mm, &node, &qbad)
            if status != 0:
                fail_step = s
                break
            for i in range(n):
                tmp[i] = psi[i] + h2 * k2[i]
            status = rhs(rows, w, c0, kappa, q_floor, tmp, lp, k3, n, &mm, &node, &qbad)
            if status != 0:
                fail_step = s
                break
            for i in range(n):
                tmp[i] = psi[i] + dt * k3[i]
            status = rhs(rows, w, c0, kappa, q_floor, tmp, lp, k4, n, &mm, &node, &qbad)
            if status != 0:
                fail_step = s
                break
            for i in range(n):
                psi[i] += h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])

    return {
        "samples": samples_arr,
        "m": m_arr,
        "energy": e_arr,
        "psi": np.asarray(psi),
        "status": status,
        "fail_step": fail_step,
        "fail_node": node,
        "fail_q": qbad,
    }
