# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the Liley right-hand side, Jacobian and integrators.

Mirrors ``_pykernels`` line by line; the coefficient layout is the one built
by ``model.pack_coefficients``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, isfinite

cnp.import_array()

IMPLEMENTATION = "cython"


cdef inline double _sig(double h, double smax, double mu, double slope) nogil:
    cdef double z = slope * (h - mu)
    cdef double ez
    if z >= 0:
        return smax / (1.0 + exp(-z))
    ez = exp(z)
    return smax * ez / (1.0 + ez)


def sigmoid(double h, double smax, double mu, double slope):
    return _sig(h, smax, mu, slope)


cdef inline void _rhs(const double* x, const double* c, double* out) nogil:
    cdef double s_e = _sig(x[0], c[27], c[29], c[31])
    cdef double s_i = _sig(x[1], c[28], c[30], c[32])
    cdef double h_e = x[0]
    cdef double h_i = x[1]
    cdef double g, w
    out[0] = (c[0] - h_e + (c[4] - h_e) * c[8] * x[2] + (c[5] - h_e) * c[9] * x[4]) * c[2]
    out[1] = (c[1] - h_i + (c[6] - h_i) * c[10] * x[6] + (c[7] - h_i) * c[11] * x[8]) * c[3]
    g = c[12]
    out[2] = x[3]
    out[3] = -2.0 * g * x[3] - g * g * x[2] + c[16] * (c[20] * s_e + c[33] + x[10])
    g = c[14]
    out[6] = x[7]
    out[7] = -2.0 * g * x[7] - g * g * x[6] + c[18] * (c[22] * s_e + c[34] + x[12])
    g = c[13]
    out[4] = x[5]
    out[5] = -2.0 * g * x[5] - g * g * x[4] + c[17] * c[21] * s_i
    g = c[15]
    out[8] = x[9]
    out[9] = -2.0 * g * x[9] - g * g * x[8] + c[19] * c[23] * s_i
    w = c[26]
    out[10] = x[11]
    out[11] = -2.0 * w * x[11] - w * w * x[10] + c[24] * w * w * s_e
    out[12] = x[13]
    out[13] = -2.0 * w * x[13] - w * w * x[12] + c[25] * w * w * s_e


cdef inline void _jac(const double* x, const double* c, double* J) nogil:
    # J is row-major 14x14
    cdef int i
    cdef double s_e, s_i, ds_e, ds_i, g, w
    for i in range(196):
        J[i] = 0.0
    s_e = _sig(x[0], c[27], c[29], c[31])
    s_i = _sig(x[1], c[28], c[30], c[32])
    ds_e = c[31] * s_e * (1.0 - s_e / c[27])
    ds_i = c[32] * s_i * (1.0 - s_i / c[28])
    J[0] = (-1.0 - c[8] * x[2] - c[9] * x[4]) * c[2]
    J[2] = (c[4] - x[0]) * c[8] * c[2]
    J[4] = (c[5] - x[0]) * c[9] * c[2]
    J[14 + 1] = (-1.0 - c[10] * x[6] - c[11] * x[8]) * c[3]
    J[14 + 6] = (c[6] - x[1]) * c[10] * c[3]
    J[14 + 8] = (c[7] - x[1]) * c[11] * c[3]
    for i in range(4):
        g = c[12 + i]
        # I blocks sit at rows 2, 4, 6, 8 with gammas ee, ie, ei, ii
        J[(2 + 2 * i) * 14 + 3 + 2 * i] = 1.0
        J[(3 + 2 * i) * 14 + 2 + 2 * i] = -g * g
        J[(3 + 2 * i) * 14 + 3 + 2 * i] = -2.0 * g
    J[3 * 14 + 0] = c[16] * c[20] * ds_e
    J[3 * 14 + 10] = c[16]
    J[7 * 14 + 0] = c[18] * c[22] * ds_e
    J[7 * 14 + 12] = c[18]
    J[5 * 14 + 1] = c[17] * c[21] * ds_i
    J[9 * 14 + 1] = c[19] * c[23] * ds_i
    w = c[26]
    J[10 * 14 + 11] = 1.0
    J[11 * 14 + 10] = -w * w
    J[11 * 14 + 11] = -2.0 * w
    J[11 * 14 + 0] = c[24] * w * w * ds_e
    J[12 * 14 + 13] = 1.0
    J[13 * 14 + 12] = -w * w
    J[13 * 14 + 13] = -2.0 * w
    J[13 * 14 + 0] = c[25] * w * w * ds_e


def rhs(const double[::1] x, const double[::1] c):
    out = np.empty(14)
    cdef double[::1] o = out
    _rhs(&x[0], &c[0], &o[0])
    return out


def jac(const double[::1] x, const double[::1] c):
    out = np.empty((14, 14))
    cdef double[:, ::1] o = out
    _jac(&x[0], &c[0], &o[0, 0])
    return out


def integrate(x0, const double[::1] c, double dt, long nsteps, long sample_every=0):
    cdef double[::1] x = np.array(x0, dtype=float)
    cdef long nsamp = nsteps // sample_every + 1 if sample_every > 0 else 0
    samples = np.empty((nsamp, 14))
    cdef double[:, ::1] sv = samples
    cdef double k1[14]
    cdef double k2[14]
    cdef double k3[14]
    cdef double k4[14]
    cdef double tmp[14]
    cdef long step, j = 1
    cdef int i
    if nsamp:
        for i in range(14):
            sv[0, i] = x[i]
    with nogil:
        for step in range(1, nsteps + 1):
            _rhs(&x[0], &c[0], k1)
            for i in range(14):
                tmp[i] = x[i] + 0.5 * dt * k1[i]
            _rhs(tmp, &c[0], k2)
            for i in range(14):
                tmp[i] = x[i] + 0.5 * dt * k2[i]
            _rhs(tmp, &c[0], k3)
            for i in range(14):
                tmp[i] = x[i] + dt * k3[i]
            _rhs(tmp, &c[0], k4)
            for i in range(14):
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if sample_every > 0 and step % sample_every == 0:
                for i in range(14):
                    sv[j, i] = x[i]
                j += 1
            if not isfinite(x[0]):
                break
    return np.asarray(x), samples


cdef inline void _matmul(const double* A, const double* B, double* C) nogil:
    cdef int i, j, l
    cdef double acc, a
    for i in range(14):
        for j in range(14):
            C[i * 14 + j] = 0.0
        for l in range(14):
            a = A[i * 14 + l]
            if a != 0.0:
                for j in range(14):
                    C[i * 14 + j] += a * B[l * 14 + j]


def integrate_variational(x0, const double[::1] c, double dt, long nsteps):
    cdef double[::1] x = np.array(x0, dtype=float)
    Mout = np.eye(14)
    cdef double[:, ::1] M = Mout
    cdef double k1[14]
    cdef double k2[14]
    cdef double k3[14]
    cdef double k4[14]
    cdef double xt[14]
    cdef double J[196]
    cdef double Mt[196]
    cdef double K1[196]
    cdef double K2[196]
    cdef double K3[196]
    cdef double K4[196]
    cdef double hmax = x[0]
    cdef double hmin = x[0]
    cdef long step
    cdef int i
    with nogil:
        for step in range(nsteps):
            _rhs(&x[0], &c[0], k1)
            _jac(&x[0], &c[0], J)
            _matmul(J, &M[0, 0], K1)
            for i in range(14):
                xt[i] = x[i] + 0.5 * dt * k1[i]
            for i in range(196):
                Mt[i] = (&M[0, 0])[i] + 0.5 * dt * K1[i]
            _rhs(xt, &c[0], k2)
            _jac(xt, &c[0], J)
            _matmul(J, Mt, K2)
            for i in range(14):
                xt[i] = x[i] + 0.5 * dt * k2[i]
            for i in range(196):
                Mt[i] = (&M[0, 0])[i] + 0.5 * dt * K2[i]
            _rhs(xt, &c[0], k3)
            _jac(xt, &c[0], J)
            _matmul(J, Mt, K3)
            for i in range(14):
                xt[i] = x[i] + dt * k3[i]
            for i in range(196):
                Mt[i] = (&M[0, 0])[i] + dt * K3[i]
            _rhs(xt, &c[0], k4)
            _jac(xt, &c[0], J)
            _matmul(J, Mt, K4)
            for i in range(14):
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            for i in range(196):
                (&M[0, 0])[i] += dt / 6.0 * (K1[i] + 2.0 * K2[i] + 2.0 * K3[i] + K4[i])
            if x[0] > hmax:
                hmax = x[0]
            if x[0] < hmin:
                hmin = x[0]
    return np.asarray(x), Mout, hmax, hmin


def simulate_em(x0, const double[::1] c, double dt, b, const double[::1] normals,
                long sample_every, double bound):
    cdef double[::1] x = np.array(x0, dtype=float)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=float)
    cdef long nsteps = normals.shape[0]
    out = np.empty(nsteps // sample_every)
    cdef double[::1] ov = out
    cdef double f[14]
    cdef long step, j = 0
    cdef long blown = -1
    cdef int i
    with nogil:
        for step in range(nsteps):
            _rhs(&x[0], &c[0], f)
            for i in range(14):
                x[i] += dt * f[i] + bv[i] * normals[step]
            if fabs(x[0]) > bound or not isfinite(x[0]):
                blown = step
                break
            if (step + 1) % sample_every == 0:
                ov[j] = x[0]
                j += 1
    if blown >= 0:
        return out[:j], blown
    return out, -1
