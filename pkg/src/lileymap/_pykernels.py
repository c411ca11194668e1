"""Pure-Python kernels; same interface and results as the compiled extension.

``c`` is the packed coefficient vector from :func:`lileymap.model.pack_coefficients`.
"""
from __future__ import annotations

import math

import numpy as np

IMPLEMENTATION = "python"

_E_ROWS = ((2, 12, 16, 20), (6, 14, 18, 22))  # (I index, gamma, amplitude, N_beta) driven by S_e
_I_ROWS = ((4, 13, 17, 21), (8, 15, 19, 23))  # driven by S_i


def sigmoid(h, smax, mu, slope):
    z = slope * (h - mu)
    if z >= 0:
        return smax / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return smax * ez / (1.0 + ez)


def _rates(x, c):
    s_e = sigmoid(x[0], c[27], c[29], c[31])
    s_i = sigmoid(x[1], c[28], c[30], c[32])
    # derivative of the logistic: slope * S * (1 - S / S_max)
    ds_e = c[31] * s_e * (1.0 - s_e / c[27])
    ds_i = c[32] * s_i * (1.0 - s_i / c[28])
    return s_e, s_i, ds_e, ds_i


def rhs_into(x, c, out):
    s_e, s_i, _, _ = _rates(x, c)
    h_e, h_i = x[0], x[1]
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
    return out


def rhs(x, c):
    return rhs_into(x, c, np.empty(14))


def jac_into(x, c, J):
    J[:] = 0.0
    _, _, ds_e, ds_i = _rates(x, c)
    h_e, h_i = x[0], x[1]
    J[0, 0] = (-1.0 - c[8] * x[2] - c[9] * x[4]) * c[2]
    J[0, 2] = (c[4] - h_e) * c[8] * c[2]
    J[0, 4] = (c[5] - h_e) * c[9] * c[2]
    J[1, 1] = (-1.0 - c[10] * x[6] - c[11] * x[8]) * c[3]
    J[1, 6] = (c[6] - h_i) * c[10] * c[3]
    J[1, 8] = (c[7] - h_i) * c[11] * c[3]
    for idx, gi in ((2, 12), (4, 13), (6, 14), (8, 15)):
        g = c[gi]
        J[idx, idx + 1] = 1.0
        J[idx + 1, idx] = -g * g
        J[idx + 1, idx + 1] = -2.0 * g
    J[3, 0] = c[16] * c[20] * ds_e
    J[3, 10] = c[16]
    J[7, 0] = c[18] * c[22] * ds_e
    J[7, 12] = c[18]
    J[5, 1] = c[17] * c[21] * ds_i
    J[9, 1] = c[19] * c[23] * ds_i
    w = c[26]
    for idx, na in ((10, 24), (12, 25)):
        J[idx, idx + 1] = 1.0
        J[idx + 1, idx] = -w * w
        J[idx + 1, idx + 1] = -2.0 * w
        J[idx + 1, 0] = c[na] * w * w * ds_e
    return J


def jac(x, c):
    return jac_into(x, c, np.empty((14, 14)))


def integrate(x0, c, dt, nsteps, sample_every=0):
    """Classical RK4 with fixed step; optionally records every n-th state."""
    x = np.array(x0, dtype=float)
    nsamp = nsteps // sample_every + 1 if sample_every > 0 else 0
    samples = np.empty((nsamp, 14))
    if nsamp:
        samples[0] = x
    k1, k2, k3, k4 = (np.empty(14) for _ in range(4))
    j = 1
    for step in range(1, nsteps + 1):
        rhs_into(x, c, k1)
        rhs_into(x + 0.5 * dt * k1, c, k2)
        rhs_into(x + 0.5 * dt * k2, c, k3)
        rhs_into(x + dt * k3, c, k4)
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if sample_every > 0 and step % sample_every == 0:
            samples[j] = x
            j += 1
        if not np.isfinite(x[0]):
            break
    return x, samples


def integrate_variational(x0, c, dt, nsteps):
    """RK4 on the state and its 14x14 sensitivity matrix.

    Returns the final state, the state-transition matrix, and the maximum
    and minimum of h_e along the trajectory (sampled at the steps).
    """
    x = np.array(x0, dtype=float)
    M = np.eye(14)
    hmax = hmin = x[0]
    J = np.empty((14, 14))
    for _ in range(nsteps):
        k1 = rhs(x, c)
        K1 = jac_into(x, c, J) @ M
        xa = x + 0.5 * dt * k1
        k2 = rhs(xa, c)
        K2 = jac_into(xa, c, J) @ (M + 0.5 * dt * K1)
        xb = x + 0.5 * dt * k2
        k3 = rhs(xb, c)
        K3 = jac_into(xb, c, J) @ (M + 0.5 * dt * K2)
        xc = x + dt * k3
        k4 = rhs(xc, c)
        K4 = jac_into(xc, c, J) @ (M + dt * K3)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        M = M + dt / 6.0 * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
        if x[0] > hmax:
            hmax = x[0]
        if x[0] < hmin:
            hmin = x[0]
    return x, M, hmax, hmin


def simulate_em(x0, c, dt, b, normals, sample_every, bound):
    """Euler-Maruyama with scalar noise entering through the gain vector ``b``.

    ``normals`` holds one standard-normal draw per step, already multiplied by
    sqrt(dt) and the noise amplitude.  Returns h_e every ``sample_every`` steps
    and the index of the step at which the state exceeded ``bound`` (-1 if never).
    """
    x = np.array(x0, dtype=float)
    b = np.asarray(b, dtype=float)
    nsteps = normals.shape[0]
    out = np.empty(nsteps // sample_every)
    f = np.empty(14)
    j = 0
    for step in range(nsteps):
        rhs_into(x, c, f)
        x += dt * f + b * normals[step]
        if abs(x[0]) > bound or not math.isfinite(x[0]):
            return out[:j], step
        if (step + 1) % sample_every == 0:
            out[j] = x[0]
            j += 1
    return out, -1
