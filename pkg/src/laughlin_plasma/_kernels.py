"""Compiled inner loops for the Metropolis sampler.

Prefactors arrive in the flat encoding of ``Prefactor.kernel_args``:
code 0 = identity, 1 = quasi-hole product, 2 = quadratic exponential.
All positions are sampling coordinates; holes are physical.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def delta_log_weight(pos, i, qx, qy, ell, code, holes, mult, c_re, c_im):
    """Change of the log Gibbs weight when particle i moves to (qx, qy).

    Returns (delta, singular); singular is True when the new position
    coincides with another particle or a quasi-hole.
    """
    n = pos.shape[0]
    px = pos[i, 0]
    py = pos[i, 1]
    acc = 0.0
    for j in range(n):
        if j == i:
            continue
        ax = pos[j, 0]
        ay = pos[j, 1]
        dq = (qx - ax) * (qx - ax) + (qy - ay) * (qy - ay)
        if dq == 0.0:
            return 0.0, True
        dp = (px - ax) * (px - ax) + (py - ay) * (py - ay)
        acc += math.log(dq / dp)
    # 2 ell sum log|.| = ell sum log|.|^2
    delta = ell * acc - n * ((qx * qx + qy * qy) - (px * px + py * py))
    if code == 1:
        s = math.sqrt(n)
        for k in range(holes.shape[0]):
            bx = s * qx - holes[k, 0]
            by = s * qy - holes[k, 1]
            dq = bx * bx + by * by
            if dq == 0.0:
                return 0.0, True
            cx = s * px - holes[k, 0]
            cy = s * py - holes[k, 1]
            delta += mult[k] * math.log(dq / (cx * cx + cy * cy))
    elif code == 2:
        # 2 Re(c N (q^2 - p^2))
        re_q2 = qx * qx - qy * qy
        im_q2 = 2.0 * qx * qy
        re_p2 = px * px - py * py
        im_p2 = 2.0 * px * py
        delta += 2.0 * n * (c_re * (re_q2 - re_p2) - c_im * (im_q2 - im_p2))
    return delta, False


@njit(cache=True, nogil=True)
def metropolis_block(pos, sigma, ell, code, holes, mult, c_re, c_im, normals, uniforms,
                     record, counts, outside, x0, y0, h, r2_out, r2_offset):
    """Run ``normals.shape[0]`` sweeps of single-particle Gaussian moves in place.

    When ``record`` is set, every particle position is binned after each sweep
    and the per-sweep sum of |z|^2 is written to ``r2_out[r2_offset + s]``.
    Returns the number of accepted moves.
    """
    n_sweeps = normals.shape[0]
    n = pos.shape[0]
    ny = counts.shape[0]
    nx = counts.shape[1]
    accepted = 0
    for s in range(n_sweeps):
        for i in range(n):
            qx = pos[i, 0] + sigma * normals[s, i, 0]
            qy = pos[i, 1] + sigma * normals[s, i, 1]
            delta, singular = delta_log_weight(pos, i, qx, qy, ell, code, holes, mult, c_re, c_im)
            if singular:
                continue
            if delta >= 0.0 or uniforms[s, i] < math.exp(delta):
                pos[i, 0] = qx
                pos[i, 1] = qy
                accepted += 1
        if record:
            r2 = 0.0
            for i in range(n):
                x = pos[i, 0]
                y = pos[i, 1]
                r2 += x * x + y * y
                ix = int(math.floor((x - x0) / h))
                iy = int(math.floor((y - y0) / h))
                if 0 <= ix < nx and 0 <= iy < ny:
                    counts[iy, ix] += 1
                else:
                    outside[0] += 1
            r2_out[r2_offset + s] = r2
    return accepted
