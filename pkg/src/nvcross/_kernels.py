"""Numba-compiled batched log-likelihood kernels for the posterior scans.

Each batch entry is scored independently and written to its own output
slot, so results are bit-identical for any worker-thread count. The
per-point variance follows the noise model: measurement noise plus
central-finite-difference propagation of the bias and angle uncertainties
through the PL model; when both axis uncertainties are zero a fast path
skips the four extra PL evaluations.
"""

from __future__ import annotations

import math
import os

import numpy as np
from numba import config as _numba_config
from numba import njit, prange, set_num_threads

# The portable layer: always available, deterministic scheduling overhead
# is irrelevant next to the per-point work.
_numba_config.THREADING_LAYER = "workqueue"

LORENTZIAN = 0
GAUSSIAN = 1

_LN2 = math.log(2.0)
_LOG_2PI = math.log(2.0 * math.pi)


def max_threads() -> int:
    return int(_numba_config.NUMBA_NUM_THREADS)


def resolve_threads(requested: int | None = None) -> int:
    """Worker-thread count: explicit request, else NVCROSS_THREADS, else max."""
    if requested is None:
        env = os.environ.get("NVCROSS_THREADS", "").strip()
        requested = int(env) if env else max_threads()
    return max(1, min(int(requested), max_threads()))


def apply_threads(requested: int | None = None) -> int:
    n = resolve_threads(requested)
    set_num_threads(n)
    return n


@njit(inline="always", fastmath=True)
def _pl_point(bx, by, bz, gamma, contrast, w, kind):
    d0 = bx - by
    d1 = bx + by
    d2 = bx - bz
    d3 = bx + bz
    d4 = by - bz
    d5 = by + bz
    if kind == LORENTZIAN:
        g2 = gamma * gamma
        s = (
            w[0] * g2 / (d0 * d0 + g2)
            + w[1] * g2 / (d1 * d1 + g2)
            + w[2] * g2 / (d2 * d2 + g2)
            + w[3] * g2 / (d3 * d3 + g2)
            + w[4] * g2 / (d4 * d4 + g2)
            + w[5] * g2 / (d5 * d5 + g2)
            + w[6] * g2 / (bx * bx + g2)
            + w[7] * g2 / (by * by + g2)
            + w[8] * g2 / (bz * bz + g2)
        )
    else:
        a = _LN2 / (gamma * gamma)
        s = (
            w[0] * math.exp(-a * d0 * d0)
            + w[1] * math.exp(-a * d1 * d1)
            + w[2] * math.exp(-a * d2 * d2)
            + w[3] * math.exp(-a * d3 * d3)
            + w[4] * math.exp(-a * d4 * d4)
            + w[5] * math.exp(-a * d5 * d5)
            + w[6] * math.exp(-a * bx * bx)
            + w[7] * math.exp(-a * by * by)
            + w[8] * math.exp(-a * bz * bz)
        )
    return 1.0 - contrast * s


@njit(inline="always", fastmath=True)
def _loglik_one(
    O,
    data,
    bias,
    phi,
    ex,
    ey,
    bz_ext,
    gamma,
    contrast,
    w,
    kind,
    sigma_noise,
    sigma_b,
    sigma_phi,
    hb,
    hphi,
):
    nb = bias.shape[0]
    nphi = phi.shape[0]
    sn2 = sigma_noise * sigma_noise
    sb2 = sigma_b * sigma_b
    sp2 = sigma_phi * sigma_phi
    with_fd = sb2 > 0.0 or sp2 > 0.0

    o3x = O[0, 2]
    o3y = O[1, 2]
    o3z = O[2, 2]

    total = 0.0
    for j in range(nphi):
        c0 = math.cos(phi[j])
        s0 = math.sin(phi[j])
        # a(phi) = O[:,0]*(c*ex + s*ey) + O[:,1]*(-s*ex + c*ey)
        vx = c0 * ex + s0 * ey
        vy = -s0 * ex + c0 * ey
        ax0 = O[0, 0] * vx + O[0, 1] * vy
        ay0 = O[1, 0] * vx + O[1, 1] * vy
        az0 = O[2, 0] * vx + O[2, 1] * vy
        if with_fd:
            h = hphi[j]
            cm = math.cos(phi[j] - h)
            sm = math.sin(phi[j] - h)
            cp = math.cos(phi[j] + h)
            sp = math.sin(phi[j] + h)
            vxm = cm * ex + sm * ey
            vym = -sm * ex + cm * ey
            vxp = cp * ex + sp * ey
            vyp = -sp * ex + cp * ey
            axm = O[0, 0] * vxm + O[0, 1] * vym
            aym = O[1, 0] * vxm + O[1, 1] * vym
            azm = O[2, 0] * vxm + O[2, 1] * vym
            axp = O[0, 0] * vxp + O[0, 1] * vyp
            ayp = O[1, 0] * vxp + O[1, 1] * vyp
            azp = O[2, 0] * vxp + O[2, 1] * vyp
        else:
            axm = aym = azm = axp = ayp = azp = 0.0
            h = 0.0

        for i in range(nb):
            bz_tot = bz_ext + bias[i]
            pl0 = _pl_point(
                ax0 + bz_tot * o3x,
                ay0 + bz_tot * o3y,
                az0 + bz_tot * o3z,
                gamma,
                contrast,
                w,
                kind,
            )
            r = data[i, j] - pl0
            if with_fd:
                var = sn2
                if sb2 > 0.0:
                    bm = bz_tot - hb[i]
                    bp = bz_tot + hb[i]
                    pl_bm = _pl_point(
                        ax0 + bm * o3x, ay0 + bm * o3y, az0 + bm * o3z,
                        gamma, contrast, w, kind,
                    )
                    pl_bp = _pl_point(
                        ax0 + bp * o3x, ay0 + bp * o3y, az0 + bp * o3z,
                        gamma, contrast, w, kind,
                    )
                    gb = (pl_bp - pl_bm) / (2.0 * hb[i])
                    var += gb * gb * sb2
                if sp2 > 0.0:
                    pl_pm = _pl_point(
                        axm + bz_tot * o3x, aym + bz_tot * o3y, azm + bz_tot * o3z,
                        gamma, contrast, w, kind,
                    )
                    pl_pp = _pl_point(
                        axp + bz_tot * o3x, ayp + bz_tot * o3y, azp + bz_tot * o3z,
                        gamma, contrast, w, kind,
                    )
                    gp = (pl_pp - pl_pm) / (2.0 * hphi[j])
                    var += gp * gp * sp2
                total += r * r / var + math.log(var) + _LOG_2PI
            else:
                total += r * r
    if not with_fd:
        n = nb * nphi
        total = total / sn2 + n * (math.log(sn2) + _LOG_2PI)
    return -0.5 * total


@njit(parallel=True, fastmath=True, cache=True)
def loglik_orientation_batch(
    mats,
    data,
    bias,
    phi,
    ex,
    ey,
    bz_ext,
    gamma,
    contrast,
    w,
    kind,
    sigma_noise,
    sigma_b,
    sigma_phi,
    hb,
    hphi,
    out,
):
    for k in prange(mats.shape[0]):
        out[k] = _loglik_one(
            mats[k],
            data,
            bias,
            phi,
            ex,
            ey,
            bz_ext,
            gamma,
            contrast,
            w,
            kind,
            sigma_noise,
            sigma_b,
            sigma_phi,
            hb,
            hphi,
        )


@njit(parallel=True, fastmath=True, cache=True)
def loglik_field_batch(
    fields,
    O,
    data,
    bias,
    phi,
    gamma,
    contrast,
    w,
    kind,
    sigma_noise,
    sigma_b,
    sigma_phi,
    hb,
    hphi,
    out,
):
    for k in prange(fields.shape[0]):
        b_z = fields[k, 0]
        b_perp = fields[k, 1]
        phi0 = fields[k, 2]
        ex = b_perp * math.cos(phi0)
        ey = b_perp * math.sin(phi0)
        out[k] = _loglik_one(
            O,
            data,
            bias,
            phi,
            ex,
            ey,
            b_z,
            gamma,
            contrast,
            w,
            kind,
            sigma_noise,
            sigma_b,
            sigma_phi,
            hb,
            hphi,
        )
