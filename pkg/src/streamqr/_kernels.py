"""Compiled inner loops for the sequential pass.

Each function advances path state over one chunk of observations and is
resumable: all state lives in caller-owned arrays, so a stream larger than
memory is processed chunk by chunk with O(d + s^2) resident state.

The loops are compiled with numba when available (no fastmath: the Kahan
compensation must not be optimized away and results must be reproducible).
Set ``STREAMQR_NO_NUMBA=1`` to run the same code uncompiled.
"""

from __future__ import annotations

import os

import numpy as np

DIVERGENCE_GUARD = 1e12


def _advance_path(
    X,
    y,
    tau,
    gamma0,
    a,
    i0,
    beta,
    beta_bar,
    dense_coords,
    dense_ref,
    A,
    cA,
    b,
    cb,
    diag_coords,
    diag_ref,
    Ad,
    cAd,
    bd,
    cbd,
    sp_on,
    sp_lambda,
    sp_counts,
    guard,
):
    """One S-subGD pass over a chunk; returns the 1-based step of divergence, or 0.

    ``i0`` is the number of steps completed before this chunk.  ``dense_*``
    holds a full/subvector accumulator (empty coords to disable), ``diag_*``
    a diagonal one.  ``sp_*`` counts per-coordinate threshold exceedances of
    the running t-ratio (diagonal accumulator required).
    """
    m, d = X.shape
    sd = dense_coords.shape[0]
    sg = diag_coords.shape[0]
    i = i0
    for t in range(m):
        i += 1
        fi = float(i)
        xb = 0.0
        for k in range(d):
            xb += X[t, k] * beta[k]
        ind = 1.0 if y[t] <= xb else 0.0
        c = gamma0 * fi ** (-a) * (ind - tau)
        bad = False
        for k in range(d):
            v = beta[k] - c * X[t, k]
            beta[k] = v
            if not (-guard <= v <= guard):
                bad = True
        if bad:
            return i
        ratio = (fi - 1.0) / fi
        inv = 1.0 / fi
        for k in range(d):
            beta_bar[k] = beta_bar[k] * ratio + beta[k] * inv
        w2 = fi * fi
        for p in range(sd):
            dp = beta_bar[dense_coords[p]] - dense_ref[p]
            wdp = w2 * dp
            term = wdp - cb[p]
            tot = b[p] + term
            cb[p] = (tot - b[p]) - term
            b[p] = tot
            for q in range(sd):
                dq = beta_bar[dense_coords[q]] - dense_ref[q]
                term2 = wdp * dq - cA[p, q]
                tot2 = A[p, q] + term2
                cA[p, q] = (tot2 - A[p, q]) - term2
                A[p, q] = tot2
        if sg > 0:
            s2f = fi * (fi + 1.0) * (2.0 * fi + 1.0) / 6.0
            inv2 = inv * inv
            for p in range(sg):
                dp = beta_bar[diag_coords[p]] - diag_ref[p]
                wdp = w2 * dp
                term = wdp - cbd[p]
                tot = bd[p] + term
                cbd[p] = (tot - bd[p]) - term
                bd[p] = tot
                term2 = wdp * dp - cAd[p]
                tot2 = Ad[p] + term2
                cAd[p] = (tot2 - Ad[p]) - term2
                Ad[p] = tot2
                if sp_on:
                    vjj = inv2 * (Ad[p] - 2.0 * dp * bd[p] + dp * dp * s2f)
                    if vjj > 0.0:
                        tval = beta_bar[diag_coords[p]] / np.sqrt(vjj / fi)
                        if tval > sp_lambda or tval < -sp_lambda:
                            sp_counts[p] += 1
    return 0


def _advance_two_paths(
    X,
    y,
    tau1,
    tau2,
    gamma01,
    gamma02,
    a1,
    a2,
    i0,
    beta1,
    beta2,
    bar1,
    bar2,
    coords,
    ref,
    A,
    cA,
    b,
    cb,
    guard,
):
    """Two synchronized paths over one chunk, stacked-subvector accumulator.

    ``ref`` has length 2s: centering values for (path-1 coords, path-2 coords).
    Returns the 1-based step of divergence (either path), or 0.
    """
    m, d = X.shape
    s = coords.shape[0]
    i = i0
    for t in range(m):
        i += 1
        fi = float(i)
        xb1 = 0.0
        xb2 = 0.0
        for k in range(d):
            xb1 += X[t, k] * beta1[k]
            xb2 += X[t, k] * beta2[k]
        c1 = gamma01 * fi ** (-a1) * ((1.0 if y[t] <= xb1 else 0.0) - tau1)
        c2 = gamma02 * fi ** (-a2) * ((1.0 if y[t] <= xb2 else 0.0) - tau2)
        bad = False
        for k in range(d):
            v1 = beta1[k] - c1 * X[t, k]
            v2 = beta2[k] - c2 * X[t, k]
            beta1[k] = v1
            beta2[k] = v2
            if not (-guard <= v1 <= guard) or not (-guard <= v2 <= guard):
                bad = True
        if bad:
            return i
        ratio = (fi - 1.0) / fi
        inv = 1.0 / fi
        for k in range(d):
            bar1[k] = bar1[k] * ratio + beta1[k] * inv
            bar2[k] = bar2[k] * ratio + beta2[k] * inv
        w2 = fi * fi
        for p in range(2 * s):
            if p < s:
                dp = bar1[coords[p]] - ref[p]
            else:
                dp = bar2[coords[p - s]] - ref[p]
            wdp = w2 * dp
            term = wdp - cb[p]
            tot = b[p] + term
            cb[p] = (tot - b[p]) - term
            b[p] = tot
            for q in range(2 * s):
                if q < s:
                    dq = bar1[coords[q]] - ref[q]
                else:
                    dq = bar2[coords[q - s]] - ref[q]
                term2 = wdp * dq - cA[p, q]
                tot2 = A[p, q] + term2
                cA[p, q] = (tot2 - A[p, q]) - term2
                A[p, q] = tot2
    return 0


def _compile(fn):
    import numba

    return numba.njit(cache=True, nogil=True)(fn)


if os.environ.get("STREAMQR_NO_NUMBA", "") not in ("", "0"):
    advance_path = _advance_path
    advance_two_paths = _advance_two_paths
    COMPILED = False
else:
    try:
        advance_path = _compile(_advance_path)
        advance_two_paths = _compile(_advance_two_paths)
        COMPILED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        advance_path = _advance_path
        advance_two_paths = _advance_two_paths
        COMPILED = False
