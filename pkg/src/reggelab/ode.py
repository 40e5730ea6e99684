"""Batched adaptive Dormand-Prince 5(4) integration.

Every trajectory in the batch carries its own time and step size, so the
result for one trajectory does not depend on what else is in the batch.
Trajectories may be tied into groups; a group shares one step sequence (the
error is the max over its members), which keeps finite differences taken
across group members smooth.

The error norm is a max norm per trajectory. A flattened call to
scipy.integrate.solve_ivp would use an RMS norm over the whole batch, which
lets one badly resolved trajectory hide behind many easy ones.
"""
from __future__ import annotations

import numpy as np

from .errors import StepFailure

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def integrate(f, y0, t0=0.0, t1=1.0, t_eval=None, rtol=1e-10, atol=1e-12,
              groups=None, check=None, max_steps=20000, h0=None):
    """Integrate y' = f(t, y) for a batch of trajectories.

    f(t, y, idx) receives per-row times t (B',), states y (B', m) and the
    indices idx of the rows into the full batch, and returns (B', m).
    t_eval is a common increasing (or decreasing, if t1 < t0) sequence of
    output times inside [t0, t1]; the result then has shape (len(t_eval), B, m).
    Without t_eval the state at t1 is returned, shape (B, m).
    check(y, idx) may raise to abort (domain exits); it sees accepted states.
    """
    y = np.array(y0, dtype=float)
    if y.ndim != 2:
        raise ValueError("y0 must have shape (B, m)")
    B, m = y.shape
    direction = 1.0 if t1 >= t0 else -1.0
    span = abs(t1 - t0)
    if t_eval is None:
        outs = np.array([t1], dtype=float)
        squeeze = True
    else:
        outs = np.asarray(t_eval, dtype=float)
        squeeze = False
        if np.any(direction * np.diff(outs) < 0):
            raise ValueError("t_eval must be monotone in the integration direction")
    result = np.empty((len(outs), B, m))
    if B == 0:
        return result[0] if squeeze else result
    if span == 0.0:
        result[:] = y
        return result[0] if squeeze else result

    if groups is None:
        groups = np.arange(B)
    else:
        groups = np.asarray(groups)
        _, groups = np.unique(groups, return_inverse=True)
    ngroups = int(groups.max()) + 1

    t = np.full(B, float(t0))
    k_next = np.zeros(B, dtype=int)
    # outputs sitting exactly at t0
    while True:
        at0 = (k_next < len(outs)) & (outs[np.minimum(k_next, len(outs) - 1)] == t0)
        if not at0.any():
            break
        result[k_next[at0], np.flatnonzero(at0)] = y[at0]
        k_next[at0] += 1

    gh = np.full(ngroups, span * 0.01 if h0 is None else float(h0))
    active = k_next < len(outs)
    idx_all = np.arange(B)
    k1 = np.zeros_like(y)
    have_k1 = np.zeros(B, dtype=bool)
    steps = 0
    while active.any():
        steps += 1
        if steps > max_steps:
            raise StepFailure(f"exceeded {max_steps} integration steps")
        ia = idx_all[active]
        ta = t[ia]
        ya = y[ia]
        ga = groups[ia]
        target = outs[k_next[ia]]
        # group step, clipped so that no member overshoots its next output.
        remain = direction * (target - ta)
        h = np.minimum(gh[ga], remain)
        # members of one group share the clipped step
        hg = np.full(ngroups, np.inf)
        np.minimum.at(hg, ga, h)
        h = hg[ga]
        hit = h >= remain * (1 - 1e-14)
        h = np.where(hit, remain, h)
        hs = direction * h

        K = np.empty((7, len(ia), m))
        need = ~have_k1[ia]
        if need.all():
            K[0] = f(ta, ya, ia)
        else:
            K[0] = k1[ia]
            if need.any():
                K[0][need] = f(ta[need], ya[need], ia[need])
        for s in range(1, 7):
            yi = ya + hs[:, None] * np.tensordot(_A[s], K[:s], axes=(0, 0))
            K[s] = f(ta + _C[s] * hs, yi, ia)
        ynew = ya + hs[:, None] * np.tensordot(_B[:6], K[:6], axes=(0, 0))
        err = hs[:, None] * np.tensordot(_E, K, axes=(0, 0))
        sc = atol + rtol * np.maximum(np.abs(ya), np.abs(ynew))
        en = np.max(np.abs(err) / sc, axis=1)
        en = np.where(np.isfinite(en), en, np.inf)
        eg = np.zeros(ngroups)
        np.maximum.at(eg, ga, en)
        en_g = eg[ga]
        ok = en_g <= 1.0

        # step size update for every group touched this round
        touched = np.zeros(ngroups, dtype=bool)
        touched[ga] = True
        used = np.where(touched, hg, gh)
        fac = np.clip(0.9 * np.where(eg > 0, eg, 1e-10) ** -0.2, 0.2, 5.0)
        rej = touched & (eg > 1.0)
        acc_g = touched & ~rej
        gh = np.where(rej, used * np.minimum(fac, 0.9), gh)
        gh = np.where(acc_g, np.maximum(used * fac, np.where(used < gh, gh, 0.0)), gh)
        if np.any(gh[touched] < 1e-14 * span):
            raise StepFailure("step size underflow")

        acc = ia[ok]
        if len(acc):
            y[acc] = ynew[ok]
            t[acc] = np.where(hit[ok], target[ok], ta[ok] + hs[ok])
            k1[acc] = K[6][ok]
            have_k1[acc] = True
            if check is not None:
                check(y[acc], acc)
            done = acc[hit[ok]]
            if len(done):
                result[k_next[done], done] = y[done]
                k_next[done] += 1
                # further outputs at the same time
                while True:
                    more = done[(k_next[done] < len(outs))]
                    more = more[outs[k_next[more]] == t[more]]
                    if not len(more):
                        break
                    result[k_next[more], more] = y[more]
                    k_next[more] += 1
                active[done[k_next[done] >= len(outs)]] = False
    return result[0] if squeeze else result
