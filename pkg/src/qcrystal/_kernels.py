"""Compiled Metropolis sweeps for the path-integral sampler."""

import numpy as np
from numba import njit

# columns appended after the monomials in the record array
N_SPECIAL = 3


@njit(cache=True, nogil=True)
def _site_energy(c, a, h, x):
    t = x * x
    out = 0.0
    for k in range(c.shape[0] - 1, -1, -1):
        out = (out + c[k]) * t
    return out + 0.5 * a * t - h * x


@njit(cache=True, nogil=True)
def _field_at(x, J, bfield, i, t):
    s = bfield[i, t]
    for j in range(J.shape[0]):
        s += J[i, j] * x[j, t]
    return s


@njit(cache=True, nogil=True)
def cluster_reflection(x, eps, fields, J, bfield, uc, in_cluster, stack):
    """Wolff reflection ``x_i -> -x_i`` of a cluster of whole site loops.

    Bonds join ``i`` and ``j`` with probability
    ``1 - exp(-2 eps J_ij sum_t x_it x_jt)`` when that exponent is
    negative, which cancels the change of the coupling energy. The
    flip is then accepted on the change of the odd site terms (uniform
    and boundary fields), the only part of the action left over.
    """
    n, P = x.shape
    seed = int(uc[0] * n)
    if seed >= n:
        seed = n - 1
    in_cluster[:] = False
    in_cluster[seed] = True
    stack[0] = seed
    top = 1
    while top > 0:
        top -= 1
        i = stack[top]
        for j in range(n):
            if in_cluster[j] or J[i, j] == 0.0:
                continue
            c = 0.0
            for t in range(P):
                c += x[i, t] * x[j, t]
            w = 2.0 * eps * J[i, j] * c
            if w > 0.0 and uc[2 + i * n + j] < 1.0 - np.exp(-w):
                in_cluster[j] = True
                stack[top] = j
                top += 1
    dS = 0.0
    for i in range(n):
        if in_cluster[i]:
            for t in range(P):
                dS += 2.0 * x[i, t] * (fields[i] + bfield[i, t])
    dS *= eps
    if dS > 0.0 and uc[1] >= np.exp(-dS):
        return False
    for i in range(n):
        if in_cluster[i]:
            for t in range(P):
                x[i, t] = -x[i, t]
    return True


@njit(cache=True, nogil=True)
def metropolis_sweeps(x, n_sweeps, eps, kin, a, coeffs, fields, J, bfield, widths, mix, u, acc,
                      rec, mono_idx, mono_len, n_cluster, uc):
    """Run ``n_sweeps`` sweeps of ``n*P`` attempts each, in place.

    ``u`` holds three uniforms per attempt. After each sweep,
    ``n_cluster`` cluster reflections are attempted, each using
    ``n*n + 2`` entries of ``uc``. ``acc`` accumulates ``[accepted single,
    tried single, accepted shift, tried shift, accepted cluster, tried
    cluster]``.
    If ``rec`` has rows, row ``s`` receives the monomials (flat indices
    ``site*P + slice``) followed by the block observables after sweep
    ``s``.
    """
    n, P = x.shape
    per = n * P
    record = rec.shape[0] > 0
    n_mono = mono_idx.shape[0]
    k = 0
    kc = 0
    in_cluster = np.zeros(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    for s in range(n_sweeps):
        for _ in range(per):
            u1 = u[k]
            u2 = u[k + 1]
            u3 = u[k + 2]
            k += 3
            if u1 < mix:
                idx = int(u1 / mix * per)
                if idx >= per:
                    idx = per - 1
                i = idx // P
                t = idx - i * P
                old = x[i, t]
                new = old + widths[0] * (2.0 * u2 - 1.0)
                tp = t + 1 if t + 1 < P else 0
                tm = t - 1 if t > 0 else P - 1
                dk = (x[i, tp] - new) ** 2 + (new - x[i, tm]) ** 2 - (x[i, tp] - old) ** 2 - (old - x[i, tm]) ** 2
                dS = kin * dk + eps * (_site_energy(coeffs[i], a, fields[i], new)
                                       - _site_energy(coeffs[i], a, fields[i], old))
                dS -= eps * (new - old) * _field_at(x, J, bfield, i, t)
                acc[1] += 1.0
                if dS <= 0.0 or u3 < np.exp(-dS):
                    x[i, t] = new
                    acc[0] += 1.0
            else:
                i = int((u1 - mix) / (1.0 - mix) * n)
                if i >= n:
                    i = n - 1
                delta = widths[1] * (2.0 * u2 - 1.0)
                dS = 0.0
                for t in range(P):
                    old = x[i, t]
                    dS += _site_energy(coeffs[i], a, fields[i], old + delta) - _site_energy(coeffs[i], a, fields[i], old)
                    dS -= delta * _field_at(x, J, bfield, i, t)
                dS *= eps
                acc[3] += 1.0
                if dS <= 0.0 or u3 < np.exp(-dS):
                    for t in range(P):
                        x[i, t] += delta
                    acc[2] += 1.0
        for _ in range(n_cluster):
            if cluster_reflection(x, eps, fields, J, bfield, uc[kc : kc + n * n + 2], in_cluster, stack):
                acc[4] += 1.0
            acc[5] += 1.0
            kc += n * n + 2
        if record:
            for m in range(n_mono):
                v = 1.0
                for j in range(mono_len[m]):
                    f = mono_idx[m, j]
                    v *= x[f // P, f % P]
                rec[s, m] = v
            m2 = 0.0
            sq = 0.0
            for t in range(P):
                b = 0.0
                for i in range(n):
                    b += x[i, t]
                    sq += x[i, t] * x[i, t]
                b /= n
                m2 += b * b
                if t == 0:
                    rec[s, n_mono + 1] = b * b
            rec[s, n_mono] = m2 / P
            rec[s, n_mono + 2] = sq / (n * P)
    return k
