"""Compiled inner loops for the mean-field belief updates."""
import numpy as np
from numba import njit


@njit(cache=True)
def vertex_field(i, mu, log_mu0, a_e, a_w, eta_e, eta_w,
                 out_ptr, out_nbr, out_T, in_ptr, in_nbr, in_T,
                 c_out, c_in, mo_ptr, mo_nbr, mi_ptr, mi_nbr, excl,
                 cs_out, cs_in, g, V_out, V_in, U_out, U_in, P_out, P_in):
    """Fill ``g`` with ``log mu0 + sum_r d<T>_r/d mu_i . <eta>_r`` for vertex i."""
    K = mu.shape[1]
    Dw = out_T.shape[1]
    for z in range(K):
        g[z] = log_mu0[z]
        U_out[z] = 0.0
        U_in[z] = 0.0
        for d in range(Dw):
            V_out[d, z] = 0.0
            V_in[d, z] = 0.0
    for e in range(out_ptr[i], out_ptr[i + 1]):
        j = out_nbr[e]
        for z in range(K):
            m = mu[j, z]
            U_out[z] += m
            for d in range(Dw):
                V_out[d, z] += out_T[e, d] * m
    for e in range(in_ptr[i], in_ptr[i + 1]):
        j = in_nbr[e]
        for z in range(K):
            m = mu[j, z]
            U_in[z] += m
            for d in range(Dw):
                V_in[d, z] += in_T[e, d] * m
    if a_w != 0.0:
        for z in range(K):
            acc = 0.0
            for d in range(Dw):
                for zp in range(K):
                    acc += eta_w[d, z, zp] * V_out[d, zp] + eta_w[d, zp, z] * V_in[d, zp]
            g[z] += a_w * acc
    if a_e != 0.0:
        ci_o = c_out[i]
        ci_i = c_in[i]
        for z in range(K):
            P_out[z] = cs_in[z]
            P_in[z] = cs_out[z]
            if excl:
                P_out[z] -= ci_i * mu[i, z]
                P_in[z] -= ci_o * mu[i, z]
        for e in range(mo_ptr[i], mo_ptr[i + 1]):
            j = mo_nbr[e]
            for z in range(K):
                P_out[z] -= c_in[j] * mu[j, z]
        for e in range(mi_ptr[i], mi_ptr[i + 1]):
            j = mi_nbr[e]
            for z in range(K):
                P_in[z] -= c_out[j] * mu[j, z]
        for z in range(K):
            acc = 0.0
            for zp in range(K):
                acc += (eta_e[0, z, zp] * U_out[zp] + eta_e[0, zp, z] * U_in[zp]
                        + eta_e[1, z, zp] * ci_o * P_out[zp] + eta_e[1, zp, z] * ci_i * P_in[zp])
            g[z] += a_e * acc


@njit(cache=True)
def edge_stats(src, dst, T, mu):
    """``sum_e mu[src_e] (x) mu[dst_e]`` and the same sum weighted by each column of ``T``."""
    K = mu.shape[1]
    D = T.shape[1]
    A = np.zeros((K, K))
    B = np.zeros((K, K, D))
    for e in range(src.size):
        i = src[e]
        j = dst[e]
        for z in range(K):
            mz = mu[i, z]
            for w in range(K):
                o = mz * mu[j, w]
                A[z, w] += o
                for d in range(D):
                    B[z, w, d] += o * T[e, d]
    return A, B


@njit(cache=True)
def _column_sums(mu, c):
    n, K = mu.shape
    out = np.zeros(K)
    for i in range(n):
        for z in range(K):
            out[z] += c[i] * mu[i, z]
    return out


@njit(cache=True)
def all_fields(mu, log_mu0, a_e, a_w, eta_e, eta_w,
               out_ptr, out_nbr, out_T, in_ptr, in_nbr, in_T,
               c_out, c_in, mo_ptr, mo_nbr, mi_ptr, mi_nbr, excl):
    n, K = mu.shape
    Dw = out_T.shape[1]
    G = np.empty((n, K))
    g = np.empty(K)
    V_out = np.empty((Dw, K))
    V_in = np.empty((Dw, K))
    U_out = np.empty(K)
    U_in = np.empty(K)
    P_out = np.empty(K)
    P_in = np.empty(K)
    cs_out = _column_sums(mu, c_out)
    cs_in = _column_sums(mu, c_in)
    for i in range(n):
        vertex_field(i, mu, log_mu0, a_e, a_w, eta_e, eta_w,
                     out_ptr, out_nbr, out_T, in_ptr, in_nbr, in_T,
                     c_out, c_in, mo_ptr, mo_nbr, mi_ptr, mi_nbr, excl,
                     cs_out, cs_in, g, V_out, V_in, U_out, U_in, P_out, P_in)
        for z in range(K):
            G[i, z] = g[z]
    return G


@njit(cache=True)
def belief_sweeps(order, mu, log_mu0, a_e, a_w, eta_e, eta_w,
                  out_ptr, out_nbr, out_T, in_ptr, in_nbr, in_T,
                  c_out, c_in, mo_ptr, mo_nbr, mi_ptr, mi_nbr, excl,
                  max_sweeps, tol):
    """Gauss-Seidel row updates in ``order``; returns (sweeps, last max change)."""
    n, K = mu.shape
    Dw = out_T.shape[1]
    g = np.empty(K)
    new = np.empty(K)
    V_out = np.empty((Dw, K))
    V_in = np.empty((Dw, K))
    U_out = np.empty(K)
    U_in = np.empty(K)
    P_out = np.empty(K)
    P_in = np.empty(K)
    change = np.inf
    sweeps = 0
    for s in range(max_sweeps):
        cs_out = _column_sums(mu, c_out)
        cs_in = _column_sums(mu, c_in)
        change = 0.0
        for t in range(n):
            i = order[t]
            vertex_field(i, mu, log_mu0, a_e, a_w, eta_e, eta_w,
                         out_ptr, out_nbr, out_T, in_ptr, in_nbr, in_T,
                         c_out, c_in, mo_ptr, mo_nbr, mi_ptr, mi_nbr, excl,
                         cs_out, cs_in, g, V_out, V_in, U_out, U_in, P_out, P_in)
            gmax = g[0]
            for z in range(1, K):
                if g[z] > gmax:
                    gmax = g[z]
            tot = 0.0
            for z in range(K):
                v = np.exp(g[z] - gmax)
                if v < 1e-300:
                    v = 1e-300
                new[z] = v
                tot += v
            for z in range(K):
                v = new[z] / tot
                diff = v - mu[i, z]
                if abs(diff) > change:
                    change = abs(diff)
                cs_out[z] += c_out[i] * diff
                cs_in[z] += c_in[i] * diff
                mu[i, z] = v
        sweeps = s + 1
        if change < tol:
            break
    return sweeps, change


# -- loopy belief propagation ------------------------------------------------

@njit(cache=True)
def _logsumexp_row(L, is_a, logc, z, K):
    """log sum_z' exp(E(z, z') + logc(z')) with E = L or L^T."""
    m = -np.inf
    for zp in range(K):
        v = (L[z, zp] if is_a else L[zp, z]) + logc[zp]
        if v > m:
            m = v
    if m == -np.inf:
        return m
    s = 0.0
    for zp in range(K):
        v = (L[z, zp] if is_a else L[zp, z]) + logc[zp]
        s += np.exp(v - m)
    return m + np.log(s)


@njit(cache=True)
def bp_sweep(ptr, pair, is_a, rev, logL, unary, field, log_mu0, cav, damping,
             new_cav, beliefs):
    """One synchronous sweep; returns the largest change of a cavity entry.

    ``cav[e]`` is the cavity distribution of vertex ``i`` with the neighbour
    of arc ``e`` removed, where ``e`` ranges over the arcs leaving ``i``.
    ``rev[e]`` is the arc in the opposite direction.
    """
    n = ptr.size - 1
    K = log_mu0.size
    logc = np.empty(K)
    b = np.empty(K)
    t = np.empty((0, K))
    change = 0.0
    resets = 0
    for i in range(n):
        deg = ptr[i + 1] - ptr[i]
        if t.shape[0] < deg:
            t = np.empty((deg, K))
        for z in range(K):
            b[z] = log_mu0[z] + unary[i, z] + field[i, z]
        for s in range(deg):
            e = ptr[i] + s
            r = rev[e]
            for zp in range(K):
                c = cav[r, zp]
                logc[zp] = np.log(c) if c > 0 else -np.inf
            for z in range(K):
                v = _logsumexp_row(logL[pair[e]], is_a[e], logc, z, K)
                t[s, z] = v
                b[z] += v
        # vertex belief
        m = -np.inf
        for z in range(K):
            if b[z] > m:
                m = b[z]
        tot = 0.0
        for z in range(K):
            v = np.exp(b[z] - m) if m > -np.inf else 0.0
            beliefs[i, z] = v
            tot += v
        if not tot > 0:
            resets += 1
            for z in range(K):
                beliefs[i, z] = 1.0 / K
        else:
            for z in range(K):
                beliefs[i, z] /= tot
        # outgoing cavities
        for s in range(deg):
            e = ptr[i] + s
            m = -np.inf
            for z in range(K):
                v = b[z] - t[s, z]
                if t[s, z] == -np.inf:
                    v = -np.inf
                logc[z] = v
                if v > m:
                    m = v
            tot = 0.0
            for z in range(K):
                v = np.exp(logc[z] - m) if m > -np.inf else 0.0
                logc[z] = v
                tot += v
            for z in range(K):
                if tot > 0:
                    v = logc[z] / tot
                else:
                    v = 1.0 / K
                v = (1.0 - damping) * v + damping * cav[e, z]
                d = abs(v - cav[e, z])
                if d > change:
                    change = d
                new_cav[e, z] = v
            if not tot > 0:
                resets += 1
    # damping mixes two normalised vectors, so renormalise only for round-off
    for e in range(new_cav.shape[0]):
        tot = 0.0
        for z in range(K):
            tot += new_cav[e, z]
        for z in range(K):
            new_cav[e, z] /= tot
    return change, resets


@njit(cache=True)
def nonedge_field(mu, logNN, logNM, logMN, ptr, nbr, sp_ptr, sp_nbr, sp_code):
    """Mean-field log-field of the non-adjacent pairs of every vertex.

    ``logNN`` is the pair evidence when both directions are non-edges,
    ``logNM`` when only ``i -> j`` is observed and ``logMN`` when only
    ``j -> i`` is.  The global sum over all ``j`` is corrected for the
    vertex itself, its adjacency (``ptr``/``nbr``) and pairs with a missing
    direction (``sp_*``; code 0 = both missing, 1 = NM, 2 = MN).
    """
    n, K = mu.shape
    H = np.empty((n, K))
    S = np.zeros(K)
    for j in range(n):
        for z in range(K):
            s = 0.0
            for zp in range(K):
                s += np.exp(logNN[z, zp]) * mu[j, zp]
            H[j, z] = np.log(s)
            S[z] += H[j, z]
    F = np.empty((n, K))
    for i in range(n):
        for z in range(K):
            f = S[z] - H[i, z]
            for e in range(ptr[i], ptr[i + 1]):
                f -= H[nbr[e], z]
            for e in range(sp_ptr[i], sp_ptr[i + 1]):
                j = sp_nbr[e]
                f -= H[j, z]
                code = sp_code[e]
                if code != 0:
                    s = 0.0
                    for zp in range(K):
                        lv = logNM[z, zp] if code == 1 else logMN[z, zp]
                        s += np.exp(lv) * mu[j, zp]
                    f += np.log(s)
            F[i, z] = f
    return F


@njit(cache=True)
def pair_evidence(st_ab, st_ba, Tw_ab, Tw_ba, E1, E0, eta_w, a_e, a_w):
    """Log evidence ``L[p, z, z']`` of each adjacent pair, both directions combined.

    Status codes: 0 missing, 1 non-edge, 2 weighted.  The ``b -> a``
    direction reads the bundle tables transposed.
    """
    P = st_ab.size
    K = E1.shape[0]
    D = Tw_ab.shape[1]
    L = np.zeros((P, K, K))
    for p in range(P):
        s1 = st_ab[p]
        s2 = st_ba[p]
        for z in range(K):
            for w in range(K):
                acc = 0.0
                if s1 == 2:
                    acc += a_e * E1[z, w]
                elif s1 == 1:
                    acc += a_e * E0[z, w]
                if s2 == 2:
                    acc += a_e * E1[w, z]
                elif s2 == 1:
                    acc += a_e * E0[w, z]
                if a_w != 0.0:
                    t = 0.0
                    for d in range(D):
                        t += Tw_ab[p, d] * eta_w[z, w, d] + Tw_ba[p, d] * eta_w[w, z, d]
                    acc += a_w * t
                L[p, z, w] = acc
    return L


@njit(cache=True)
def pair_beliefs(logL, cav, arc_ab, arc_ba):
    """``mu_ab(z, z') ~ exp(logL) c_{a\\b}(z) c_{b\\a}(z')``, normalised per pair."""
    P, K = logL.shape[0], logL.shape[1]
    out = np.empty((P, K, K))
    la = np.empty(K)
    lb = np.empty(K)
    for p in range(P):
        for z in range(K):
            ca = cav[arc_ab[p], z]
            cb = cav[arc_ba[p], z]
            la[z] = np.log(ca) if ca > 0.0 else -np.inf
            lb[z] = np.log(cb) if cb > 0.0 else -np.inf
        top = -np.inf
        for z in range(K):
            for w in range(K):
                v = logL[p, z, w] + la[z] + lb[w]
                out[p, z, w] = v
                if v > top:
                    top = v
        s = 0.0
        for z in range(K):
            for w in range(K):
                v = np.exp(out[p, z, w] - top)
                out[p, z, w] = v
                s += v
        for z in range(K):
            for w in range(K):
                out[p, z, w] /= s
    return out


@njit(cache=True)
def pair_corrections(a, b, pw, mu, te_ab, te_ba, Tw_ab, Tw_ba):
    """Statistics of adjacent pairs under ``pw`` minus those under ``mu_a (x) mu_b``."""
    P, K = pw.shape[0], pw.shape[1]
    De = te_ab.shape[1]
    Dw = Tw_ab.shape[1]
    Ce = np.zeros((K, K, De))
    Cw = np.zeros((K, K, Dw))
    for p in range(P):
        i = a[p]
        j = b[p]
        for z in range(K):
            for w in range(K):
                d = pw[p, z, w] - mu[i, z] * mu[j, w]
                for k in range(De):
                    Ce[z, w, k] += te_ab[p, k] * d
                    Ce[w, z, k] += te_ba[p, k] * d
                for k in range(Dw):
                    Cw[z, w, k] += Tw_ab[p, k] * d
                    Cw[w, z, k] += Tw_ba[p, k] * d
    return Ce, Cw


@njit(cache=True)
def pair_xlogy(pw, ref):
    """``sum_p sum_zz' pw log(pw / exp(ref))`` with ``0 log 0 = 0``."""
    P, K = pw.shape[0], pw.shape[1]
    s = 0.0
    for p in range(P):
        for z in range(K):
            for w in range(K):
                x = pw[p, z, w]
                if x > 0.0:
                    s += x * (np.log(x) - ref[z, w])
    return s
