"""Compiled inner loops for determinant-space operations.

Determinants are pairs of integer bitmasks (alpha, beta), orbital 0 in the
least significant bit.  Spin orbitals are ordered all-alpha then all-beta,
so the fermionic sign of an excitation within one spin string only depends
on that string.  A basis is a strictly increasing array of keys
``(alpha << n_orb) | beta``.

Connection records produced by :func:`connections` use the kinds below;
``idx`` holds (i, j, a, b) for the excitation a+ b+ j i applied to the row
determinant, and ``phase`` its sign.
"""

import numpy as np
from numba import njit

DIAG = 0
SINGLE_A = 1
SINGLE_B = 2
DOUBLE_AA = 3
DOUBLE_BB = 4
DOUBLE_AB = 5


@njit(cache=True)
def popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@njit(cache=True)
def find(keys, key):
    lo = 0
    hi = keys.shape[0] - 1
    while lo <= hi:
        mid = (lo + hi) >> 1
        v = keys[mid]
        if v == key:
            return mid
        if v < key:
            lo = mid + 1
        else:
            hi = mid - 1
    return -1


@njit(cache=True)
def contains(sorted_arr, value):
    return find(sorted_arr, value) >= 0


@njit(cache=True)
def _bits(s, n, out):
    k = 0
    for p in range(n):
        if (s >> p) & 1:
            out[k] = p
            k += 1
    return k


@njit(cache=True)
def _parity_below(s, p):
    return popcount(s & ((np.int64(1) << p) - 1)) & 1


@njit(cache=True)
def single_sign(s, i, a):
    """Sign of a+_a a_i |s>, i occupied, a empty."""
    par = _parity_below(s, i)
    s1 = s ^ (np.int64(1) << i)
    par += _parity_below(s1, a)
    return 1.0 - 2.0 * (par & 1)


@njit(cache=True)
def double_sign(s, i, j, a, b):
    """Sign of a+_a a+_b a_j a_i |s>."""
    par = _parity_below(s, i)
    s1 = s ^ (np.int64(1) << i)
    par += _parity_below(s1, j)
    s2 = s1 ^ (np.int64(1) << j)
    par += _parity_below(s2, b)
    s3 = s2 | (np.int64(1) << b)
    par += _parity_below(s3, a)
    return 1.0 - 2.0 * (par & 1)


@njit(cache=True)
def max_connections(n, na, nb):
    va = n - na
    vb = n - nb
    return (
        1 + na * va + nb * vb
        + (na * (na - 1) // 2) * (va * (va - 1) // 2)
        + (nb * (nb - 1) // 2) * (vb * (vb - 1) // 2)
        + na * va * nb * vb
    )


@njit(cache=True)
def connections(row, alpha, beta, keys, ualpha, ubeta, n, cols, kinds, idx, phase):
    """Enumerate basis members connected to ``row`` by at most a double excitation.

    Fills the output buffers and returns the number of records.  The first
    record is always the diagonal.
    """
    sa = alpha[row]
    sb = beta[row]
    one = np.int64(1)
    occa = np.empty(n, np.int64)
    occb = np.empty(n, np.int64)
    vira = np.empty(n, np.int64)
    virb = np.empty(n, np.int64)
    na = _bits(sa, n, occa)
    nb = _bits(sb, n, occb)
    full = (one << n) - 1
    nva = _bits(full & ~sa, n, vira)
    nvb = _bits(full & ~sb, n, virb)

    m = 0
    cols[m] = row
    kinds[m] = DIAG
    phase[m] = 1.0
    m += 1

    # alpha singles and alpha-beta doubles
    for x in range(na):
        i = occa[x]
        for y in range(nva):
            a = vira[y]
            ta = sa ^ (one << i) ^ (one << a)
            if not contains(ualpha, ta):
                continue
            sgn_a = single_sign(sa, i, a)
            col = find(keys, (ta << n) | sb)
            if col >= 0:
                cols[m] = col
                kinds[m] = SINGLE_A
                idx[m, 0] = i
                idx[m, 1] = -1
                idx[m, 2] = a
                idx[m, 3] = -1
                phase[m] = sgn_a
                m += 1
            for u in range(nb):
                j = occb[u]
                for v in range(nvb):
                    b = virb[v]
                    tb = sb ^ (one << j) ^ (one << b)
                    col = find(keys, (ta << n) | tb)
                    if col >= 0:
                        cols[m] = col
                        kinds[m] = DOUBLE_AB
                        idx[m, 0] = i
                        idx[m, 1] = j
                        idx[m, 2] = a
                        idx[m, 3] = b
                        phase[m] = sgn_a * single_sign(sb, j, b)
                        m += 1
    # beta singles
    for u in range(nb):
        j = occb[u]
        for v in range(nvb):
            b = virb[v]
            tb = sb ^ (one << j) ^ (one << b)
            col = find(keys, (sa << n) | tb)
            if col >= 0:
                cols[m] = col
                kinds[m] = SINGLE_B
                idx[m, 0] = j
                idx[m, 1] = -1
                idx[m, 2] = b
                idx[m, 3] = -1
                phase[m] = single_sign(sb, j, b)
                m += 1
    # same-spin doubles
    for spin in range(2):
        if spin == 0:
            s, occ, vir, no, nv, ustr = sa, occa, vira, na, nva, ualpha
        else:
            s, occ, vir, no, nv, ustr = sb, occb, virb, nb, nvb, ubeta
        for x1 in range(no):
            i = occ[x1]
            for x2 in range(x1 + 1, no):
                j = occ[x2]
                for y1 in range(nv):
                    a = vir[y1]
                    for y2 in range(y1 + 1, nv):
                        b = vir[y2]
                        t = s ^ (one << i) ^ (one << j) ^ (one << a) ^ (one << b)
                        if not contains(ustr, t):
                            continue
                        if spin == 0:
                            col = find(keys, (t << n) | sb)
                        else:
                            col = find(keys, (sa << n) | t)
                        if col >= 0:
                            cols[m] = col
                            kinds[m] = DOUBLE_AA + spin
                            idx[m, 0] = i
                            idx[m, 1] = j
                            idx[m, 2] = a
                            idx[m, 3] = b
                            phase[m] = double_sign(s, i, j, a, b)
                            m += 1
    return m


@njit(cache=True)
def diagonal_element(sa, sb, n, h, J, K):
    occa = np.empty(n, np.int64)
    occb = np.empty(n, np.int64)
    na = _bits(sa, n, occa)
    nb = _bits(sb, n, occb)
    e = 0.0
    for x in range(na):
        i = occa[x]
        e += h[i, i]
        for y in range(x):
            j = occa[y]
            e += J[i, j] - K[i, j]
        for y in range(nb):
            e += J[i, occb[y]]
    for x in range(nb):
        i = occb[x]
        e += h[i, i]
        for y in range(x):
            j = occb[y]
            e += J[i, j] - K[i, j]
    return e


@njit(cache=True)
def element_value(sa, sb, n, kind, i, j, a, b, ph, h, eri, J, K):
    if kind == DIAG:
        return diagonal_element(sa, sb, n, h, J, K)
    if kind == SINGLE_A or kind == SINGLE_B:
        if kind == SINGLE_A:
            same, other = sa, sb
        else:
            same, other = sb, sa
        v = h[a, i]
        for k in range(n):
            if (same >> k) & 1 and k != i:
                v += eri[a, i, k, k] - eri[a, k, k, i]
            if (other >> k) & 1:
                v += eri[a, i, k, k]
        return ph * v
    if kind == DOUBLE_AB:
        return ph * eri[a, i, b, j]
    return ph * (eri[a, i, b, j] - eri[a, j, b, i])


@njit(cache=True)
def diagonal(alpha, beta, n, h, J, K):
    d = alpha.shape[0]
    out = np.empty(d)
    for r in range(d):
        out[r] = diagonal_element(alpha[r], beta[r], n, h, J, K)
    return out


@njit(cache=True)
def _row_buffers(n, na, nb):
    size = max_connections(n, na, nb)
    return (
        np.empty(size, np.int64),
        np.empty(size, np.int64),
        np.empty((size, 4), np.int64),
        np.empty(size),
    )


@njit(cache=True)
def count_nnz(alpha, beta, keys, ualpha, ubeta, n, na, nb):
    cols, kinds, idx, phase = _row_buffers(n, na, nb)
    total = 0
    for r in range(alpha.shape[0]):
        total += connections(r, alpha, beta, keys, ualpha, ubeta, n, cols, kinds, idx, phase)
    return total


@njit(cache=True)
def build_csr(alpha, beta, keys, ualpha, ubeta, n, na, nb, h, eri, J, K, nnz):
    d = alpha.shape[0]
    indptr = np.zeros(d + 1, np.int64)
    indices = np.empty(nnz, np.int64)
    data = np.empty(nnz)
    cols, kinds, idx, phase = _row_buffers(n, na, nb)
    pos = 0
    for r in range(d):
        m = connections(r, alpha, beta, keys, ualpha, ubeta, n, cols, kinds, idx, phase)
        for k in range(m):
            indices[pos] = cols[k]
            data[pos] = element_value(
                alpha[r], beta[r], n, kinds[k], idx[k, 0], idx[k, 1], idx[k, 2], idx[k, 3],
                phase[k], h, eri, J, K,
            )
            pos += 1
        indptr[r + 1] = pos
    return indptr, indices, data


@njit(cache=True)
def matvec_direct(alpha, beta, keys, ualpha, ubeta, n, na, nb, h, eri, J, K, X):
    """Y = H X recomputing matrix elements row by row (X may hold several columns)."""
    d = alpha.shape[0]
    nvec = X.shape[1]
    Y = np.zeros((d, nvec))
    cols, kinds, idx, phase = _row_buffers(n, na, nb)
    for r in range(d):
        m = connections(r, alpha, beta, keys, ualpha, ubeta, n, cols, kinds, idx, phase)
        for k in range(m):
            v = element_value(
                alpha[r], beta[r], n, kinds[k], idx[k, 0], idx[k, 1], idx[k, 2], idx[k, 3],
                phase[k], h, eri, J, K,
            )
            c = cols[k]
            for q in range(nvec):
                Y[r, q] += v * X[c, q]
    return Y


@njit(cache=True)
def accumulate_rdms(alpha, beta, keys, ualpha, ubeta, n, na, nb, coeff, D, G):
    """Spin-summed D[p, r] = <E_pr> and G[p, r, q, s] = <e_pq,rs>.

    G follows sum_{st} <a+_ps a+_qt a_st a_rs>, so that the energy is
    sum h D + 1/2 sum (pr|qs) G.
    """
    cols, kinds, idx, phase = _row_buffers(n, na, nb)
    occ = np.empty(2 * n, np.int64)
    for r in range(alpha.shape[0]):
        cI = coeff[r]
        if cI == 0.0:
            continue
        sa = alpha[r]
        sb = beta[r]
        m = connections(r, alpha, beta, keys, ualpha, ubeta, n, cols, kinds, idx, phase)
        # spin-orbital occupation list of the row determinant
        no = 0
        for p in range(n):
            if (sa >> p) & 1:
                occ[no] = p
                no += 1
        for p in range(n):
            if (sb >> p) & 1:
                occ[no] = n + p
                no += 1
        for k in range(m):
            w = cI * coeff[cols[k]] * phase[k]
            if w == 0.0:
                continue
            kind = kinds[k]
            if kind == DIAG:
                for x in range(no):
                    P = occ[x]
                    p = P % n
                    D[p, p] += w
                    for y in range(no):
                        if y == x:
                            continue
                        Q = occ[y]
                        q = Q % n
                        G[p, p, q, q] += w
                        if P // n == Q // n:
                            G[p, q, q, p] -= w
            elif kind == SINGLE_A or kind == SINGLE_B:
                i = idx[k, 0]
                a = idx[k, 2]
                spin = 0 if kind == SINGLE_A else 1
                D[a, i] += w
                for x in range(no):
                    Kso = occ[x]
                    kk = Kso % n
                    kspin = Kso // n
                    if kspin == spin and kk == i:
                        continue
                    G[a, i, kk, kk] += w
                    G[kk, kk, a, i] += w
                    if kspin == spin:
                        G[a, kk, kk, i] -= w
                        G[kk, i, a, kk] -= w
            elif kind == DOUBLE_AB:
                i = idx[k, 0]
                j = idx[k, 1]
                a = idx[k, 2]
                b = idx[k, 3]
                G[a, i, b, j] += w
                G[b, j, a, i] += w
            else:
                i = idx[k, 0]
                j = idx[k, 1]
                a = idx[k, 2]
                b = idx[k, 3]
                G[a, i, b, j] += w
                G[b, j, a, i] += w
                G[a, j, b, i] -= w
                G[b, i, a, j] -= w
