"""Compiled sampler kernels.

All kernels are written for one "mode" at a time.  ``X`` is the observation
matrix oriented so that the nodes being resampled are its rows: 1 = link,
0 = non-link, -1 = masked.  ``Np``/``Nn`` are the link / non-link block counts
oriented the same way (pass transposed views for the column mode).

Cluster labels are kept compact: clusters ``0..L-1`` are all non-empty.
Randomness comes from numba's internal generator, seeded via ``seed``.
"""
from math import lgamma, log

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, fastmath=True)
def seed(value):
    np.random.seed(value)


@njit(cache=True, nogil=True)
def betaln(a, b):
    return lgamma(a) + lgamma(b) - lgamma(a + b)


@njit(cache=True, nogil=True, fastmath=True)
def tbetaln(a, b, tb, tb2):
    """betaln(a + beta, b + beta) for integer counts via lookup tables."""
    return tb[a] + tb[b] - tb2[a + b]


@njit(cache=True, nogil=True, fastmath=True)
def node_counts(X, i, z_other, L_other, lp, ln):
    for m in range(L_other):
        lp[m] = 0
        ln[m] = 0
    row = X[i]
    for j in range(row.shape[0]):
        x = row[j]
        if x == 1:
            lp[z_other[j]] += 1
        elif x == 0:
            ln[z_other[j]] += 1


@njit(cache=True, nogil=True, fastmath=True)
def relabel(z, src, dst):
    for n in range(z.shape[0]):
        if z[n] == src:
            z[n] = dst


@njit(cache=True, nogil=True, fastmath=True)
def drop_cluster(k, z, sizes, L, Np, Nn, L_other):
    """Remove empty cluster ``k`` by moving cluster ``L-1`` into its slot."""
    last = L - 1
    if k != last:
        relabel(z, last, k)
        sizes[k] = sizes[last]
        for m in range(L_other):
            Np[k, m] = Np[last, m]
            Nn[k, m] = Nn[last, m]
    sizes[last] = 0
    for m in range(L_other):
        Np[last, m] = 0
        Nn[last, m] = 0
    return L - 1


@njit(cache=True, nogil=True, fastmath=True)
def remove_node(i, z, sizes, L, lp, ln, Np, Nn, L_other):
    k = z[i]
    for m in range(L_other):
        Np[k, m] -= lp[m]
        Nn[k, m] -= ln[m]
    sizes[k] -= 1
    z[i] = -1
    if sizes[k] == 0:
        L = drop_cluster(k, z, sizes, L, Np, Nn, L_other)
    return L


@njit(cache=True, nogil=True, fastmath=True)
def add_node(i, k, z, sizes, L, lp, ln, Np, Nn, L_other):
    if k == L:
        L += 1
    for m in range(L_other):
        Np[k, m] += lp[m]
        Nn[k, m] += ln[m]
    sizes[k] += 1
    z[i] = k
    return L


@njit(cache=True, nogil=True, fastmath=True)
def conditional(sizes, L, lp, ln, Np, Nn, L_other, log_alpha, tb, tb2, tlog, out):
    """Unnormalized log probabilities of joining clusters 0..L-1 or a new one."""
    base = tbetaln(0, 0, tb, tb2)
    for ell in range(L):
        s = tlog[sizes[ell]]
        for m in range(L_other):
            if lp[m] == 0 and ln[m] == 0:
                continue
            a = Np[ell, m]
            b = Nn[ell, m]
            s += tbetaln(a + lp[m], b + ln[m], tb, tb2) - tbetaln(a, b, tb, tb2)
        out[ell] = s
    s = log_alpha
    for m in range(L_other):
        if lp[m] == 0 and ln[m] == 0:
            continue
        s += tbetaln(lp[m], ln[m], tb, tb2) - base
    out[L] = s


@njit(cache=True, nogil=True, fastmath=True)
def sample_log(logp, n):
    """Draw an index with probability proportional to exp(logp[:n])."""
    mx = logp[0]
    for k in range(1, n):
        if logp[k] > mx:
            mx = logp[k]
    total = 0.0
    for k in range(n):
        logp[k] = np.exp(logp[k] - mx)
        total += logp[k]
    u = np.random.random() * total
    acc = 0.0
    for k in range(n - 1):
        acc += logp[k]
        if u < acc:
            return k
    return n - 1


@njit(cache=True, nogil=True, fastmath=True)
def sweep_mode(X, z, sizes, L, z_other, L_other, Np, Nn, log_alpha, tb, tb2, tlog,
               lp, ln, logp):
    for i in range(X.shape[0]):
        node_counts(X, i, z_other, L_other, lp, ln)
        L = remove_node(i, z, sizes, L, lp, ln, Np, Nn, L_other)
        conditional(sizes, L, lp, ln, Np, Nn, L_other, log_alpha, tb, tb2, tlog, logp)
        k = sample_log(logp, L + 1)
        L = add_node(i, k, z, sizes, L, lp, ln, Np, Nn, L_other)
    return L


@njit(cache=True, nogil=True, fastmath=True)
def block_counts(X, z1, L1, z2, L2, Np, Nn):
    Np[:, :] = 0
    Nn[:, :] = 0
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            x = X[i, j]
            if x == 1:
                Np[z1[i], z2[j]] += 1
            elif x == 0:
                Nn[z1[i], z2[j]] += 1


@njit(cache=True, nogil=True)
def crp_logp(sizes, L, n, alpha):
    s = L * log(alpha) + lgamma(alpha) - lgamma(n + alpha)
    for k in range(L):
        s += lgamma(sizes[k])
    return s


@njit(cache=True, nogil=True)
def log_posterior(sizes1, L1, sizes2, L2, Np, Nn, beta, alpha1, alpha2):
    n1 = 0
    for k in range(L1):
        n1 += sizes1[k]
    n2 = 0
    for k in range(L2):
        n2 += sizes2[k]
    base = betaln(beta, beta)
    s = 0.0
    for ell in range(L1):
        for m in range(L2):
            s += betaln(Np[ell, m] + beta, Nn[ell, m] + beta) - base
    return s + crp_logp(sizes1, L1, n1, alpha1) + crp_logp(sizes2, L2, n2, alpha2)


# ---------------------------------------------------------------------------
# split-merge
#
# ``members`` lists the nodes of the two anchor clusters with the anchors
# first (members[0] -> side 0, members[1] -> side 1).  ``Cp``/``Cn`` hold each
# member's link / non-link counts against the other mode's clusters, so the
# restricted state is fully described by a 0/1 side label per member.
# ``ws`` is a workspace tuple from ``make_workspace``; only its leading
# entries are used, so one workspace serves every move of a chain.

def make_workspace(n, n_other):
    return (
        np.zeros(n, dtype=np.int64),             # members
        np.zeros((n, n_other), dtype=np.int64),  # Cp
        np.zeros((n, n_other), dtype=np.int64),  # Cn
        np.zeros((2, n_other), dtype=np.int64),  # Sp
        np.zeros((2, n_other), dtype=np.int64),  # Sn
        np.zeros(2, dtype=np.int64),             # side sizes
        np.zeros(n, dtype=np.int64),             # lab
        np.zeros(n, dtype=np.int64),             # current
        np.zeros(n, dtype=np.int64),             # order
    )


@njit(cache=True, nogil=True, fastmath=True)
def sm_side_totals(Cp, Cn, lab, count, L_other, Sp, Sn, sizes):
    for s in range(2):
        sizes[s] = 0
        for m in range(L_other):
            Sp[s, m] = 0
            Sn[s, m] = 0
    for k in range(count):
        s = lab[k]
        sizes[s] += 1
        for m in range(L_other):
            Sp[s, m] += Cp[k, m]
            Sn[s, m] += Cn[k, m]


@njit(cache=True, nogil=True, fastmath=True)
def sm_side_logp(Cp, Cn, k, s, Sp, Sn, sizes, L_other, tb, tb2, tlog):
    v = tlog[sizes[s]]
    for m in range(L_other):
        cp = Cp[k, m]
        cn = Cn[k, m]
        if cp == 0 and cn == 0:
            continue
        a = Sp[s, m]
        b = Sn[s, m]
        v += tbetaln(a + cp, b + cn, tb, tb2) - tbetaln(a, b, tb, tb2)
    return v


@njit(cache=True, nogil=True, fastmath=True)
def sm_move_member(Cp, Cn, k, s, sign, Sp, Sn, sizes, L_other):
    sizes[s] += sign
    for m in range(L_other):
        Sp[s, m] += sign * Cp[k, m]
        Sn[s, m] += sign * Cn[k, m]


@njit(cache=True, nogil=True, fastmath=True)
def softplus(x):
    if x > 0.0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True, nogil=True, fastmath=True)
def sm_logprob_of(lp0, lp1, side):
    if side == 0:
        return -softplus(lp1 - lp0)
    return -softplus(lp0 - lp1)


@njit(cache=True, nogil=True, fastmath=True)
def sm_choose(lp0, lp1):
    """Sample side 0/1 from two log weights."""
    d = lp1 - lp0
    if d > 0.0:
        p1 = 1.0 / (1.0 + np.exp(-d))
        return 0 if np.random.random() >= p1 else 1
    p0 = 1.0 / (1.0 + np.exp(d))
    return 0 if np.random.random() < p0 else 1


@njit(cache=True, nogil=True, fastmath=True)
def sm_sequential_allocation(Cp, Cn, order, n_order, L_other, lab, Sp, Sn, sizes,
                             tb, tb2, tlog):
    """Seat anchors on separate sides, then allocate ``order`` one by one."""
    for s in range(2):
        sizes[s] = 0
        for m in range(L_other):
            Sp[s, m] = 0
            Sn[s, m] = 0
    lab[0] = 0
    lab[1] = 1
    sm_move_member(Cp, Cn, 0, 0, 1, Sp, Sn, sizes, L_other)
    sm_move_member(Cp, Cn, 1, 1, 1, Sp, Sn, sizes, L_other)
    for t in range(n_order):
        k = order[t]
        lp0 = sm_side_logp(Cp, Cn, k, 0, Sp, Sn, sizes, L_other, tb, tb2, tlog)
        lp1 = sm_side_logp(Cp, Cn, k, 1, Sp, Sn, sizes, L_other, tb, tb2, tlog)
        s = sm_choose(lp0, lp1)
        lab[k] = s
        sm_move_member(Cp, Cn, k, s, 1, Sp, Sn, sizes, L_other)


@njit(cache=True, nogil=True, fastmath=True)
def sm_restricted_scan(Cp, Cn, lab, count, L_other, target, forced, need_q, Sp, Sn,
                       sizes, tb, tb2, tlog):
    """One restricted Gibbs scan over the non-anchor members.

    With ``forced`` each member is moved to ``target`` instead of sampled.
    Returns the log probability of the realised transition (0 unless
    ``need_q``).  Sp/Sn/sizes must hold the side totals of ``lab`` on entry.
    """
    logq = 0.0
    for k in range(2, count):
        sm_move_member(Cp, Cn, k, lab[k], -1, Sp, Sn, sizes, L_other)
        lp0 = sm_side_logp(Cp, Cn, k, 0, Sp, Sn, sizes, L_other, tb, tb2, tlog)
        lp1 = sm_side_logp(Cp, Cn, k, 1, Sp, Sn, sizes, L_other, tb, tb2, tlog)
        if forced:
            s = target[k]
        else:
            s = sm_choose(lp0, lp1)
        if need_q:
            logq += sm_logprob_of(lp0, lp1, s)
        lab[k] = s
        sm_move_member(Cp, Cn, k, s, 1, Sp, Sn, sizes, L_other)
    return logq


@njit(cache=True, nogil=True, fastmath=True)
def sm_split_delta(Cp, Cn, lab, count, L_other, log_alpha, Sp, Sn, sizes, tb, tb2):
    """log p(split given by lab) - log p(all members in one cluster)."""
    sm_side_totals(Cp, Cn, lab, count, L_other, Sp, Sn, sizes)
    base = tbetaln(0, 0, tb, tb2)
    d = log_alpha + lgamma(sizes[0]) + lgamma(sizes[1]) - lgamma(sizes[0] + sizes[1])
    for m in range(L_other):
        d += tbetaln(Sp[0, m], Sn[0, m], tb, tb2)
        d += tbetaln(Sp[1, m], Sn[1, m], tb, tb2)
        d -= tbetaln(Sp[0, m] + Sp[1, m], Sn[0, m] + Sn[1, m], tb, tb2)
        d -= base
    return d


@njit(cache=True, nogil=True, fastmath=True)
def sm_gather(X, z, i, j, z_other, L_other, ws):
    """Fill members and their per-cluster counts; returns member count."""
    members, Cp, Cn = ws[0], ws[1], ws[2]
    ci = z[i]
    cj = z[j]
    members[0] = i
    members[1] = j
    count = 2
    for v in range(z.shape[0]):
        if v != i and v != j and (z[v] == ci or z[v] == cj):
            members[count] = v
            count += 1
    for t in range(count):
        row = X[members[t]]
        for m in range(L_other):
            Cp[t, m] = 0
            Cn[t, m] = 0
        for jj in range(row.shape[0]):
            x = row[jj]
            if x == 1:
                Cp[t, z_other[jj]] += 1
            elif x == 0:
                Cn[t, z_other[jj]] += 1
    return count


@njit(cache=True, nogil=True, fastmath=True)
def sm_launch(count, L_other, restricted_sweeps, ws, tb, tb2, tlog):
    """Launch state: sequential allocation then intermediate restricted scans."""
    Cp, Cn, Sp, Sn, ssz, lab, order = ws[1], ws[2], ws[3], ws[4], ws[5], ws[6], ws[8]
    n_order = count - 2
    for t in range(n_order):
        order[t] = t + 2
    for t in range(n_order - 1, 0, -1):
        r = np.random.randint(t + 1)
        tmp = order[t]
        order[t] = order[r]
        order[r] = tmp
    sm_sequential_allocation(Cp, Cn, order, n_order, L_other, lab, Sp, Sn, ssz,
                             tb, tb2, tlog)
    for _ in range(restricted_sweeps):
        sm_restricted_scan(Cp, Cn, lab, count, L_other, lab, False, False, Sp, Sn,
                           ssz, tb, tb2, tlog)


@njit(cache=True, nogil=True, fastmath=True)
def split_merge(X, z, sizes, L, z_other, L_other, Np, Nn, log_alpha,
                restricted_sweeps, ws, tb, tb2, tlog):
    """One split-merge Metropolis-Hastings move.  Returns (L, accepted)."""
    n = X.shape[0]
    if n < 2:
        return L, False
    i = np.random.randint(n)
    j = np.random.randint(n - 1)
    if j >= i:
        j += 1
    ci = z[i]
    cj = z[j]
    members, Cp, Cn, Sp, Sn, ssz, lab, current = (
        ws[0], ws[1], ws[2], ws[3], ws[4], ws[5], ws[6], ws[7])
    count = sm_gather(X, z, i, j, z_other, L_other, ws)
    sm_launch(count, L_other, restricted_sweeps, ws, tb, tb2, tlog)

    if ci == cj:
        logq = sm_restricted_scan(Cp, Cn, lab, count, L_other, lab, False, True,
                                  Sp, Sn, ssz, tb, tb2, tlog)
        log_ratio = sm_split_delta(Cp, Cn, lab, count, L_other, log_alpha, Sp, Sn,
                                   ssz, tb, tb2) - logq
        if log(np.random.random()) < log_ratio:
            new = L
            for t in range(1, count):
                if lab[t] == 1:
                    z[members[t]] = new
            sizes[ci] = ssz[0]
            sizes[new] = ssz[1]
            for m in range(L_other):
                Np[ci, m] = Sp[0, m]
                Nn[ci, m] = Sn[0, m]
                Np[new, m] = Sp[1, m]
                Nn[new, m] = Sn[1, m]
            return L + 1, True
        return L, False

    for t in range(count):
        current[t] = 0 if z[members[t]] == ci else 1
    logq = sm_restricted_scan(Cp, Cn, lab, count, L_other, current, True, True,
                              Sp, Sn, ssz, tb, tb2, tlog)
    log_ratio = logq - sm_split_delta(Cp, Cn, current, count, L_other, log_alpha,
                                      Sp, Sn, ssz, tb, tb2)
    if log(np.random.random()) < log_ratio:
        for m in range(L_other):
            Np[ci, m] += Np[cj, m]
            Nn[ci, m] += Nn[cj, m]
            Np[cj, m] = 0
            Nn[cj, m] = 0
        sizes[ci] += sizes[cj]
        sizes[cj] = 0
        relabel(z, cj, ci)
        return drop_cluster(cj, z, sizes, L, Np, Nn, L_other), True
    return L, False


# ---------------------------------------------------------------------------
# full chains

def make_tables(max_count, max_nodes, beta):
    from scipy.special import gammaln
    n = np.arange(max_count + 1, dtype=np.float64)
    tb = gammaln(n + beta)
    tb2 = gammaln(n + 2.0 * beta)
    with np.errstate(divide="ignore"):
        tlog = np.log(np.arange(max_nodes + 1, dtype=np.float64))
    return tb, tb2, tlog


@njit(cache=True, nogil=True, fastmath=True)
def full_sweep(X, Xt, z1, s1, L1, z2, s2, L2, Np, Nn, la1, la2, gibbs, sm_moves,
               restricted_sweeps, tb, tb2, tlog, lp1, ln1, lp2, ln2, logp1, logp2,
               ws1, ws2):
    if gibbs:
        L1 = sweep_mode(X, z1, s1, L1, z2, L2, Np, Nn, la1, tb, tb2, tlog,
                        lp1, ln1, logp1)
        L2 = sweep_mode(Xt, z2, s2, L2, z1, L1, Np.T, Nn.T, la2, tb, tb2, tlog,
                        lp2, ln2, logp2)
    for _ in range(sm_moves):
        L1, _a = split_merge(X, z1, s1, L1, z2, L2, Np, Nn, la1, restricted_sweeps,
                             ws1, tb, tb2, tlog)
        L2, _b = split_merge(Xt, z2, s2, L2, z1, L1, Np.T, Nn.T, la2,
                             restricted_sweeps, ws2, tb, tb2, tlog)
    return L1, L2


@njit(cache=True, nogil=True, fastmath=True)
def canonical_code(z):
    """Integer code of the partition, invariant to label permutation."""
    n = z.shape[0]
    remap = np.full(n, -1, dtype=np.int64)
    nxt = 0
    code = 0
    mult = 1
    for v in range(n):
        c = z[v]
        if remap[c] < 0:
            remap[c] = nxt
            nxt += 1
        code += remap[c] * mult
        mult *= n
    return code


@njit(cache=True, nogil=True, fastmath=True)
def chain_histogram(X, Xt, z1, z2, alpha1, alpha2, sweeps, gibbs, sm_moves,
                    restricted_sweeps, tb, tb2, tlog, ws1, ws2, seed_value):
    """Run a chain and histogram the visited (row, col) partition pairs."""
    np.random.seed(seed_value)
    I, J = X.shape
    L1 = z1.max() + 1
    L2 = z2.max() + 1
    s1 = np.zeros(I, dtype=np.int64)
    s2 = np.zeros(J, dtype=np.int64)
    for v in range(I):
        s1[z1[v]] += 1
    for v in range(J):
        s2[z2[v]] += 1
    Np = np.zeros((I, J), dtype=np.int64)
    Nn = np.zeros((I, J), dtype=np.int64)
    block_counts(X, z1, L1, z2, L2, Np, Nn)
    lp1 = np.zeros(J, dtype=np.int64)
    ln1 = np.zeros(J, dtype=np.int64)
    lp2 = np.zeros(I, dtype=np.int64)
    ln2 = np.zeros(I, dtype=np.int64)
    logp1 = np.zeros(I + 1)
    logp2 = np.zeros(J + 1)
    hist = np.zeros((I ** I, J ** J), dtype=np.int64)
    la1 = log(alpha1)
    la2 = log(alpha2)
    for _ in range(sweeps):
        L1, L2 = full_sweep(X, Xt, z1, s1, L1, z2, s2, L2, Np, Nn, la1, la2,
                            gibbs, sm_moves, restricted_sweeps, tb, tb2, tlog,
                            lp1, ln1, lp2, ln2, logp1, logp2, ws1, ws2)
        hist[canonical_code(z1), canonical_code(z2)] += 1
    return hist
