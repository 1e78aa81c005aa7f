"""Pure-numpy twins of the kernels in ``_numba.py``.

Used when numba is unavailable or ``LIOSELECT_BACKEND=numpy``. The kNN
"tree" here is a chunked brute-force scan: exact, with the same
(distance, index) ordering as the compiled kd-tree, but O(N*M).
"""
import numpy as np

_CHUNK_BYTES = 32 * 2**20


def kdtree_build(points):
    n = points.shape[0]
    return np.arange(n, dtype=np.int64), np.zeros(n, dtype=np.int64)


def _sq_dist(queries, points):
    dx = queries[:, 0:1] - points[None, :, 0]
    dy = queries[:, 1:2] - points[None, :, 1]
    dz = queries[:, 2:3] - points[None, :, 2]
    return dx * dx + dy * dy + dz * dz


def kdtree_knn(points, perm, dims, queries, k):
    n = points.shape[0]
    m = queries.shape[0]
    kk = min(k, n)
    idx = np.empty((m, kk), dtype=np.int64)
    d2 = np.empty((m, kk))
    step = max(1, _CHUNK_BYTES // (8 * max(n, 1)))
    for s in range(0, m, step):
        dist = _sq_dist(queries[s:s + step], points)
        if kk < n:
            part = np.argpartition(dist, kk - 1, axis=1)[:, :kk]
        else:
            part = np.broadcast_to(np.arange(n), dist.shape).copy()
        pd = np.take_along_axis(dist, part, axis=1)
        kth = pd.max(axis=1)
        # rows whose k-th distance is shared with points outside the partition
        ties = (dist <= kth[:, None]).sum(axis=1) > kk
        order = np.lexsort((part, pd), axis=1)
        part = np.take_along_axis(part, order, axis=1)
        pd = np.take_along_axis(pd, order, axis=1)
        for r in np.nonzero(ties)[0]:
            row = dist[r]
            cand = np.nonzero(row <= kth[r])[0]
            sel = cand[np.lexsort((cand, row[cand]))][:kk]
            part[r] = sel
            pd[r] = row[sel]
        idx[s:s + step] = part
        d2[s:s + step] = pd
    return idx, d2


def eigh3_batch(mats):
    w, v = np.linalg.eigh(mats)
    return w[:, ::-1].copy(), v[:, :, ::-1].copy()


def neighborhood_cov(points, nbr):
    nb = points[nbr]
    k = nbr.shape[1]
    mean = nb.sum(axis=1) / k
    c = nb - mean[:, None, :]
    return np.einsum("nki,nkj->nij", c, c) / k


def voxel_reduce(points, intensity, leaf):
    n = points.shape[0]
    if n == 0:
        return (np.empty(0, np.int64), np.empty(0, np.int64),
                np.empty((0, 3)), np.empty(0))
    keys = np.floor(points / leaf).astype(np.int64)
    _, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    # relabel voxels by first appearance
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    inverse = rank[inv]
    first = first[order]
    counts = np.bincount(inverse).astype(float)
    sums = np.stack([np.bincount(inverse, weights=points[:, j]) for j in range(3)], axis=1)
    isum = np.bincount(inverse, weights=intensity)
    return first.astype(np.int64), inverse.astype(np.int64), sums / counts[:, None], isum / counts


def gicp_accumulate(src, src_cov, rot, trans, tgt, tgt_cov, corr, want_hessian):
    ok = corr >= 0
    s = src[ok]
    j = corr[ok]
    q = s @ rot.T + trans
    d = q - tgt[j]
    C = tgt_cov[j] + np.einsum("ij,njk,lk->nil", rot, src_cov[ok], rot)
    M = np.linalg.inv(C)
    Md = np.einsum("nij,nj->ni", M, d)
    cost = float(np.einsum("ni,ni->", d, Md))
    count = int(ok.sum())
    H = np.zeros((6, 6))
    b = np.zeros(6)
    if not want_hessian or count == 0:
        return H, b, cost, count
    A = np.zeros((q.shape[0], 3, 3))
    A[:, 0, 1] = q[:, 2]
    A[:, 0, 2] = -q[:, 1]
    A[:, 1, 0] = -q[:, 2]
    A[:, 1, 2] = q[:, 0]
    A[:, 2, 0] = q[:, 1]
    A[:, 2, 1] = -q[:, 0]
    MA = M @ A
    H[:3, :3] = np.einsum("nki,nkj->ij", A, MA)
    H[:3, 3:] = MA.sum(axis=0).T
    H[3:, :3] = H[:3, 3:].T
    H[3:, 3:] = M.sum(axis=0)
    b[:3] = np.einsum("nki,nk->i", A, Md)
    b[3:] = Md.sum(axis=0)
    return H, b, cost, count


def _secular_min(d, Z, rank_tol):
    """Smallest eigenvalue of diag(d) + z z^T for each row z of Z."""
    out = np.full(Z.shape[0], d[0])
    if d[1] - d[0] <= rank_tol:
        return out
    z0 = Z[:, 0] ** 2
    live = z0 > 0.0
    hi = np.minimum(d[1] - d[0], z0)
    lo = np.zeros_like(hi)
    span = hi.copy()
    tau = 0.5 * hi
    gaps = d[1:] - d[0]
    zz = Z[:, 1:] ** 2
    done = ~live
    for _ in range(200):
        if done.all():
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            den = gaps[None, :] - tau[:, None]
            f = 1.0 - z0 / tau + (zz / den).sum(axis=1)
            fp = z0 / tau**2 + (zz / den**2).sum(axis=1)
            hi = np.where(~done & (f > 0.0), tau, hi)
            lo = np.where(~done & (f <= 0.0), tau, lo)
            nxt = tau - f / fp
        bad = ~((nxt > lo) & (nxt < hi))
        nxt = np.where(bad, 0.5 * (lo + hi), nxt)
        conv = (np.abs(nxt - tau) <= 1e-15 * span) | (hi - lo <= 1e-15 * span)
        tau = np.where(done, tau, nxt)
        done = done | conv
    return np.where(live, d[0] + tau, d[0])


def greedy_unique(G, eligible, K):
    n = G.shape[0]
    A = np.zeros((6, 6))
    taken = np.zeros(n, dtype=bool)
    out = []
    for _ in range(K):
        cand = np.nonzero(eligible & ~taken)[0]
        if cand.size == 0:
            break
        d, V = np.linalg.eigh(A)
        dmax = max(d[5], 0.0)
        rank_tol = 1e-10 * dmax if dmax > 0.0 else 0.0
        tol = 1e-12 * dmax
        nullity = int((d - d[0] <= rank_tol).sum())
        Z = G[cand] @ V
        if nullity >= 2:
            ub = np.full(cand.size, d[0])
        else:
            ub = np.minimum(d[0] + Z[:, 0] ** 2, d[1])
        seed = int(np.argmax(ub))
        seed_mu = _secular_min(d, Z[seed:seed + 1], rank_tol)[0]
        keep = ub >= seed_mu - tol
        sub = np.nonzero(keep)[0]
        mu = _secular_min(d, Z[sub], rank_tol)
        e = (Z[sub, :nullity] ** 2).sum(axis=1)
        best = -1
        for t in range(sub.size):
            i = sub[t]
            if best < 0:
                best, bmu, be = i, mu[t], e[t]
                continue
            m_, e_ = mu[t], e[t]
            if m_ > bmu + tol:
                better = True
            elif m_ < bmu - tol:
                better = False
            elif e_ > be * (1.0 + 1e-12) + 1e-300:
                better = True
            elif e_ < be * (1.0 - 1e-12) - 1e-300:
                better = False
            else:
                better = False  # ascending order already favours the lower index
            if better:
                best, bmu, be = i, m_, e_
        pick = int(cand[best])
        taken[pick] = True
        out.append(pick)
        A += np.outer(G[pick], G[pick])
    return np.asarray(out, dtype=np.int64)


def raycast(origins, dirs, times, corners, e1, e2, normals, gram_inv,
            sph_c0, sph_v, sph_r, max_range):
    m = origins.shape[0]
    npatch = corners.shape[0]
    best = np.full(m, float(max_range))
    hit = np.full(m, -1, dtype=np.int64)
    for p in range(npatch):
        den = dirs @ normals[p]
        num = (corners[p] - origins) @ normals[p]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(den) < 1e-12, np.inf, num / den)
        r = origins + t[:, None] * dirs - corners[p]
        a1 = r @ e1[p]
        a2 = r @ e2[p]
        u = gram_inv[p, 0, 0] * a1 + gram_inv[p, 0, 1] * a2
        v = gram_inv[p, 1, 0] * a1 + gram_inv[p, 1, 1] * a2
        ok = ((t > 1e-9) & (t < best) & (u >= -1e-12) & (u <= 1.0 + 1e-12)
              & (v >= -1e-12) & (v <= 1.0 + 1e-12))
        best = np.where(ok, t, best)
        hit = np.where(ok, p, hit)
    for s in range(sph_c0.shape[0]):
        c = sph_c0[s] + times[:, None] * sph_v[s]
        oc = origins - c
        bb = np.einsum("ij,ij->i", oc, dirs)
        cc = np.einsum("ij,ij->i", oc, oc) - sph_r[s] ** 2
        disc = bb * bb - cc
        with np.errstate(invalid="ignore"):
            t = -bb - np.sqrt(disc)
        ok = (disc >= 0.0) & (t > 1e-9) & (t < best)
        best = np.where(ok, t, best)
        hit = np.where(ok, npatch + s, hit)
    rng = np.where(hit >= 0, best, np.inf)
    return rng, hit
