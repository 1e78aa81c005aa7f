"""Numba kernels for the per-point inner loops.

Every function here has a twin with the same name and signature in
``_numpy.py``; results agree bit-for-bit where the arithmetic order allows
it (kNN, voxel reduction) and to round-off elsewhere.
"""
import math

import numpy as np
from numba import njit, types
from numba.typed import Dict

_VOXEL_KEY = types.UniTuple(types.int64, 3)


# ---------------------------------------------------------------------------
#  kd-tree: one node per point, implicit layout over a permutation array.
#  The node for range [lo, hi) sits at perm[(lo + hi) // 2].
# ---------------------------------------------------------------------------

@njit(cache=True)
def kdtree_build(points):
    n = points.shape[0]
    perm = np.arange(n)
    dims = np.zeros(n, dtype=np.int64)
    stack_lo = np.empty(2 * n + 2, dtype=np.int64)
    stack_hi = np.empty(2 * n + 2, dtype=np.int64)
    top = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    top = 1
    while top > 0:
        top -= 1
        lo = stack_lo[top]
        hi = stack_hi[top]
        if hi - lo <= 0:
            continue
        mid = (lo + hi) // 2
        if hi - lo == 1:
            dims[mid] = 0
            continue
        best_dim = 0
        best_spread = -1.0
        for d in range(3):
            mn = np.inf
            mx = -np.inf
            for i in range(lo, hi):
                v = points[perm[i], d]
                if v < mn:
                    mn = v
                if v > mx:
                    mx = v
            if mx - mn > best_spread:
                best_spread = mx - mn
                best_dim = d
        seg = perm[lo:hi].copy()
        keys = np.empty(hi - lo)
        for i in range(hi - lo):
            keys[i] = points[seg[i], best_dim]
        order = np.argsort(keys, kind="mergesort")
        for i in range(hi - lo):
            perm[lo + i] = seg[order[i]]
        dims[mid] = best_dim
        stack_lo[top] = lo
        stack_hi[top] = mid
        top += 1
        stack_lo[top] = mid + 1
        stack_hi[top] = hi
        top += 1
    return perm, dims


@njit(cache=True)
def _knn_one(points, perm, dims, qx, qy, qz, k, out_i, out_d):
    n = perm.shape[0]
    count = 0
    for j in range(k):
        out_d[j] = np.inf
        out_i[j] = n
    # depth of a balanced tree is ~log2(n); 2 entries per level plus slack
    cap = 4 * (int(math.log2(n + 1)) + 4)
    s_lo = np.empty(cap, dtype=np.int64)
    s_hi = np.empty(cap, dtype=np.int64)
    s_b = np.empty(cap)
    s_lo[0] = 0
    s_hi[0] = n
    s_b[0] = 0.0
    top = 1
    while top > 0:
        top -= 1
        lo = s_lo[top]
        hi = s_hi[top]
        bound = s_b[top]
        if hi <= lo:
            continue
        if count == k and bound > out_d[k - 1]:
            continue
        mid = (lo + hi) // 2
        p = perm[mid]
        dx = qx - points[p, 0]
        dy = qy - points[p, 1]
        dz = qz - points[p, 2]
        d2 = dx * dx + dy * dy + dz * dz
        if count < k or d2 < out_d[k - 1] or (d2 == out_d[k - 1] and p < out_i[k - 1]):
            pos = count if count < k else k - 1
            while pos > 0 and (out_d[pos - 1] > d2 or (out_d[pos - 1] == d2 and out_i[pos - 1] > p)):
                out_d[pos] = out_d[pos - 1]
                out_i[pos] = out_i[pos - 1]
                pos -= 1
            out_d[pos] = d2
            out_i[pos] = p
            if count < k:
                count += 1
        d = dims[mid]
        if d == 0:
            diff = qx - points[p, 0]
        elif d == 1:
            diff = qy - points[p, 1]
        else:
            diff = qz - points[p, 2]
        if diff < 0.0:
            near_lo, near_hi, far_lo, far_hi = lo, mid, mid + 1, hi
        else:
            near_lo, near_hi, far_lo, far_hi = mid + 1, hi, lo, mid
        far_b = diff * diff
        if far_b < bound:
            far_b = bound
        s_lo[top] = far_lo
        s_hi[top] = far_hi
        s_b[top] = far_b
        top += 1
        s_lo[top] = near_lo
        s_hi[top] = near_hi
        s_b[top] = bound
        top += 1
    return count


@njit(cache=True)
def kdtree_knn(points, perm, dims, queries, k):
    m = queries.shape[0]
    kk = min(k, points.shape[0])
    idx = np.empty((m, kk), dtype=np.int64)
    d2 = np.empty((m, kk))
    oi = np.empty(kk, dtype=np.int64)
    od = np.empty(kk)
    for q in range(m):
        _knn_one(points, perm, dims, queries[q, 0], queries[q, 1], queries[q, 2], kk, oi, od)
        for j in range(kk):
            idx[q, j] = oi[j]
            d2[q, j] = od[j]
    return idx, d2


# ---------------------------------------------------------------------------
#  3x3 symmetric eigen-decomposition (cyclic Jacobi)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _jacobi3(m, vals, vecs):
    a = m.copy()
    for i in range(3):
        for j in range(3):
            vecs[i, j] = 1.0 if i == j else 0.0
    for sweep in range(60):
        off = a[0, 1] * a[0, 1] + a[0, 2] * a[0, 2] + a[1, 2] * a[1, 2]
        diag = a[0, 0] * a[0, 0] + a[1, 1] * a[1, 1] + a[2, 2] * a[2, 2]
        if off <= 1e-34 * diag or off == 0.0:
            break
        for r in range(3):
            if r == 0:
                p, q = 0, 1
            elif r == 1:
                p, q = 0, 2
            else:
                p, q = 1, 2
            apq = a[p, q]
            if apq == 0.0:
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            if abs(theta) > 1e150:
                t = 0.5 / theta
            else:
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
            c = 1.0 / math.sqrt(t * t + 1.0)
            s = t * c
            for k in range(3):
                akp = a[k, p]
                akq = a[k, q]
                a[k, p] = c * akp - s * akq
                a[k, q] = s * akp + c * akq
            for k in range(3):
                apk = a[p, k]
                aqk = a[q, k]
                a[p, k] = c * apk - s * aqk
                a[q, k] = s * apk + c * aqk
            for k in range(3):
                vkp = vecs[k, p]
                vkq = vecs[k, q]
                vecs[k, p] = c * vkp - s * vkq
                vecs[k, q] = s * vkp + c * vkq
    for i in range(3):
        vals[i] = a[i, i]
    # sort descending, carrying columns
    for i in range(2):
        best = i
        for j in range(i + 1, 3):
            if vals[j] > vals[best]:
                best = j
        if best != i:
            tmp = vals[i]
            vals[i] = vals[best]
            vals[best] = tmp
            for k in range(3):
                tv = vecs[k, i]
                vecs[k, i] = vecs[k, best]
                vecs[k, best] = tv


@njit(cache=True)
def eigh3_batch(mats):
    n = mats.shape[0]
    vals = np.empty((n, 3))
    vecs = np.empty((n, 3, 3))
    for i in range(n):
        _jacobi3(mats[i], vals[i], vecs[i])
    return vals, vecs


@njit(cache=True)
def neighborhood_cov(points, nbr):
    n, k = nbr.shape
    covs = np.zeros((n, 3, 3))
    for i in range(n):
        mx = 0.0
        my = 0.0
        mz = 0.0
        for j in range(k):
            p = nbr[i, j]
            mx += points[p, 0]
            my += points[p, 1]
            mz += points[p, 2]
        mx /= k
        my /= k
        mz /= k
        sxx = sxy = sxz = syy = syz = szz = 0.0
        for j in range(k):
            p = nbr[i, j]
            dx = points[p, 0] - mx
            dy = points[p, 1] - my
            dz = points[p, 2] - mz
            sxx += dx * dx
            sxy += dx * dy
            sxz += dx * dz
            syy += dy * dy
            syz += dy * dz
            szz += dz * dz
        covs[i, 0, 0] = sxx / k
        covs[i, 0, 1] = covs[i, 1, 0] = sxy / k
        covs[i, 0, 2] = covs[i, 2, 0] = sxz / k
        covs[i, 1, 1] = syy / k
        covs[i, 1, 2] = covs[i, 2, 1] = syz / k
        covs[i, 2, 2] = szz / k
    return covs


# ---------------------------------------------------------------------------
#  voxel grid
# ---------------------------------------------------------------------------

@njit(cache=True)
def voxel_reduce(points, intensity, leaf):
    n = points.shape[0]
    lookup = Dict.empty(key_type=_VOXEL_KEY, value_type=types.int64)
    inverse = np.empty(n, dtype=np.int64)
    first = np.empty(n, dtype=np.int64)
    nvox = 0
    for i in range(n):
        key = (
            np.int64(math.floor(points[i, 0] / leaf)),
            np.int64(math.floor(points[i, 1] / leaf)),
            np.int64(math.floor(points[i, 2] / leaf)),
        )
        v = lookup.get(key, -1)
        if v < 0:
            v = nvox
            lookup[key] = v
            first[v] = i
            nvox += 1
        inverse[i] = v
    sums = np.zeros((nvox, 3))
    isum = np.zeros(nvox)
    counts = np.zeros(nvox)
    for i in range(n):
        v = inverse[i]
        sums[v, 0] += points[i, 0]
        sums[v, 1] += points[i, 1]
        sums[v, 2] += points[i, 2]
        isum[v] += intensity[i]
        counts[v] += 1.0
    for v in range(nvox):
        sums[v, 0] /= counts[v]
        sums[v, 1] /= counts[v]
        sums[v, 2] /= counts[v]
        isum[v] /= counts[v]
    return first[:nvox].copy(), inverse, sums, isum


# ---------------------------------------------------------------------------
#  GICP normal equations
# ---------------------------------------------------------------------------

@njit(cache=True)
def _inv3(c, out):
    a00 = c[0, 0]
    a01 = c[0, 1]
    a02 = c[0, 2]
    a11 = c[1, 1]
    a12 = c[1, 2]
    a22 = c[2, 2]
    c00 = a11 * a22 - a12 * a12
    c01 = a02 * a12 - a01 * a22
    c02 = a01 * a12 - a02 * a11
    det = a00 * c00 + a01 * c01 + a02 * c02
    inv = 1.0 / det
    out[0, 0] = c00 * inv
    out[0, 1] = out[1, 0] = c01 * inv
    out[0, 2] = out[2, 0] = c02 * inv
    out[1, 1] = (a00 * a22 - a02 * a02) * inv
    out[1, 2] = out[2, 1] = (a01 * a02 - a00 * a12) * inv
    out[2, 2] = (a00 * a11 - a01 * a01) * inv


@njit(cache=True)
def gicp_accumulate(src, src_cov, rot, trans, tgt, tgt_cov, corr, want_hessian):
    H = np.zeros((6, 6))
    b = np.zeros(6)
    cost = 0.0
    count = 0
    C = np.empty((3, 3))
    M = np.empty((3, 3))
    RS = np.empty((3, 3))
    q = np.empty(3)
    d = np.empty(3)
    Md = np.empty(3)
    A = np.empty((3, 3))
    MA = np.empty((3, 3))
    for i in range(src.shape[0]):
        j = corr[i]
        if j < 0:
            continue
        for r in range(3):
            q[r] = rot[r, 0] * src[i, 0] + rot[r, 1] * src[i, 1] + rot[r, 2] * src[i, 2] + trans[r]
            d[r] = q[r] - tgt[j, r]
        # C = tgt_cov + R S R^T
        for r in range(3):
            for c in range(3):
                RS[r, c] = rot[r, 0] * src_cov[i, 0, c] + rot[r, 1] * src_cov[i, 1, c] + rot[r, 2] * src_cov[i, 2, c]
        for r in range(3):
            for c in range(3):
                C[r, c] = tgt_cov[j, r, c] + RS[r, 0] * rot[c, 0] + RS[r, 1] * rot[c, 1] + RS[r, 2] * rot[c, 2]
        _inv3(C, M)
        for r in range(3):
            Md[r] = M[r, 0] * d[0] + M[r, 1] * d[1] + M[r, 2] * d[2]
        cost += d[0] * Md[0] + d[1] * Md[1] + d[2] * Md[2]
        count += 1
        if not want_hessian:
            continue
        # A = -[q]x, the rotational block of the residual Jacobian
        A[0, 0] = 0.0
        A[0, 1] = q[2]
        A[0, 2] = -q[1]
        A[1, 0] = -q[2]
        A[1, 1] = 0.0
        A[1, 2] = q[0]
        A[2, 0] = q[1]
        A[2, 1] = -q[0]
        A[2, 2] = 0.0
        for r in range(3):
            for c in range(3):
                MA[r, c] = M[r, 0] * A[0, c] + M[r, 1] * A[1, c] + M[r, 2] * A[2, c]
        for r in range(3):
            for c in range(3):
                H[r, c] += A[0, r] * MA[0, c] + A[1, r] * MA[1, c] + A[2, r] * MA[2, c]
                H[r, 3 + c] += MA[c, r]
                H[3 + r, 3 + c] += M[r, c]
            b[r] += A[0, r] * Md[0] + A[1, r] * Md[1] + A[2, r] * Md[2]
            b[3 + r] += Md[r]
    for r in range(3):
        for c in range(3):
            H[3 + c, r] = H[r, 3 + c]
    return H, b, cost, count


# ---------------------------------------------------------------------------
#  greedy constraint-stability selection
# ---------------------------------------------------------------------------

@njit(cache=True)
def _secular_min(d, z, rank_tol):
    # smallest eigenvalue of diag(d) + z z^T, d ascending
    d0 = d[0]
    if d[1] - d0 <= rank_tol:
        return d0
    z0 = z[0] * z[0]
    if z0 == 0.0:
        return d0
    hi = d[1] - d0
    if z0 < hi:
        hi = z0
    lo = 0.0
    span = hi
    tau = 0.5 * hi
    for it in range(200):
        f = 1.0 - z0 / tau
        fp = z0 / (tau * tau)
        for i in range(1, 6):
            den = d[i] - d0 - tau
            f += z[i] * z[i] / den
            fp += z[i] * z[i] / (den * den)
        if f > 0.0:
            hi = tau
        else:
            lo = tau
        nxt = tau - f / fp
        if not (nxt > lo and nxt < hi):
            nxt = 0.5 * (lo + hi)
        if abs(nxt - tau) <= 1e-15 * span or hi - lo <= 1e-15 * span:
            tau = nxt
            break
        tau = nxt
    return d0 + tau


@njit(cache=True)
def _better(mu, e, i, best_mu, best_e, best_i, tol):
    if best_i < 0:
        return True
    if mu > best_mu + tol:
        return True
    if mu < best_mu - tol:
        return False
    if e > best_e * (1.0 + 1e-12) + 1e-300:
        return True
    if e < best_e * (1.0 - 1e-12) - 1e-300:
        return False
    return i < best_i


@njit(cache=True)
def greedy_unique(G, eligible, K):
    n = G.shape[0]
    A = np.zeros((6, 6))
    taken = np.zeros(n, dtype=np.bool_)
    out = np.empty(K, dtype=np.int64)
    zi = np.empty(6)
    ub = np.empty(n)
    picked = 0
    for step in range(K):
        d, V = np.linalg.eigh(A)
        dmax = max(d[5], 0.0)
        rank_tol = 1e-10 * dmax if dmax > 0.0 else 0.0
        tol = 1e-12 * dmax
        nullity = 0
        for i in range(6):
            if d[i] - d[0] <= rank_tol:
                nullity += 1
        # upper bound on the achievable minimum eigenvalue per candidate
        seed = -1
        seed_ub = -np.inf
        for i in range(n):
            if taken[i] or not eligible[i]:
                ub[i] = -np.inf
                continue
            z0 = 0.0
            for r in range(6):
                z0 += V[r, 0] * G[i, r]
            u = d[0] + z0 * z0
            if d[1] < u:
                u = d[1]
            if nullity >= 2:
                u = d[0]
            ub[i] = u
            if u > seed_ub:
                seed_ub = u
                seed = i
        if seed < 0:
            break
        best_i = -1
        best_mu = -np.inf
        best_e = 0.0
        order_first = seed
        for pass_ in range(2):
            for i in range(n):
                if pass_ == 0 and i != order_first:
                    continue
                if ub[i] == -np.inf:
                    continue
                if best_i >= 0 and ub[i] < best_mu - tol:
                    continue
                for r in range(6):
                    s = 0.0
                    for c in range(6):
                        s += V[c, r] * G[i, c]
                    zi[r] = s
                if best_i >= 0 and nullity == 1:
                    # the secular root obeys tau <= z0^2 / (1 + sum_i z_i^2 / (d_i - d0))
                    sden = 1.0
                    for r in range(1, 6):
                        sden += zi[r] * zi[r] / (d[r] - d[0])
                    if d[0] + zi[0] * zi[0] / sden < best_mu - tol:
                        continue
                mu = _secular_min(d, zi, rank_tol)
                e = 0.0
                for r in range(nullity):
                    e += zi[r] * zi[r]
                if _better(mu, e, i, best_mu, best_e, best_i, tol):
                    best_i = i
                    best_mu = mu
                    best_e = e
        taken[best_i] = True
        out[picked] = best_i
        picked += 1
        for r in range(6):
            for c in range(6):
                A[r, c] += G[best_i, r] * G[best_i, c]
    return out[:picked].copy()


# ---------------------------------------------------------------------------
#  ray casting against rectangles and moving spheres
# ---------------------------------------------------------------------------

@njit(cache=True)
def raycast(origins, dirs, times, corners, e1, e2, normals, gram_inv,
            sph_c0, sph_v, sph_r, max_range):
    m = origins.shape[0]
    npatch = corners.shape[0]
    nsph = sph_c0.shape[0]
    rng = np.full(m, np.inf)
    hit = np.full(m, -1, dtype=np.int64)
    for i in range(m):
        ox = origins[i, 0]
        oy = origins[i, 1]
        oz = origins[i, 2]
        dx = dirs[i, 0]
        dy = dirs[i, 1]
        dz = dirs[i, 2]
        best = max_range
        best_id = -1
        for p in range(npatch):
            den = normals[p, 0] * dx + normals[p, 1] * dy + normals[p, 2] * dz
            if abs(den) < 1e-12:
                continue
            num = (normals[p, 0] * (corners[p, 0] - ox) + normals[p, 1] * (corners[p, 1] - oy)
                   + normals[p, 2] * (corners[p, 2] - oz))
            t = num / den
            if t <= 1e-9 or t >= best:
                continue
            rx = ox + t * dx - corners[p, 0]
            ry = oy + t * dy - corners[p, 1]
            rz = oz + t * dz - corners[p, 2]
            a1 = rx * e1[p, 0] + ry * e1[p, 1] + rz * e1[p, 2]
            a2 = rx * e2[p, 0] + ry * e2[p, 1] + rz * e2[p, 2]
            u = gram_inv[p, 0, 0] * a1 + gram_inv[p, 0, 1] * a2
            v = gram_inv[p, 1, 0] * a1 + gram_inv[p, 1, 1] * a2
            if u < -1e-12 or u > 1.0 + 1e-12 or v < -1e-12 or v > 1.0 + 1e-12:
                continue
            best = t
            best_id = p
        for s in range(nsph):
            cx = sph_c0[s, 0] + sph_v[s, 0] * times[i]
            cy = sph_c0[s, 1] + sph_v[s, 1] * times[i]
            cz = sph_c0[s, 2] + sph_v[s, 2] * times[i]
            ocx = ox - cx
            ocy = oy - cy
            ocz = oz - cz
            bb = ocx * dx + ocy * dy + ocz * dz
            cc = ocx * ocx + ocy * ocy + ocz * ocz - sph_r[s] * sph_r[s]
            disc = bb * bb - cc
            if disc < 0.0:
                continue
            t = -bb - math.sqrt(disc)
            if t <= 1e-9 or t >= best:
                continue
            best = t
            best_id = npatch + s
        if best_id >= 0:
            rng[i] = best
            hit[i] = best_id
    return rng, hit
