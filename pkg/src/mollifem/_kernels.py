# Compiled numerical cores: adaptive pair integration, scatter onto the
# implicit structured sparsity pattern, barycenter baseline, matvec and
# symmetrization, plus an independent fine-composite reference assembler
# used only for validation.
#
# All elements are axis-aligned boxes or right triangles from a structured
# grid, so element maps are affine and the outer-cell recursion subdivides
# physical geometry directly.  Box subcells are packed as lo0,lo1[,lo2],
# hi0,hi1[,hi2]; triangle subcells as three vertex pairs.  Stack depth is
# bounded by the caller (L_max <= 24).

import numpy as np
from numba import njit

STACK_CAP = 256  # >= (2^dim - 1) * L_max + 1


@njit(cache=True, nogil=True, inline="always")
def _mu2(d2, dm2, dp2, delta, eps):
    # mollifier from squared distance; branch order makes eps=0 the
    # inclusive indicator of d <= delta
    if d2 <= dm2:
        return 1.0
    if d2 >= dp2:
        return 0.0
    r = (delta - np.sqrt(d2)) / eps
    r2 = r * r
    return (((((35.0 * r2 - 180.0) * r2 + 378.0) * r2 - 420.0) * r2
             + 315.0) * r + 128.0) / 256.0


@njit(cache=True, nogil=True, inline="always")
def _shape1d(degree, t, out):
    if degree == 1:
        out[0] = 0.5 * (1.0 - t)
        out[1] = 0.5 * (1.0 + t)
    else:
        out[0] = 0.5 * t * (t - 1.0)
        out[1] = 1.0 - t * t
        out[2] = 0.5 * t * (t + 1.0)


@njit(cache=True, nogil=True)
def _shape_at(kind, degree, dim, r0, r1, r2, out, s0, s1, s2):
    # kind: 0 quad, 1 tri, 2 hex; fills out[:nloc], returns nloc
    if kind == 1:
        la = 1.0 - r0 - r1
        if degree == 1:
            out[0] = la
            out[1] = r0
            out[2] = r1
            return 3
        out[0] = la * (2.0 * la - 1.0)
        out[1] = r0 * (2.0 * r0 - 1.0)
        out[2] = r1 * (2.0 * r1 - 1.0)
        out[3] = 4.0 * la * r0
        out[4] = 4.0 * r0 * r1
        out[5] = 4.0 * r1 * la
        return 6
    m = degree + 1
    _shape1d(degree, r0, s0)
    _shape1d(degree, r1, s1)
    if dim == 2:
        n = 0
        for j in range(m):
            for i in range(m):
                out[n] = s0[i] * s1[j]
                n += 1
        return n
    _shape1d(degree, r2, s2)
    n = 0
    for k in range(m):
        for j in range(m):
            for i in range(m):
                out[n] = s0[i] * s1[j] * s2[k]
                n += 1
    return n


@njit(cache=True, nogil=True, inline="always")
def _aprx_min(alo, ahi, blo, bhi, dim):
    m = 0.0
    for k in range(dim):
        d1 = alo[k] - bhi[k]
        d2 = blo[k] - ahi[k]
        if d1 > m:
            m = d1
        if d2 > m:
            m = d2
    return m


@njit(cache=True, nogil=True, inline="always")
def _aprx_max(alo, ahi, blo, bhi, dim):
    s = 0.0
    for k in range(dim):
        d1 = alo[k] - bhi[k]
        d2 = blo[k] - ahi[k]
        a = d1 * d1
        b = d2 * d2
        s += a if a > b else b
    return np.sqrt(s)


@njit(cache=True, nogil=True)
def _event_box(dim, degree, okind, g, o_lo, o_hi, y1, w1, nq1, PHI1, nloc1,
               box_pts, box_w, delta, eps, cde, dm2, dp2,
               b21, b22_gsum, nloc2, phi2, s0, s1, s2):
    # integrate one box subcell g (packed lo/hi) against the inner element
    nq2 = box_pts.shape[0]
    jac = 1.0
    for k in range(dim):
        jac *= 0.5 * (g[dim + k] - g[k])
    for q2 in range(nq2):
        x0 = g[0] + (box_pts[q2, 0] + 1.0) * 0.5 * (g[dim] - g[0])
        x1 = g[1] + (box_pts[q2, 1] + 1.0) * 0.5 * (g[dim + 1] - g[1])
        x2 = 0.0
        if dim == 3:
            x2 = g[2] + (box_pts[q2, 2] + 1.0) * 0.5 * (g[5] - g[2])
        w2q = box_w[q2] * jac
        rx = (x0 - o_lo[0]) / (o_hi[0] - o_lo[0]) * 2.0 - 1.0
        ry = (x1 - o_lo[1]) / (o_hi[1] - o_lo[1]) * 2.0 - 1.0
        rz = 0.0
        if dim == 3:
            rz = (x2 - o_lo[2]) / (o_hi[2] - o_lo[2]) * 2.0 - 1.0
        _shape_at(okind, degree, dim, rx, ry, rz, phi2, s0, s1, s2)
        for q1 in range(nq1):
            dx = x0 - y1[q1, 0]
            dy = x1 - y1[q1, 1]
            d2 = dx * dx + dy * dy
            if dim == 3:
                dz = x2 - y1[q1, 2]
                d2 += dz * dz
            if d2 >= dp2:
                continue
            gam = cde * _mu2(d2, dm2, dp2, delta, eps)
            tq = gam * w2q
            b22_gsum[q1] += tq
            tw = tq * w1[q1]
            for i in range(nloc1):
                ci = tw * PHI1[q1, i]
                for j in range(nloc2):
                    b21[i, j] -= ci * phi2[j]


@njit(cache=True, nogil=True)
def _event_tri(degree, g, o_v0, o_inv, y1, w1, nq1, PHI1, nloc1,
               tri_pts, tri_w, delta, eps, cde, dm2, dp2,
               b21, b22_gsum, nloc2, phi2, s0, s1, s2):
    # integrate one triangle subcell (three physical vertices in g)
    nq2 = tri_pts.shape[0]
    e10 = g[2] - g[0]
    e11 = g[3] - g[1]
    e20 = g[4] - g[0]
    e21 = g[5] - g[1]
    det = e10 * e21 - e11 * e20
    for q2 in range(nq2):
        px = tri_pts[q2, 0]
        py = tri_pts[q2, 1]
        x0 = g[0] + px * e10 + py * e20
        x1 = g[1] + px * e11 + py * e21
        w2q = tri_w[q2] * det
        dx0 = x0 - o_v0[0]
        dx1 = x1 - o_v0[1]
        rx = o_inv[0, 0] * dx0 + o_inv[0, 1] * dx1
        ry = o_inv[1, 0] * dx0 + o_inv[1, 1] * dx1
        _shape_at(1, degree, 2, rx, ry, 0.0, phi2, s0, s1, s2)
        for q1 in range(nq1):
            dx = x0 - y1[q1, 0]
            dy = x1 - y1[q1, 1]
            d2 = dx * dx + dy * dy
            if d2 >= dp2:
                continue
            gam = cde * _mu2(d2, dm2, dp2, delta, eps)
            tq = gam * w2q
            b22_gsum[q1] += tq
            tw = tq * w1[q1]
            for i in range(nloc1):
                ci = tw * PHI1[q1, i]
                for j in range(nloc2):
                    b21[i, j] -= ci * phi2[j]


@njit(cache=True, nogil=True)
def _pair_blocks(dim, degree, okind, ogeo, o_lo, o_hi, o_v0, o_inv,
                 y1, w1, nq1, PHI1, nloc1, i_lo, i_hi,
                 box_pts, box_w, tri_pts, tri_w,
                 delta, eps, cde, dm2, dp2, dme, dpe, L_min, L_max,
                 b21, b22, nloc2, phi2, gsum, s0, s1, s2,
                 stack_geo, stack_lvl):
    """Recursive adaptive outer integration for one element pair.

    Subdivides only the outer element: below L_min always split, at L_max
    integrate whatever is still within reach, in between integrate when the
    conservative max distance is under delta-eps, split while the min
    distance is under delta+eps, drop otherwise.  Accumulates the signed
    A21 block into b21 and the A22 block into b22; returns the event count.
    """
    events = 0
    for t in range(6):
        stack_geo[0, t] = ogeo[t]
    stack_lvl[0] = 1
    top = 1
    slo = np.empty(3)
    shi = np.empty(3)
    g = np.empty(6)
    for q1 in range(nq1):
        gsum[q1] = 0.0
    while top > 0:
        top -= 1
        for t in range(6):
            g[t] = stack_geo[top, t]
        L = stack_lvl[top]
        if okind == 1:
            slo[0] = min(g[0], min(g[2], g[4]))
            shi[0] = max(g[0], max(g[2], g[4]))
            slo[1] = min(g[1], min(g[3], g[5]))
            shi[1] = max(g[1], max(g[3], g[5]))
        else:
            for k in range(dim):
                slo[k] = g[k]
                shi[k] = g[dim + k]
        do_split = False
        if L < L_min:
            do_split = True
        elif L == L_max:
            if _aprx_min(slo, shi, i_lo, i_hi, dim) < dpe:
                events += 1
                if okind == 1:
                    _event_tri(degree, g, o_v0, o_inv, y1, w1, nq1, PHI1,
                               nloc1, tri_pts, tri_w, delta, eps, cde, dm2,
                               dp2, b21, gsum, nloc2, phi2, s0, s1, s2)
                else:
                    _event_box(dim, degree, okind, g, o_lo, o_hi, y1, w1,
                               nq1, PHI1, nloc1, box_pts, box_w, delta, eps,
                               cde, dm2, dp2, b21, gsum, nloc2, phi2,
                               s0, s1, s2)
        else:
            if _aprx_max(slo, shi, i_lo, i_hi, dim) < dme:
                events += 1
                if okind == 1:
                    _event_tri(degree, g, o_v0, o_inv, y1, w1, nq1, PHI1,
                               nloc1, tri_pts, tri_w, delta, eps, cde, dm2,
                               dp2, b21, gsum, nloc2, phi2, s0, s1, s2)
                else:
                    _event_box(dim, degree, okind, g, o_lo, o_hi, y1, w1,
                               nq1, PHI1, nloc1, box_pts, box_w, delta, eps,
                               cde, dm2, dp2, b21, gsum, nloc2, phi2,
                               s0, s1, s2)
            elif _aprx_min(slo, shi, i_lo, i_hi, dim) < dpe:
                do_split = True
        if do_split:
            if okind == 1:
                m010 = 0.5 * (g[0] + g[2])
                m011 = 0.5 * (g[1] + g[3])
                m120 = 0.5 * (g[2] + g[4])
                m121 = 0.5 * (g[3] + g[5])
                m200 = 0.5 * (g[4] + g[0])
                m201 = 0.5 * (g[5] + g[1])
                # children (v0,m01,m20) (m01,v1,m12) (m20,m12,v2) (m01,m12,m20)
                stack_geo[top, 0] = g[0]
                stack_geo[top, 1] = g[1]
                stack_geo[top, 2] = m010
                stack_geo[top, 3] = m011
                stack_geo[top, 4] = m200
                stack_geo[top, 5] = m201
                stack_geo[top + 1, 0] = m010
                stack_geo[top + 1, 1] = m011
                stack_geo[top + 1, 2] = g[2]
                stack_geo[top + 1, 3] = g[3]
                stack_geo[top + 1, 4] = m120
                stack_geo[top + 1, 5] = m121
                stack_geo[top + 2, 0] = m200
                stack_geo[top + 2, 1] = m201
                stack_geo[top + 2, 2] = m120
                stack_geo[top + 2, 3] = m121
                stack_geo[top + 2, 4] = g[4]
                stack_geo[top + 2, 5] = g[5]
                stack_geo[top + 3, 0] = m010
                stack_geo[top + 3, 1] = m011
                stack_geo[top + 3, 2] = m120
                stack_geo[top + 3, 3] = m121
                stack_geo[top + 3, 4] = m200
                stack_geo[top + 3, 5] = m201
                for b in range(4):
                    stack_lvl[top + b] = L + 1
                top += 4
            else:
                nchild = 1 << dim
                for b in range(nchild):
                    for k in range(dim):
                        lo = g[k]
                        hi = g[dim + k]
                        mid = 0.5 * (lo + hi)
                        if (b >> k) & 1 == 0:
                            stack_geo[top + b, k] = lo
                            stack_geo[top + b, dim + k] = mid
                        else:
                            stack_geo[top + b, k] = mid
                            stack_geo[top + b, dim + k] = hi
                    stack_lvl[top + b] = L + 1
                top += nchild
    if events > 0:
        # fold the accumulated x-integral of gamma into the A22 block
        for q1 in range(nq1):
            s = gsum[q1] * w1[q1]
            if s == 0.0:
                continue
            for i in range(nloc1):
                ci = s * PHI1[q1, i]
                for j in range(nloc1):
                    b22[i, j] += ci * PHI1[q1, j]
    return events


@njit(cache=True, nogil=True, inline="always")
def _inner_data(dim, kind, coords, lo, hi, box_pts, box_w, tri_pts, tri_w,
                y1, w1):
    # physical inner quadrature points/weights for one element
    if kind == 1:
        e10 = coords[1, 0] - coords[0, 0]
        e11 = coords[1, 1] - coords[0, 1]
        e20 = coords[2, 0] - coords[0, 0]
        e21 = coords[2, 1] - coords[0, 1]
        det = e10 * e21 - e11 * e20
        nq = tri_pts.shape[0]
        for q in range(nq):
            y1[q, 0] = coords[0, 0] + tri_pts[q, 0] * e10 + tri_pts[q, 1] * e20
            y1[q, 1] = coords[0, 1] + tri_pts[q, 0] * e11 + tri_pts[q, 1] * e21
            w1[q] = tri_w[q] * det
        return nq
    nq = box_pts.shape[0]
    jac = 1.0
    for k in range(dim):
        jac *= 0.5 * (hi[k] - lo[k])
    for q in range(nq):
        for k in range(dim):
            y1[q, k] = lo[k] + (box_pts[q, k] + 1.0) * 0.5 * (hi[k] - lo[k])
        w1[q] = box_w[q] * jac
    return nq


@njit(cache=True, nogil=True, inline="always")
def _tri_inv(coords, o_v0, o_inv):
    e10 = coords[1, 0] - coords[0, 0]
    e11 = coords[1, 1] - coords[0, 1]
    e20 = coords[2, 0] - coords[0, 0]
    e21 = coords[2, 1] - coords[0, 1]
    det = e10 * e21 - e11 * e20
    o_v0[0] = coords[0, 0]
    o_v0[1] = coords[0, 1]
    o_inv[0, 0] = e21 / det
    o_inv[0, 1] = -e20 / det
    o_inv[1, 0] = -e11 / det
    o_inv[1, 1] = e10 / det


@njit(cache=True, nogil=True, inline="always")
def _scatter_block(block, rows, ncols_dofs, nrows, ncols,
                   gx, gy, gz, NX, NY, K, rowptr, vals):
    # rows/ncols_dofs: global dof ids of the block rows/cols
    for i in range(nrows):
        r = rows[i]
        rx = gx[r]
        ry = gy[r]
        rz = gz[r]
        xlo = rx - K
        if xlo < 0:
            xlo = 0
        xhi = rx + K
        if xhi > NX - 1:
            xhi = NX - 1
        Wx = xhi - xlo + 1
        ylo = ry - K
        if ylo < 0:
            ylo = 0
        yhi = ry + K
        if yhi > NY - 1:
            yhi = NY - 1
        Wy = yhi - ylo + 1
        zlo = rz - K
        if zlo < 0:
            zlo = 0
        base = rowptr[r]
        for j in range(ncols):
            c = ncols_dofs[j]
            off = ((gz[c] - zlo) * Wy + (gy[c] - ylo)) * Wx + (gx[c] - xlo)
            vals[base + off] += block[i, j]


@njit(cache=True, nogil=True)
def _general_core(dim, degree,
                  elem_kind, elem_coords, elem_lo, elem_hi,
                  elem_dofs, elem_nloc,
                  outer_ids, cand_ptr, cand_ids,
                  box_out_pts, box_out_w, box_in_pts, box_in_w,
                  tri_out_pts, tri_out_w, tri_in_pts, tri_in_w,
                  PHI1_box, PHI1_tri,
                  delta, eps, cde, L_min, L_max,
                  gx, gy, gz, NX, NY, K, rowptr, vals):
    """Adaptive assembly over explicit (outer, inner-candidate) pair lists.

    Each pair gets its own Algorithm-1 recursion; blocks scatter straight
    into the implicit-pattern value array.  Returns total event count.
    """
    nl_box = (degree + 1) ** dim
    nl_tri = 3 * degree
    nloc_max = max(nl_box, nl_tri)
    nq_max = max(box_in_pts.shape[0], tri_in_pts.shape[0])
    dm = delta - eps
    dp = delta + eps
    dm2 = dm * dm
    dp2 = dp * dp
    b21 = np.empty((nloc_max, nloc_max))
    b22 = np.empty((nloc_max, nloc_max))
    phi2 = np.empty(nloc_max)
    gsum = np.empty(nq_max)
    s0 = np.empty(3)
    s1 = np.empty(3)
    s2 = np.empty(3)
    y1 = np.empty((nq_max, 3))
    w1 = np.empty(nq_max)
    ogeo = np.empty(6)
    o_lo = np.empty(3)
    o_hi = np.empty(3)
    o_v0 = np.empty(2)
    o_inv = np.empty((2, 2))
    i_lo = np.empty(3)
    i_hi = np.empty(3)
    stack_geo = np.empty((STACK_CAP, 6))
    stack_lvl = np.empty(STACK_CAP, dtype=np.int32)
    events = 0
    n_outer = outer_ids.shape[0]
    for oi in range(n_outer):
        l = outer_ids[oi]
        okind = elem_kind[l]
        if okind == 1:
            for t in range(3):
                ogeo[2 * t] = elem_coords[l, t, 0]
                ogeo[2 * t + 1] = elem_coords[l, t, 1]
            _tri_inv(elem_coords[l], o_v0, o_inv)
            nloc2 = nl_tri
        else:
            for k in range(dim):
                ogeo[k] = elem_lo[l, k]
                ogeo[dim + k] = elem_hi[l, k]
                o_lo[k] = elem_lo[l, k]
                o_hi[k] = elem_hi[l, k]
            nloc2 = nl_box
        okb = 2 if (okind == 2) else 0
        if okind == 1:
            okb = 1
        for ci in range(cand_ptr[oi], cand_ptr[oi + 1]):
            m = cand_ids[ci]
            ikind = elem_kind[m]
            for k in range(dim):
                i_lo[k] = elem_lo[m, k]
                i_hi[k] = elem_hi[m, k]
            if ikind == 1:
                nq1 = _inner_data(dim, 1, elem_coords[m], elem_lo[m],
                                  elem_hi[m], box_in_pts, box_in_w,
                                  tri_in_pts, tri_in_w, y1, w1)
                PHI1 = PHI1_tri
                nloc1 = nl_tri
            else:
                nq1 = _inner_data(dim, 0, elem_coords[m], elem_lo[m],
                                  elem_hi[m], box_in_pts, box_in_w,
                                  tri_in_pts, tri_in_w, y1, w1)
                PHI1 = PHI1_box
                nloc1 = nl_box
            for i in range(nloc1):
                for j in range(nloc_max):
                    b21[i, j] = 0.0
                    b22[i, j] = 0.0
            ev = _pair_blocks(dim, degree, okb, ogeo, o_lo, o_hi, o_v0,
                              o_inv, y1, w1, nq1, PHI1, nloc1, i_lo, i_hi,
                              box_out_pts, box_out_w, tri_out_pts, tri_out_w,
                              delta, eps, cde, dm2, dp2, dm, dp,
                              L_min, L_max, b21, b22, nloc2, phi2, gsum,
                              s0, s1, s2, stack_geo, stack_lvl)
            if ev > 0:
                events += ev
                _scatter_block(b21, elem_dofs[m], elem_dofs[l], nloc1, nloc2,
                               gx, gy, gz, NX, NY, K, rowptr, vals)
                _scatter_block(b22, elem_dofs[m], elem_dofs[m], nloc1, nloc1,
                               gx, gy, gz, NX, NY, K, rowptr, vals)
    return events


@njit(cache=True, nogil=True)
def _build_offset_blocks(dim, degree, kind, h, protos, R,
                         box_out_pts, box_out_w, box_in_pts, box_in_w,
                         tri_out_pts, tri_out_w, tri_in_pts, tri_in_w,
                         PHI1_box, PHI1_tri,
                         delta, eps, cde, L_min, L_max,
                         B21, B22, blk_delta, blk_proto, blk_events):
    """Solo-pair blocks for every cell offset and proto pair on a uniform
    pure-kind grid.  Synthetic outer cell sits at the origin, the inner at
    offset*h.  Returns the number of stored (nonzero) blocks."""
    nproto = protos.shape[0]
    nl_tri = 3 * degree
    nl_box = (degree + 1) ** dim
    nloc = nl_tri if kind == 1 else nl_box
    nq_max = max(box_in_pts.shape[0], tri_in_pts.shape[0])
    dm = delta - eps
    dp = delta + eps
    dm2 = dm * dm
    dp2 = dp * dp
    phi2 = np.empty(nloc)
    gsum = np.empty(nq_max)
    s0 = np.empty(3)
    s1 = np.empty(3)
    s2 = np.empty(3)
    y1 = np.empty((nq_max, 3))
    w1 = np.empty(nq_max)
    ogeo = np.empty(6)
    o_lo = np.empty(3)
    o_hi = np.empty(3)
    o_v0 = np.empty(2)
    o_inv = np.empty((2, 2))
    i_lo = np.empty(3)
    i_hi = np.empty(3)
    icoords = np.empty((3, 2))
    ocoords = np.empty((3, 2))
    stack_geo = np.empty((STACK_CAP, 6))
    stack_lvl = np.empty(STACK_CAP, dtype=np.int32)
    okb = kind  # 0 quad, 1 tri, 2 hex
    nblk = 0
    rz_lo = -R if dim == 3 else 0
    rz_hi = R if dim == 3 else 0
    for dz in range(rz_lo, rz_hi + 1):
        for dy in range(-R, R + 1):
            for dx in range(-R, R + 1):
                for t2 in range(nproto):
                    for t1 in range(nproto):
                        if kind == 1:
                            for t in range(3):
                                ocoords[t, 0] = protos[t2, t, 0] * h
                                ocoords[t, 1] = protos[t2, t, 1] * h
                                icoords[t, 0] = protos[t1, t, 0] * h + dx * h
                                icoords[t, 1] = protos[t1, t, 1] * h + dy * h
                                ogeo[2 * t] = ocoords[t, 0]
                                ogeo[2 * t + 1] = ocoords[t, 1]
                            _tri_inv(ocoords, o_v0, o_inv)
                            i_lo[0] = dx * h
                            i_lo[1] = dy * h
                            i_hi[0] = dx * h + h
                            i_hi[1] = dy * h + h
                            nq1 = _inner_data(dim, 1, icoords, i_lo, i_hi,
                                              box_in_pts, box_in_w,
                                              tri_in_pts, tri_in_w, y1, w1)
                            PHI1 = PHI1_tri
                        else:
                            o_lo[0] = 0.0
                            o_lo[1] = 0.0
                            o_lo[2] = 0.0
                            o_hi[0] = h
                            o_hi[1] = h
                            o_hi[2] = h
                            i_lo[0] = dx * h
                            i_lo[1] = dy * h
                            i_lo[2] = dz * h
                            i_hi[0] = dx * h + h
                            i_hi[1] = dy * h + h
                            i_hi[2] = dz * h + h
                            for k in range(dim):
                                ogeo[k] = o_lo[k]
                                ogeo[dim + k] = o_hi[k]
                            nq1 = _inner_data(dim, 0, icoords, i_lo, i_hi,
                                              box_in_pts, box_in_w,
                                              tri_in_pts, tri_in_w, y1, w1)
                            PHI1 = PHI1_box
                        for i in range(nloc):
                            for j in range(nloc):
                                B21[nblk, i, j] = 0.0
                                B22[nblk, i, j] = 0.0
                        ev = _pair_blocks(dim, degree, okb, ogeo, o_lo, o_hi,
                                          o_v0, o_inv, y1, w1, nq1, PHI1,
                                          nloc, i_lo, i_hi,
                                          box_out_pts, box_out_w,
                                          tri_out_pts, tri_out_w,
                                          delta, eps, cde, dm2, dp2, dm, dp,
                                          L_min, L_max, B21[nblk], B22[nblk],
                                          nloc, phi2, gsum, s0, s1, s2,
                                          stack_geo, stack_lvl)
                        if ev > 0:
                            blk_delta[nblk, 0] = dx
                            blk_delta[nblk, 1] = dy
                            blk_delta[nblk, 2] = dz
                            blk_proto[nblk, 0] = t2
                            blk_proto[nblk, 1] = t1
                            blk_events[nblk] = ev
                            nblk += 1
    return nblk


@njit(cache=True, nogil=True)
def _scatter_offset_blocks(dim, nproto, ncx, ncy, ncz, nloc,
                           elem_dofs, B21, B22, blk_delta, blk_proto,
                           blk_ptr, blk_events,
                           gx, gy, gz, NX, NY, K, rowptr, vals):
    """Add precomputed offset blocks for every realized element pair.

    Blocks arrive grouped by inner proto (blk_ptr delimits the groups).
    Outer loop runs over inner cells so each element's A22 contributions
    collapse into one scatter.  Returns the total integration event count
    (per-block events times realized pair count)."""
    a22acc = np.empty((nloc, nloc))
    pairs = 0
    nz = ncz if dim == 3 else 1
    for cz in range(nz):
        for cy in range(ncy):
            for cx in range(ncx):
                cell_in = (cz * ncy + cy) * ncx + cx
                for t1 in range(nproto):
                    e_in = cell_in * nproto + t1
                    got = False
                    for i in range(nloc):
                        for j in range(nloc):
                            a22acc[i, j] = 0.0
                    for b in range(blk_ptr[t1], blk_ptr[t1 + 1]):
                        ox = cx - blk_delta[b, 0]
                        if ox < 0 or ox >= ncx:
                            continue
                        oy = cy - blk_delta[b, 1]
                        if oy < 0 or oy >= ncy:
                            continue
                        oz = cz - blk_delta[b, 2]
                        if dim == 3 and (oz < 0 or oz >= ncz):
                            continue
                        if dim == 2:
                            oz = 0
                        cell_out = (oz * ncy + oy) * ncx + ox
                        e_out = cell_out * nproto + blk_proto[b, 0]
                        _scatter_block(B21[b], elem_dofs[e_in],
                                       elem_dofs[e_out], nloc, nloc,
                                       gx, gy, gz, NX, NY, K, rowptr, vals)
                        for i in range(nloc):
                            for j in range(nloc):
                                a22acc[i, j] += B22[b, i, j]
                        got = True
                        pairs += blk_events[b]
                    if got:
                        _scatter_block(a22acc, elem_dofs[e_in],
                                       elem_dofs[e_in], nloc, nloc,
                                       gx, gy, gz, NX, NY, K, rowptr, vals)
    return pairs


@njit(cache=True, nogil=True)
def _bary_pair(dim, degree, okind, o_lo, o_hi, o_v0, o_inv, overts,
               bary, bvec, bmat, nloc1, cd, delta2,
               box_pts, box_w, tri_pts, tri_w,
               b21, b22, nloc2, phi2, svec, s0, s1, s2):
    """Single-level barycenter-gated pair integration.

    Outer points on the full element; the inner element contributes as a
    whole, with the sharp constant kernel, whenever its barycenter is
    within delta of the outer point.  The tie |x - b| = delta is inclusive;
    a relative slack keeps exact grid ties included regardless of how the
    coordinates were produced."""
    d2max = delta2 * (1.0 + 1e-12)
    gw = 0.0
    for j in range(nloc2):
        svec[j] = 0.0
    if okind == 1:
        nq2 = tri_pts.shape[0]
        e10 = overts[1, 0] - overts[0, 0]
        e11 = overts[1, 1] - overts[0, 1]
        e20 = overts[2, 0] - overts[0, 0]
        e21 = overts[2, 1] - overts[0, 1]
        det = e10 * e21 - e11 * e20
        for q2 in range(nq2):
            x0 = overts[0, 0] + tri_pts[q2, 0] * e10 + tri_pts[q2, 1] * e20
            x1 = overts[0, 1] + tri_pts[q2, 0] * e11 + tri_pts[q2, 1] * e21
            dx = x0 - bary[0]
            dy = x1 - bary[1]
            if dx * dx + dy * dy > d2max:
                continue
            w2q = tri_w[q2] * det
            gw += w2q
            _shape_at(1, degree, 2, tri_pts[q2, 0], tri_pts[q2, 1], 0.0,
                      phi2, s0, s1, s2)
            for j in range(nloc2):
                svec[j] += w2q * phi2[j]
    else:
        nq2 = box_pts.shape[0]
        jac = 1.0
        for k in range(dim):
            jac *= 0.5 * (o_hi[k] - o_lo[k])
        for q2 in range(nq2):
            x0 = o_lo[0] + (box_pts[q2, 0] + 1.0) * 0.5 * (o_hi[0] - o_lo[0])
            x1 = o_lo[1] + (box_pts[q2, 1] + 1.0) * 0.5 * (o_hi[1] - o_lo[1])
            x2 = 0.0
            if dim == 3:
                x2 = o_lo[2] + (box_pts[q2, 2] + 1.0) * 0.5 * (o_hi[2] - o_lo[2])
            dx = x0 - bary[0]
            dy = x1 - bary[1]
            d2 = dx * dx + dy * dy
            if dim == 3:
                dz = x2 - bary[2]
                d2 += dz * dz
            if d2 > d2max:
                continue
            w2q = box_w[q2] * jac
            gw += w2q
            _shape_at(okind, degree, dim, box_pts[q2, 0], box_pts[q2, 1],
                      box_pts[q2, 2] if dim == 3 else 0.0, phi2, s0, s1, s2)
            for j in range(nloc2):
                svec[j] += w2q * phi2[j]
    if gw == 0.0:
        zero = True
        for j in range(nloc2):
            if svec[j] != 0.0:
                zero = False
        if zero:
            return 0
    for i in range(nloc1):
        bv = cd * bvec[i]
        for j in range(nloc2):
            b21[i, j] -= bv * svec[j]
        for j in range(nloc1):
            b22[i, j] += cd * gw * bmat[i, j]
    return 1


@njit(cache=True, nogil=True)
def _bary_general(dim, degree,
                  elem_kind, elem_coords, elem_lo, elem_hi,
                  elem_dofs, elem_nloc,
                  outer_ids, cand_ptr, cand_ids,
                  box_out_pts, box_out_w, tri_out_pts, tri_out_w,
                  bary_all, bvec_all, bmat_all,
                  cd, delta,
                  gx, gy, gz, NX, NY, K, rowptr, vals):
    nl_box = (degree + 1) ** dim
    nl_tri = 3 * degree
    nloc_max = max(nl_box, nl_tri)
    delta2 = delta * delta
    b21 = np.empty((nloc_max, nloc_max))
    b22 = np.empty((nloc_max, nloc_max))
    phi2 = np.empty(nloc_max)
    svec = np.empty(nloc_max)
    s0 = np.empty(3)
    s1 = np.empty(3)
    s2 = np.empty(3)
    o_lo = np.empty(3)
    o_hi = np.empty(3)
    o_v0 = np.empty(2)
    o_inv = np.empty((2, 2))
    events = 0
    for oi in range(outer_ids.shape[0]):
        l = outer_ids[oi]
        okind = elem_kind[l]
        nloc2 = nl_tri if okind == 1 else nl_box
        for k in range(dim):
            o_lo[k] = elem_lo[l, k]
            o_hi[k] = elem_hi[l, k]
        for ci in range(cand_ptr[oi], cand_ptr[oi + 1]):
            m = cand_ids[ci]
            nloc1 = nl_tri if elem_kind[m] == 1 else nl_box
            for i in range(nloc1):
                for j in range(nloc_max):
                    b21[i, j] = 0.0
                    b22[i, j] = 0.0
            ev = _bary_pair(dim, degree, okind, o_lo, o_hi, o_v0, o_inv,
                            elem_coords[l], bary_all[m], bvec_all[m],
                            bmat_all[m], nloc1, cd, delta2,
                            box_out_pts, box_out_w, tri_out_pts, tri_out_w,
                            b21, b22, nloc2, phi2, svec, s0, s1, s2)
            if ev > 0:
                events += 1
                _scatter_block(b21, elem_dofs[m], elem_dofs[l], nloc1, nloc2,
                               gx, gy, gz, NX, NY, K, rowptr, vals)
                _scatter_block(b22, elem_dofs[m], elem_dofs[m], nloc1, nloc1,
                               gx, gy, gz, NX, NY, K, rowptr, vals)
    return events


@njit(cache=True, nogil=True)
def _bary_offset_blocks(dim, degree, kind, h, protos, R,
                        box_out_pts, box_out_w, tri_out_pts, tri_out_w,
                        proto_bary, proto_bvec, proto_bmat,
                        cd, delta,
                        B21, B22, blk_delta, blk_proto, blk_events):
    nproto = protos.shape[0]
    nloc = 3 * degree if kind == 1 else (degree + 1) ** dim
    delta2 = delta * delta
    phi2 = np.empty(nloc)
    svec = np.empty(nloc)
    s0 = np.empty(3)
    s1 = np.empty(3)
    s2 = np.empty(3)
    o_lo = np.empty(3)
    o_hi = np.empty(3)
    o_v0 = np.empty(2)
    o_inv = np.empty((2, 2))
    ocoords = np.empty((3, 2))
    bary = np.empty(3)
    nblk = 0
    rz_lo = -R if dim == 3 else 0
    rz_hi = R if dim == 3 else 0
    for dz in range(rz_lo, rz_hi + 1):
        for dy in range(-R, R + 1):
            for dx in range(-R, R + 1):
                for t2 in range(nproto):
                    for t1 in range(nproto):
                        if kind == 1:
                            for t in range(3):
                                ocoords[t, 0] = protos[t2, t, 0] * h
                                ocoords[t, 1] = protos[t2, t, 1] * h
                        o_lo[0] = 0.0
                        o_lo[1] = 0.0
                        o_lo[2] = 0.0
                        o_hi[0] = h
                        o_hi[1] = h
                        o_hi[2] = h
                        bary[0] = proto_bary[t1, 0] + dx * h
                        bary[1] = proto_bary[t1, 1] + dy * h
                        bary[2] = (proto_bary[t1, 2] + dz * h) if dim == 3 else 0.0
                        for i in range(nloc):
                            for j in range(nloc):
                                B21[nblk, i, j] = 0.0
                                B22[nblk, i, j] = 0.0
                        ev = _bary_pair(dim, degree, kind, o_lo, o_hi, o_v0,
                                        o_inv, ocoords, bary, proto_bvec[t1],
                                        proto_bmat[t1], nloc, cd, delta2,
                                        box_out_pts, box_out_w,
                                        tri_out_pts, tri_out_w,
                                        B21[nblk], B22[nblk], nloc,
                                        phi2, svec, s0, s1, s2)
                        if ev > 0:
                            blk_delta[nblk, 0] = dx
                            blk_delta[nblk, 1] = dy
                            blk_delta[nblk, 2] = dz
                            blk_proto[nblk, 0] = t2
                            blk_proto[nblk, 1] = t1
                            blk_events[nblk] = ev
                            nblk += 1
    return nblk


# ---------------------------------------------------------------------------
# implicit-pattern matrix ops

@njit(cache=True, nogil=True, inline="always")
def _eidx(r, c, gx, gy, gz, NX, NY, K, rowptr):
    rx = gx[r]
    ry = gy[r]
    rz = gz[r]
    xlo = rx - K
    if xlo < 0:
        xlo = 0
    xhi = rx + K
    if xhi > NX - 1:
        xhi = NX - 1
    Wx = xhi - xlo + 1
    ylo = ry - K
    if ylo < 0:
        ylo = 0
    yhi = ry + K
    if yhi > NY - 1:
        yhi = NY - 1
    Wy = yhi - ylo + 1
    zlo = rz - K
    if zlo < 0:
        zlo = 0
    return rowptr[r] + ((gz[c] - zlo) * Wy + (gy[c] - ylo)) * Wx + (gx[c] - xlo)


@njit(cache=True, nogil=True)
def _matvec(rowptr, vals, x, y, NX, NY, NZ, K, n):
    for r in range(n):
        rx = r % NX
        t = r // NX
        ry = t % NY
        rz = t // NY
        xlo = rx - K
        if xlo < 0:
            xlo = 0
        xhi = rx + K
        if xhi > NX - 1:
            xhi = NX - 1
        ylo = ry - K
        if ylo < 0:
            ylo = 0
        yhi = ry + K
        if yhi > NY - 1:
            yhi = NY - 1
        zlo = rz - K
        if zlo < 0:
            zlo = 0
        zhi = rz + K
        if zhi > NZ - 1:
            zhi = NZ - 1
        s = 0.0
        p = rowptr[r]
        for cz in range(zlo, zhi + 1):
            for cy in range(ylo, yhi + 1):
                base = (cz * NY + cy) * NX + xlo
                for t2 in range(xhi - xlo + 1):
                    s += vals[p] * x[base + t2]
                    p += 1
        y[r] = s


@njit(cache=True, nogil=True)
def _symmetrize(rowptr, vals, gx, gy, gz, NX, NY, NZ, K, n):
    for r in range(n):
        rx = gx[r]
        ry = gy[r]
        rz = gz[r]
        xlo = max(rx - K, 0)
        xhi = min(rx + K, NX - 1)
        ylo = max(ry - K, 0)
        yhi = min(ry + K, NY - 1)
        zlo = max(rz - K, 0)
        zhi = min(rz + K, NZ - 1)
        p = rowptr[r]
        for cz in range(zlo, zhi + 1):
            for cy in range(ylo, yhi + 1):
                for cxx in range(xlo, xhi + 1):
                    c = (cz * NY + cy) * NX + cxx
                    if c > r:
                        q = _eidx(c, r, gx, gy, gz, NX, NY, K, rowptr)
                        a = 0.5 * (vals[p] + vals[q])
                        vals[p] = a
                        vals[q] = a
                    p += 1


@njit(cache=True, nogil=True)
def _asymmetry_inf(rowptr, vals, gx, gy, gz, NX, NY, NZ, K, n):
    worst = 0.0
    for r in range(n):
        rx = gx[r]
        ry = gy[r]
        rz = gz[r]
        xlo = max(rx - K, 0)
        xhi = min(rx + K, NX - 1)
        ylo = max(ry - K, 0)
        yhi = min(ry + K, NY - 1)
        zlo = max(rz - K, 0)
        zhi = min(rz + K, NZ - 1)
        p = rowptr[r]
        rowsum = 0.0
        for cz in range(zlo, zhi + 1):
            for cy in range(ylo, yhi + 1):
                for cxx in range(xlo, xhi + 1):
                    c = (cz * NY + cy) * NX + cxx
                    q = _eidx(c, r, gx, gy, gz, NX, NY, K, rowptr)
                    d = vals[p] - vals[q]
                    rowsum += abs(d)
                    p += 1
        if rowsum > worst:
            worst = rowsum
    return worst


@njit(cache=True, nogil=True)
def _fill_cols(rowptr, cols, gx, gy, gz, NX, NY, NZ, K, n):
    for r in range(n):
        xlo = max(gx[r] - K, 0)
        xhi = min(gx[r] + K, NX - 1)
        ylo = max(gy[r] - K, 0)
        yhi = min(gy[r] + K, NY - 1)
        zlo = max(gz[r] - K, 0)
        zhi = min(gz[r] + K, NZ - 1)
        p = rowptr[r]
        for cz in range(zlo, zhi + 1):
            for cy in range(ylo, yhi + 1):
                for cxx in range(xlo, xhi + 1):
                    cols[p] = (cz * NY + cy) * NX + cxx
                    p += 1


@njit(cache=True, nogil=True)
def _norm_inf(rowptr, vals, n):
    worst = 0.0
    for r in range(n):
        s = 0.0
        for p in range(rowptr[r], rowptr[r + 1]):
            s += abs(vals[p])
        if s > worst:
            worst = s
    return worst


# ---------------------------------------------------------------------------
# independent fine-composite reference assembler (validation only, 2D)
#
# Deliberately separate implementations of the shape functions and the
# cutoff so the main assembly path is cross-checked by different code.

@njit(cache=True, nogil=True, inline="always")
def _ref_mu(d, delta, eps):
    if eps == 0.0:
        return 1.0 if d <= delta else 0.0
    if d < delta - eps:
        return 1.0
    if d > delta + eps:
        return 0.0
    r = (delta - d) / eps
    # expanded form of the connector polynomial
    return (128.0 + 315.0 * r - 420.0 * r ** 3 + 378.0 * r ** 5
            - 180.0 * r ** 7 + 35.0 * r ** 9) / 256.0


@njit(cache=True, nogil=True)
def _ref_shapes2(kind, degree, rx, ry, out):
    # quad on [-1,1]^2 tensor-lex; tri on the unit simplex
    if kind == 1:
        lz = 1.0 - rx - ry
        if degree == 1:
            out[0] = lz
            out[1] = rx
            out[2] = ry
            return 3
        out[0] = lz * (2.0 * lz - 1.0)
        out[1] = rx * (2.0 * rx - 1.0)
        out[2] = ry * (2.0 * ry - 1.0)
        out[3] = 4.0 * lz * rx
        out[4] = 4.0 * rx * ry
        out[5] = 4.0 * ry * lz
        return 6
    if degree == 1:
        ax0 = 0.5 * (1.0 - rx)
        ax1 = 0.5 * (1.0 + rx)
        ay0 = 0.5 * (1.0 - ry)
        ay1 = 0.5 * (1.0 + ry)
        out[0] = ax0 * ay0
        out[1] = ax1 * ay0
        out[2] = ax0 * ay1
        out[3] = ax1 * ay1
        return 4
    ax0 = 0.5 * rx * (rx - 1.0)
    ax1 = 1.0 - rx * rx
    ax2 = 0.5 * rx * (rx + 1.0)
    ay0 = 0.5 * ry * (ry - 1.0)
    ay1 = 1.0 - ry * ry
    ay2 = 0.5 * ry * (ry + 1.0)
    out[0] = ax0 * ay0
    out[1] = ax1 * ay0
    out[2] = ax2 * ay0
    out[3] = ax0 * ay1
    out[4] = ax1 * ay1
    out[5] = ax2 * ay1
    out[6] = ax0 * ay2
    out[7] = ax1 * ay2
    out[8] = ax2 * ay2
    return 9


@njit(cache=True, nogil=True)
def _reference_dense(degree, elem_kind, elem_coords, elem_lo, elem_hi,
                     elem_dofs, elem_nloc,
                     sub_boxes, sub_tris, fine_pts, fine_w,
                     dun_pts, dun_w,
                     box_in_pts, box_in_w, tri_in_pts, tri_in_w,
                     delta, eps, cde, A):
    """Non-adaptive composite assembly into a dense matrix.

    Outer integration uses a fixed pre-split of each element (sub_boxes as
    packed ref lo/hi on [-1,1]^2, sub_tris as ref corner triples on the
    unit simplex) with a high-order rule; inner integration uses the plain
    per-element base rule, matching the adaptive scheme's limit."""
    n_elem = elem_kind.shape[0]
    dpe = delta + eps
    phi_l = np.empty(9)
    phi_m = np.empty(9)
    x2s = np.empty((400, 2))
    w2s = np.empty(400)
    f2s = np.empty((400, 9))
    y1s = np.empty((64, 2))
    w1s = np.empty(64)
    f1s = np.empty((64, 9))
    for l in range(n_elem):
        lkind = elem_kind[l]
        # tabulate all outer points of element l
        nq2 = 0
        if lkind == 1:
            v0x = elem_coords[l, 0, 0]
            v0y = elem_coords[l, 0, 1]
            e10 = elem_coords[l, 1, 0] - v0x
            e11 = elem_coords[l, 1, 1] - v0y
            e20 = elem_coords[l, 2, 0] - v0x
            e21 = elem_coords[l, 2, 1] - v0y
            det = e10 * e21 - e11 * e20
            for s in range(sub_tris.shape[0]):
                a0 = sub_tris[s, 0, 0]
                a1 = sub_tris[s, 0, 1]
                b0 = sub_tris[s, 1, 0]
                b1 = sub_tris[s, 1, 1]
                c0 = sub_tris[s, 2, 0]
                c1 = sub_tris[s, 2, 1]
                sdet = (b0 - a0) * (c1 - a1) - (b1 - a1) * (c0 - a0)
                for q in range(dun_pts.shape[0]):
                    rx = a0 + dun_pts[q, 0] * (b0 - a0) + dun_pts[q, 1] * (c0 - a0)
                    ry = a1 + dun_pts[q, 0] * (b1 - a1) + dun_pts[q, 1] * (c1 - a1)
                    nl = _ref_shapes2(1, degree, rx, ry, phi_l)
                    for i in range(nl):
                        f2s[nq2, i] = phi_l[i]
                    x2s[nq2, 0] = v0x + rx * e10 + ry * e20
                    x2s[nq2, 1] = v0y + rx * e11 + ry * e21
                    w2s[nq2] = dun_w[q] * sdet * det
                    nq2 += 1
            nloc2 = 3 * degree
        else:
            lx = elem_lo[l, 0]
            ly = elem_lo[l, 1]
            hx = elem_hi[l, 0]
            hy = elem_hi[l, 1]
            for s in range(sub_boxes.shape[0]):
                sa0 = sub_boxes[s, 0]
                sa1 = sub_boxes[s, 1]
                sb0 = sub_boxes[s, 2]
                sb1 = sub_boxes[s, 3]
                jac = 0.25 * (sb0 - sa0) * (sb1 - sa1) * 0.25 * (hx - lx) * (hy - ly)
                for q in range(fine_pts.shape[0]):
                    rx = sa0 + (fine_pts[q, 0] + 1.0) * 0.5 * (sb0 - sa0)
                    ry = sa1 + (fine_pts[q, 1] + 1.0) * 0.5 * (sb1 - sa1)
                    nl = _ref_shapes2(0, degree, rx, ry, phi_l)
                    for i in range(nl):
                        f2s[nq2, i] = phi_l[i]
                    x2s[nq2, 0] = lx + (rx + 1.0) * 0.5 * (hx - lx)
                    x2s[nq2, 1] = ly + (ry + 1.0) * 0.5 * (hy - ly)
                    w2s[nq2] = fine_w[q] * jac
                    nq2 += 1
            nloc2 = (degree + 1) ** 2
        for m in range(n_elem):
            # conservative gap test, skips exact zeros only
            gap = 0.0
            for k in range(2):
                d1 = elem_lo[l, k] - elem_hi[m, k]
                d2 = elem_lo[m, k] - elem_hi[l, k]
                if d1 > gap:
                    gap = d1
                if d2 > gap:
                    gap = d2
            if gap >= dpe:
                continue
            mkind = elem_kind[m]
            nq1 = 0
            if mkind == 1:
                v0x = elem_coords[m, 0, 0]
                v0y = elem_coords[m, 0, 1]
                e10 = elem_coords[m, 1, 0] - v0x
                e11 = elem_coords[m, 1, 1] - v0y
                e20 = elem_coords[m, 2, 0] - v0x
                e21 = elem_coords[m, 2, 1] - v0y
                det = e10 * e21 - e11 * e20
                for q in range(tri_in_pts.shape[0]):
                    rx = tri_in_pts[q, 0]
                    ry = tri_in_pts[q, 1]
                    nl = _ref_shapes2(1, degree, rx, ry, phi_m)
                    for i in range(nl):
                        f1s[nq1, i] = phi_m[i]
                    y1s[nq1, 0] = v0x + rx * e10 + ry * e20
                    y1s[nq1, 1] = v0y + rx * e11 + ry * e21
                    w1s[nq1] = tri_in_w[q] * det
                    nq1 += 1
                nloc1 = 3 * degree
            else:
                lx = elem_lo[m, 0]
                ly = elem_lo[m, 1]
                hx = elem_hi[m, 0]
                hy = elem_hi[m, 1]
                jac = 0.25 * (hx - lx) * (hy - ly)
                for q in range(box_in_pts.shape[0]):
                    rx = box_in_pts[q, 0]
                    ry = box_in_pts[q, 1]
                    nl = _ref_shapes2(0, degree, rx, ry, phi_m)
                    for i in range(nl):
                        f1s[nq1, i] = phi_m[i]
                    y1s[nq1, 0] = lx + (rx + 1.0) * 0.5 * (hx - lx)
                    y1s[nq1, 1] = ly + (ry + 1.0) * 0.5 * (hy - ly)
                    w1s[nq1] = box_in_w[q] * jac
                    nq1 += 1
                nloc1 = (degree + 1) ** 2
            for q2 in range(nq2):
                for q1 in range(nq1):
                    dx = x2s[q2, 0] - y1s[q1, 0]
                    dy = x2s[q2, 1] - y1s[q1, 1]
                    d = np.sqrt(dx * dx + dy * dy)
                    if d > dpe:
                        continue
                    gam = 2.0 * cde * _ref_mu(d, delta, eps) * w2s[q2] * w1s[q1]
                    if gam == 0.0:
                        continue
                    for i in range(nloc1):
                        ri = elem_dofs[m, i]
                        gi = gam * f1s[q1, i]
                        for j in range(nloc2):
                            A[ri, elem_dofs[l, j]] -= gi * f2s[q2, j]
                        for j in range(nloc1):
                            A[ri, elem_dofs[m, j]] += gi * f1s[q1, j]


@njit(cache=True, nogil=True)
def _diag(rowptr, vals, gx, gy, gz, NX, NY, K, n, out):
    for r in range(n):
        out[r] = vals[_eidx(r, r, gx, gy, gz, NX, NY, K, rowptr)]


@njit(cache=True, nogil=True)
def _count_candidates(outer_ids, elem_cell, elem_lo, elem_hi, inner_mask,
                      cell_ptr, ncx, ncy, ncz, R, dim, dpe, counts):
    for oi in range(outer_ids.shape[0]):
        l = outer_ids[oi]
        c = elem_cell[l]
        cx = c % ncx
        t = c // ncx
        cy = t % ncy
        cz = t // ncy
        zlo = max(cz - R, 0) if dim == 3 else 0
        zhi = min(cz + R, ncz - 1) if dim == 3 else 0
        n = 0
        for z2 in range(zlo, zhi + 1):
            for y2 in range(max(cy - R, 0), min(cy + R, ncy - 1) + 1):
                for x2 in range(max(cx - R, 0), min(cx + R, ncx - 1) + 1):
                    c2 = (z2 * ncy + y2) * ncx + x2
                    for e in range(cell_ptr[c2], cell_ptr[c2 + 1]):
                        if not inner_mask[e]:
                            continue
                        gap = 0.0
                        for k in range(dim):
                            d1 = elem_lo[l, k] - elem_hi[e, k]
                            d2 = elem_lo[e, k] - elem_hi[l, k]
                            if d1 > gap:
                                gap = d1
                            if d2 > gap:
                                gap = d2
                        if gap < dpe:
                            n += 1
        counts[oi] = n


@njit(cache=True, nogil=True)
def _fill_candidates(outer_ids, elem_cell, elem_lo, elem_hi, inner_mask,
                     cell_ptr, ncx, ncy, ncz, R, dim, dpe, ptr, ids):
    for oi in range(outer_ids.shape[0]):
        l = outer_ids[oi]
        c = elem_cell[l]
        cx = c % ncx
        t = c // ncx
        cy = t % ncy
        cz = t // ncy
        zlo = max(cz - R, 0) if dim == 3 else 0
        zhi = min(cz + R, ncz - 1) if dim == 3 else 0
        p = ptr[oi]
        for z2 in range(zlo, zhi + 1):
            for y2 in range(max(cy - R, 0), min(cy + R, ncy - 1) + 1):
                for x2 in range(max(cx - R, 0), min(cx + R, ncx - 1) + 1):
                    c2 = (z2 * ncy + y2) * ncx + x2
                    for e in range(cell_ptr[c2], cell_ptr[c2 + 1]):
                        if not inner_mask[e]:
                            continue
                        gap = 0.0
                        for k in range(dim):
                            d1 = elem_lo[l, k] - elem_hi[e, k]
                            d2 = elem_lo[e, k] - elem_hi[l, k]
                            if d1 > gap:
                                gap = d1
                            if d2 > gap:
                                gap = d2
                        if gap < dpe:
                            ids[p] = e
                            p += 1
