"""Maximum-weight matching in general graphs (Galil's O(n^3) primal-dual
blossom algorithm, array-based so it can be JIT compiled with numba).

All weights must be integers.  ``max_weight_matching`` returns, for each
vertex, its partner or -1.  With ``maxcardinality=True`` the matching has
maximum cardinality and, among those, maximum total weight; this is the
mode used to find minimum-cost perfect matchings after a weight flip.
"""

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


@njit(cache=True)
def _leaves(b, n, childs, childs_len, work, out):
    """Collect the original vertices inside (possibly nested) blossom b."""
    if b < n:
        out[0] = b
        return 1
    top = 0
    work[top] = b
    top += 1
    cnt = 0
    while top > 0:
        top -= 1
        c = work[top]
        if c < n:
            out[cnt] = c
            cnt += 1
        else:
            row = c - n
            for i in range(childs_len[row]):
                work[top] = childs[row, i]
                top += 1
    return cnt


@njit(cache=True)
def _augment_blossom(b, v, n, mate, endpoint, blossomparent, blossombase,
                     childs, childs_len, endps):
    # Move vertex v to the base of blossom b by augmenting along the
    # internal alternating path, then rotate the child list.
    t = v
    while blossomparent[t] != b:
        t = blossomparent[t]
    if t >= n:
        _augment_blossom(t, v, n, mate, endpoint, blossomparent,
                         blossombase, childs, childs_len, endps)
    row = b - n
    length = childs_len[row]
    i = 0
    for idx in range(length):
        if childs[row, idx] == t:
            i = idx
            break
    j = i
    if i & 1:
        j -= length
        jstep = 1
        endptrick = 0
    else:
        jstep = -1
        endptrick = 1
    while j != 0:
        j += jstep
        t = childs[row, j % length]
        p = endps[row, (j - endptrick) % length] ^ endptrick
        if t >= n:
            _augment_blossom(t, endpoint[p], n, mate, endpoint,
                             blossomparent, blossombase, childs, childs_len,
                             endps)
        j += jstep
        t = childs[row, j % length]
        if t >= n:
            _augment_blossom(t, endpoint[p ^ 1], n, mate, endpoint,
                             blossomparent, blossombase, childs, childs_len,
                             endps)
        mate[endpoint[p]] = p ^ 1
        mate[endpoint[p ^ 1]] = p
    # rotate childs/endps so that t (now containing v) comes first
    if i > 0:
        tmpc = np.empty(length, np.int32)
        tmpe = np.empty(length, np.int32)
        for idx in range(length):
            tmpc[idx] = childs[row, (i + idx) % length]
            tmpe[idx] = endps[row, (i + idx) % length]
        for idx in range(length):
            childs[row, idx] = tmpc[idx]
            endps[row, idx] = tmpe[idx]
    blossombase[b] = blossombase[childs[row, 0]]


@njit(cache=True)
def _core(n, ei, ej, wt, adj_ptr, nbr_w, nbr_p, nbr_wt,
          maxcardinality):  # noqa: C901
    nedge = len(ei)
    maxweight = np.int64(0)
    for k in range(nedge):
        if wt[k] > maxweight:
            maxweight = wt[k]

    endpoint = np.empty(2 * nedge, np.int32)
    for k in range(nedge):
        endpoint[2 * k] = ei[k]
        endpoint[2 * k + 1] = ej[k]

    mate = np.full(n, -1, np.int32)
    label = np.zeros(2 * n, np.int8)
    labelend = np.full(2 * n, -1, np.int32)
    inblossom = np.arange(n).astype(np.int32)
    blossomparent = np.full(2 * n, -1, np.int32)
    blossombase = np.full(2 * n, -1, np.int32)
    for v in range(n):
        blossombase[v] = v
    childs = np.zeros((n, n + 1), np.int32)
    childs_len = np.zeros(n, np.int32)
    endps = np.zeros((n, n + 1), np.int32)
    bestedge = np.full(2 * n, -1, np.int32)
    bbe = np.zeros((n, 2 * n), np.int32)       # blossom best-edge lists
    bbe_len = np.full(n, -1, np.int32)         # -1 means "not maintained"
    unused = np.empty(n, np.int32)
    for i in range(n):
        unused[i] = n + i
    n_unused = n
    dualvar = np.zeros(2 * n, np.int64)
    for v in range(n):
        dualvar[v] = maxweight
    allowedge = np.zeros(nedge, np.bool_)
    # per stage: each vertex turns into an S-vertex at most once (<= n
    # enqueues) and each delta-2/3 step re-enqueues one endpoint of a
    # newly allowed edge (<= nedge enqueues)
    queue = np.empty(2 * nedge + 4 * n + 8, np.int32)
    qlen = 0

    leafwork = np.empty(2 * n, np.int32)
    leafout = np.empty(n, np.int32)
    scanpath = np.empty(2 * n, np.int32)
    bestedgeto = np.empty(2 * n, np.int32)
    expstack = np.empty(n + 1, np.int32)

    for _stage in range(n):
        for i in range(2 * n):
            label[i] = 0
            bestedge[i] = -1
        bbe_len[:] = -1
        allowedge[:] = False
        qlen = 0

        # label single vertices as S-vertices
        for v in range(n):
            if mate[v] == -1 and label[inblossom[v]] == 0:
                # assignLabel(v, 1, -1), inlined below as loop
                w0 = v
                t0 = 1
                p0 = -1
                while True:
                    b = inblossom[w0]
                    label[w0] = t0
                    label[b] = t0
                    labelend[w0] = p0
                    labelend[b] = p0
                    bestedge[w0] = -1
                    bestedge[b] = -1
                    if t0 == 1:
                        cnt = _leaves(b, n, childs, childs_len, leafwork,
                                      leafout)
                        for li in range(cnt):
                            queue[qlen] = leafout[li]
                            qlen += 1
                        break
                    else:
                        base = blossombase[b]
                        mp = mate[base]
                        w0 = endpoint[mp]
                        t0 = 1
                        p0 = mp ^ 1

        augmented = False
        while True:
            while qlen > 0 and not augmented:
                qlen -= 1
                v = queue[qlen]
                ibv = inblossom[v]
                dv = dualvar[v]
                for ai in range(adj_ptr[v], adj_ptr[v + 1]):
                    w = nbr_w[ai]
                    if ibv == inblossom[w]:
                        continue
                    p = nbr_p[ai]
                    k = p >> 1
                    kslack = np.int64(0)
                    if not allowedge[k]:
                        kslack = dv + dualvar[w] - 2 * nbr_wt[ai]
                        if kslack <= 0:
                            allowedge[k] = True
                    if allowedge[k]:
                        if label[inblossom[w]] == 0:
                            # assignLabel(w, 2, p ^ 1)
                            w0 = w
                            t0 = 2
                            p0 = p ^ 1
                            while True:
                                b = inblossom[w0]
                                label[w0] = t0
                                label[b] = t0
                                labelend[w0] = p0
                                labelend[b] = p0
                                bestedge[w0] = -1
                                bestedge[b] = -1
                                if t0 == 1:
                                    cnt = _leaves(b, n, childs, childs_len,
                                                  leafwork, leafout)
                                    for li in range(cnt):
                                        queue[qlen] = leafout[li]
                                        qlen += 1
                                    break
                                else:
                                    base = blossombase[b]
                                    mp = mate[base]
                                    w0 = endpoint[mp]
                                    t0 = 1
                                    p0 = mp ^ 1
                        elif label[inblossom[w]] == 1:
                            # scanBlossom(v, w): find common ancestor
                            pathlen = 0
                            base = np.int32(-1)
                            v1 = v
                            w1 = w
                            while v1 != -1 or w1 != -1:
                                b = inblossom[v1]
                                if label[b] & 4:
                                    base = blossombase[b]
                                    break
                                scanpath[pathlen] = b
                                pathlen += 1
                                label[b] = 5
                                if labelend[b] == -1:
                                    v1 = -1
                                else:
                                    v1 = endpoint[labelend[b]]
                                    b = inblossom[v1]
                                    v1 = endpoint[labelend[b]]
                                if w1 != -1:
                                    tv = v1
                                    v1 = w1
                                    w1 = tv
                            for pi in range(pathlen):
                                label[scanpath[pi]] = 1
                            if base >= 0:
                                # addBlossom(base, k)
                                vv = ei[k]
                                ww = ej[k]
                                bb = inblossom[base]
                                bv = inblossom[vv]
                                bw = inblossom[ww]
                                n_unused -= 1
                                b = unused[n_unused]
                                row = b - n
                                blossombase[b] = base
                                blossomparent[b] = -1
                                blossomparent[bb] = b
                                # trace path from bv back to bb
                                plen = 0
                                while bv != bb:
                                    blossomparent[bv] = b
                                    scanpath[plen] = bv
                                    endps[row, plen] = labelend[bv]
                                    plen += 1
                                    vv2 = endpoint[labelend[bv]]
                                    bv = inblossom[vv2]
                                # reverse into childs/endps
                                childs[row, 0] = bb
                                for pi in range(plen):
                                    childs[row, pi + 1] = scanpath[
                                        plen - 1 - pi]
                                # reverse endps: entry pi stored at
                                # endps[row, pi]; reversed order
                                for pi in range(plen // 2):
                                    tmp = endps[row, pi]
                                    endps[row, pi] = endps[row,
                                                           plen - 1 - pi]
                                    endps[row, plen - 1 - pi] = tmp
                                endps[row, plen] = 2 * k
                                clen = plen + 1
                                elen = plen + 1
                                while bw != bb:
                                    blossomparent[bw] = b
                                    childs[row, clen] = bw
                                    clen += 1
                                    endps[row, elen] = labelend[bw] ^ 1
                                    elen += 1
                                    ww2 = endpoint[labelend[bw]]
                                    bw = inblossom[ww2]
                                childs_len[row] = clen
                                label[b] = 1
                                labelend[b] = labelend[bb]
                                dualvar[b] = 0
                                cnt = _leaves(b, n, childs, childs_len,
                                              leafwork, leafout)
                                for li in range(cnt):
                                    lv = leafout[li]
                                    if label[inblossom[lv]] == 2:
                                        queue[qlen] = lv
                                        qlen += 1
                                    inblossom[lv] = b
                                # compute best edges of the new blossom
                                for bi in range(2 * n):
                                    bestedgeto[bi] = -1
                                for ci in range(clen):
                                    bv2 = childs[row, ci]
                                    if bv2 < n or bbe_len[bv2 - n] < 0:
                                        cnt = _leaves(bv2, n, childs,
                                                      childs_len, leafwork,
                                                      leafout)
                                        for li in range(cnt):
                                            lv = leafout[li]
                                            for ai2 in range(
                                                    adj_ptr[lv],
                                                    adj_ptr[lv + 1]):
                                                k2 = nbr_p[ai2] >> 1
                                                jj = ej[k2]
                                                if inblossom[jj] == b:
                                                    jj = ei[k2]
                                                bj = inblossom[jj]
                                                if bj != b and \
                                                        label[bj] == 1:
                                                    s_new = (dualvar[ei[k2]]
                                                             + dualvar[
                                                                 ej[k2]]
                                                             - 2 * wt[k2])
                                                    bo = bestedgeto[bj]
                                                    if bo == -1 or s_new < (
                                                            dualvar[ei[bo]]
                                                            + dualvar[
                                                                ej[bo]]
                                                            - 2 * wt[bo]):
                                                        bestedgeto[bj] = k2
                                    else:
                                        r2 = bv2 - n
                                        for li in range(bbe_len[r2]):
                                            k2 = bbe[r2, li]
                                            jj = ej[k2]
                                            if inblossom[jj] == b:
                                                jj = ei[k2]
                                            bj = inblossom[jj]
                                            if bj != b and label[bj] == 1:
                                                s_new = (dualvar[ei[k2]]
                                                         + dualvar[ej[k2]]
                                                         - 2 * wt[k2])
                                                bo = bestedgeto[bj]
                                                if bo == -1 or s_new < (
                                                        dualvar[ei[bo]]
                                                        + dualvar[ej[bo]]
                                                        - 2 * wt[bo]):
                                                    bestedgeto[bj] = k2
                                    if bv2 >= n:
                                        bbe_len[bv2 - n] = -1
                                    bestedge[bv2] = -1
                                nb = 0
                                best = -1
                                bestslack = np.int64(0)
                                for bi in range(2 * n):
                                    k2 = bestedgeto[bi]
                                    if k2 != -1:
                                        bbe[row, nb] = k2
                                        nb += 1
                                        s_new = (dualvar[ei[k2]]
                                                 + dualvar[ej[k2]]
                                                 - 2 * wt[k2])
                                        if best == -1 or s_new < bestslack:
                                            best = k2
                                            bestslack = s_new
                                bbe_len[row] = nb
                                bestedge[b] = best
                                ibv = inblossom[v]
                            else:
                                # augmentMatching(k)
                                for side in range(2):
                                    if side == 0:
                                        s = ei[k]
                                        p2 = 2 * k + 1
                                    else:
                                        s = ej[k]
                                        p2 = 2 * k
                                    while True:
                                        bs = inblossom[s]
                                        if bs >= n:
                                            _augment_blossom(
                                                bs, s, n, mate, endpoint,
                                                blossomparent, blossombase,
                                                childs, childs_len, endps)
                                        mate[s] = p2
                                        if labelend[bs] == -1:
                                            break
                                        t2 = endpoint[labelend[bs]]
                                        bt = inblossom[t2]
                                        s = endpoint[labelend[bt]]
                                        jv = endpoint[labelend[bt] ^ 1]
                                        if bt >= n:
                                            _augment_blossom(
                                                bt, jv, n, mate, endpoint,
                                                blossomparent, blossombase,
                                                childs, childs_len, endps)
                                        mate[jv] = labelend[bt]
                                        p2 = labelend[bt] ^ 1
                                augmented = True
                                break
                        elif label[w] == 0:
                            label[w] = 2
                            labelend[w] = p ^ 1
                    elif label[inblossom[w]] == 1:
                        b = ibv
                        bo = bestedge[b]
                        if bo == -1 or kslack < (dualvar[ei[bo]]
                                                 + dualvar[ej[bo]]
                                                 - 2 * wt[bo]):
                            bestedge[b] = k
                    elif label[w] == 0:
                        bo = bestedge[w]
                        if bo == -1 or kslack < (dualvar[ei[bo]]
                                                 + dualvar[ej[bo]]
                                                 - 2 * wt[bo]):
                            bestedge[w] = k

            if augmented:
                break

            # no augmenting path found; adjust dual variables
            deltatype = -1
            delta = np.int64(0)
            deltaedge = -1
            deltablossom = -1
            if not maxcardinality:
                deltatype = 1
                delta = dualvar[0]
                for v in range(n):
                    if dualvar[v] < delta:
                        delta = dualvar[v]
                if delta < 0:
                    delta = 0
            for v in range(n):
                if label[inblossom[v]] == 0 and bestedge[v] != -1:
                    k2 = bestedge[v]
                    d = dualvar[ei[k2]] + dualvar[ej[k2]] - 2 * wt[k2]
                    if deltatype == -1 or d < delta:
                        delta = d
                        deltatype = 2
                        deltaedge = k2
            for b in range(2 * n):
                if blossomparent[b] == -1 and label[b] == 1 \
                        and bestedge[b] != -1:
                    k2 = bestedge[b]
                    d = (dualvar[ei[k2]] + dualvar[ej[k2]]
                         - 2 * wt[k2]) // 2
                    if deltatype == -1 or d < delta:
                        delta = d
                        deltatype = 3
                        deltaedge = k2
            for b in range(n, 2 * n):
                if blossombase[b] >= 0 and blossomparent[b] == -1 \
                        and label[b] == 2 \
                        and (deltatype == -1 or dualvar[b] < delta):
                    delta = dualvar[b]
                    deltatype = 4
                    deltablossom = b
            if deltatype == -1:
                deltatype = 1
                delta = np.int64(0)
                dmin = dualvar[0]
                for v in range(n):
                    if dualvar[v] < dmin:
                        dmin = dualvar[v]
                if dmin > 0:
                    delta = dmin

            for v in range(n):
                lb = label[inblossom[v]]
                if lb == 1:
                    dualvar[v] -= delta
                elif lb == 2:
                    dualvar[v] += delta
            for b in range(n, 2 * n):
                if blossombase[b] >= 0 and blossomparent[b] == -1:
                    if label[b] == 1:
                        dualvar[b] += delta
                    elif label[b] == 2:
                        dualvar[b] -= delta

            if deltatype == 1:
                break
            elif deltatype == 2:
                allowedge[deltaedge] = True
                i2 = ei[deltaedge]
                if label[inblossom[i2]] == 0:
                    i2 = ej[deltaedge]
                queue[qlen] = i2
                qlen += 1
            elif deltatype == 3:
                allowedge[deltaedge] = True
                queue[qlen] = ei[deltaedge]
                qlen += 1
            else:
                # expandBlossom(deltablossom, endstage=False)
                b = deltablossom
                row = b - n
                length = childs_len[row]
                for ci in range(length):
                    s = childs[row, ci]
                    blossomparent[s] = -1
                    if s < n:
                        inblossom[s] = s
                    else:
                        cnt = _leaves(s, n, childs, childs_len, leafwork,
                                      leafout)
                        for li in range(cnt):
                            inblossom[leafout[li]] = s
                if label[b] == 2:
                    entrychild = inblossom[endpoint[labelend[b] ^ 1]]
                    jj = 0
                    for ci in range(length):
                        if childs[row, ci] == entrychild:
                            jj = ci
                            break
                    if jj & 1:
                        jj -= length
                        jstep = 1
                        endptrick = 0
                    else:
                        jstep = -1
                        endptrick = 1
                    p2 = labelend[b]
                    while jj != 0:
                        label[endpoint[p2 ^ 1]] = 0
                        label[endpoint[
                            endps[row, (jj - endptrick) % length]
                            ^ endptrick ^ 1]] = 0
                        # assignLabel(endpoint[p2 ^ 1], 2, p2)
                        w0 = endpoint[p2 ^ 1]
                        t0 = 2
                        p0 = p2
                        while True:
                            b2 = inblossom[w0]
                            label[w0] = t0
                            label[b2] = t0
                            labelend[w0] = p0
                            labelend[b2] = p0
                            bestedge[w0] = -1
                            bestedge[b2] = -1
                            if t0 == 1:
                                cnt = _leaves(b2, n, childs, childs_len,
                                              leafwork, leafout)
                                for li in range(cnt):
                                    queue[qlen] = leafout[li]
                                    qlen += 1
                                break
                            else:
                                base = blossombase[b2]
                                mp = mate[base]
                                w0 = endpoint[mp]
                                t0 = 1
                                p0 = mp ^ 1
                        allowedge[endps[row, (jj - endptrick) % length]
                                  >> 1] = True
                        jj += jstep
                        p2 = endps[row, (jj - endptrick) % length] \
                            ^ endptrick
                        allowedge[p2 >> 1] = True
                        jj += jstep
                    bv = childs[row, jj % length]
                    label[endpoint[p2 ^ 1]] = 2
                    label[bv] = 2
                    labelend[endpoint[p2 ^ 1]] = p2
                    labelend[bv] = p2
                    bestedge[bv] = -1
                    jj += jstep
                    while childs[row, jj % length] != entrychild:
                        bv = childs[row, jj % length]
                        if label[bv] == 1:
                            jj += jstep
                            continue
                        cnt = _leaves(bv, n, childs, childs_len, leafwork,
                                      leafout)
                        lv = -1
                        for li in range(cnt):
                            if label[leafout[li]] != 0:
                                lv = leafout[li]
                                break
                        if lv >= 0:
                            label[lv] = 0
                            label[endpoint[mate[blossombase[bv]]]] = 0
                            # assignLabel(lv, 2, labelend[lv])
                            w0 = lv
                            t0 = 2
                            p0 = labelend[lv]
                            while True:
                                b2 = inblossom[w0]
                                label[w0] = t0
                                label[b2] = t0
                                labelend[w0] = p0
                                labelend[b2] = p0
                                bestedge[w0] = -1
                                bestedge[b2] = -1
                                if t0 == 1:
                                    cnt = _leaves(b2, n, childs,
                                                  childs_len, leafwork,
                                                  leafout)
                                    for li in range(cnt):
                                        queue[qlen] = leafout[li]
                                        qlen += 1
                                    break
                                else:
                                    base = blossombase[b2]
                                    mp = mate[base]
                                    w0 = endpoint[mp]
                                    t0 = 1
                                    p0 = mp ^ 1
                        jj += jstep
                # recycle the blossom number
                label[b] = -1
                labelend[b] = -1
                childs_len[row] = 0
                blossombase[b] = -1
                bbe_len[row] = -1
                bestedge[b] = -1
                unused[n_unused] = b
                n_unused += 1

        if not augmented:
            break

        # end of stage: expand all S-blossoms with zero dual
        for b0 in range(n, 2 * n):
            if blossomparent[b0] == -1 and blossombase[b0] >= 0 \
                    and label[b0] == 1 and dualvar[b0] == 0:
                top = 0
                expstack[top] = b0
                top += 1
                while top > 0:
                    top -= 1
                    b = expstack[top]
                    row = b - n
                    for ci in range(childs_len[row]):
                        s = childs[row, ci]
                        blossomparent[s] = -1
                        if s < n:
                            inblossom[s] = s
                        elif dualvar[s] == 0 and label[s] == 1:
                            expstack[top] = s
                            top += 1
                        else:
                            cnt = _leaves(s, n, childs, childs_len,
                                          leafwork, leafout)
                            for li in range(cnt):
                                inblossom[leafout[li]] = s
                    label[b] = -1
                    labelend[b] = -1
                    childs_len[row] = 0
                    blossombase[b] = -1
                    bbe_len[row] = -1
                    bestedge[b] = -1
                    unused[n_unused] = b
                    n_unused += 1

    out = np.full(n, -1, np.int32)
    for v in range(n):
        if mate[v] >= 0:
            out[v] = endpoint[mate[v]]
    return out


def max_weight_matching(n, ei, ej, w, maxcardinality=True):
    """Return mate[v] (partner vertex or -1) maximizing total weight.

    With maxcardinality=True, cardinality is maximized first.  Integer
    weights only; they are doubled internally so the dual updates stay
    integral.
    """
    ei = np.ascontiguousarray(ei, np.int32)
    ej = np.ascontiguousarray(ej, np.int32)
    w = np.ascontiguousarray(w, np.int64)
    if len(ei) == 0 or n == 0:
        return np.full(n, -1, np.int32)
    if w.max() >= 2**61 or w.min() < 0:
        raise OverflowError("edge weights out of supported integer range")
    w2 = 2 * w
    # adjacency in CSR form: for vertex v, endpoint codes p such that
    # endpoint[p] is the neighbour (p = 2k+1 from ei[k], p = 2k from ej[k])
    m = len(ei)
    codes = np.empty(2 * m, np.int32)
    codes[:m] = 2 * np.arange(m, dtype=np.int32) + 1
    codes[m:] = 2 * np.arange(m, dtype=np.int32)
    owners = np.concatenate([ei, ej])
    order = np.argsort(owners, kind="stable")
    nbr_p = np.ascontiguousarray(codes[order])
    other = np.concatenate([ej, ei])
    nbr_w = np.ascontiguousarray(other[order])
    nbr_wt = np.ascontiguousarray(np.concatenate([w2, w2])[order])
    counts = np.bincount(owners, minlength=n)
    adj_ptr = np.zeros(n + 1, np.int64)
    np.cumsum(counts, out=adj_ptr[1:])
    return _core(n, ei, ej, w2, adj_ptr, nbr_w, nbr_p, nbr_wt,
                 maxcardinality)


def min_cost_perfect_matching(cost):
    """Minimum-cost perfect matching on a complete graph given a symmetric
    integer cost matrix.  Returns mate array; raises if n is odd."""
    cost = np.asarray(cost)
    n = cost.shape[0]
    if n % 2:
        raise ValueError("perfect matching needs an even number of vertices")
    iu, ju = np.triu_indices(n, 1)
    c = cost[iu, ju].astype(np.int64)
    wmax = c.max() if len(c) else 0
    mate = max_weight_matching(n, iu, ju, wmax + 1 - c, maxcardinality=True)
    if np.any(mate < 0):
        raise RuntimeError("failed to find a perfect matching")
    return mate
