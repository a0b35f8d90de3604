"""Pure-Python reference implementation of the sampling kernels.

Signatures and floating-point operation order mirror ``_ckernels.pyx``
exactly, so both backends produce bit-identical chains from the same
random arrays. Arrays passed in are modified in place.
"""
from math import exp, isnan


def micro_metropolis(spins, K, beta, offs, wts, sites, u, rec_first, thin,
                     out_mag, out_en, snaps, take_snaps, state):
    """Single-spin-flip Metropolis on the periodic ring.

    ``state`` holds ``[E_short, E_long, sum(spins)]`` and is kept current.
    Returns ``(accepted, recorded)``.
    """
    N = spins.shape[0]
    n = sites.shape[0]
    nw = offs.shape[0]
    accepted = 0
    nrec = 0
    for i in range(n):
        x = sites[i]
        s = spins[x]
        nn = spins[(x - 1 + N) % N] + spins[(x + 1) % N]
        d_short = -2.0 * K * s * nn
        field = 0.0
        for j in range(nw):
            field += wts[j] * spins[(x + offs[j] + N) % N]
        d_long = 2.0 * s * field
        d_e = d_short + d_long
        if d_e <= 0.0 or u[i] < exp(-beta * d_e):
            spins[x] = -s
            state[0] += d_short
            state[1] += d_long
            state[2] -= 2.0 * s
            accepted += 1
        if i >= rec_first and (i - rec_first) % thin == 0:
            out_mag[nrec] = state[2]
            out_en[nrec] = state[0] + state[1]
            if take_snaps:
                for y in range(N):
                    snaps[nrec, y] = spins[y]
            nrec += 1
    return accepted, nrec


def _cg_delta(n, M, q, k, nnew, u1, v3, e1, dv3, jprof, nj, err):
    """Change of (H, energy estimator) when cell ``k`` moves to up-count ``nnew``."""
    nold = n[k]
    q1 = q + 1
    a = u1[nnew]
    b = u1[nold]
    if isnan(a) or isnan(b):
        err[0] = 1
        err[1] = nnew if isnan(a) else nold
        err[2] = -1
        err[3] = -1
        return 0.0, 0.0
    dh = a - b
    de = e1[nnew] - e1[nold]
    c0 = k if k % 2 == 0 else (k - 1 + M) % M
    ncent = 1 if (k % 2 == 0 or M == 2) else 2
    for t in range(ncent):
        c = c0 if t == 0 else (k + 1) % M
        lft = (c - 1 + M) % M
        rgt = (c + 1) % M
        ol = n[lft]
        om = n[c]
        orr = n[rgt]
        nl = nnew if lft == k else ol
        nm = nnew if c == k else om
        nr = nnew if rgt == k else orr
        inew = (nl * q1 + nm) * q1 + nr
        iold = (ol * q1 + om) * q1 + orr
        a = v3[inew]
        b = v3[iold]
        if isnan(a) or isnan(b):
            err[0] = 2
            if isnan(a):
                err[1] = nl
                err[2] = nm
                err[3] = nr
            else:
                err[1] = ol
                err[2] = om
                err[3] = orr
            return 0.0, 0.0
        dh += a - b
        de += dv3[inew] - dv3[iold]
    if nj > 0:
        eo = 2 * nold - q
        en = 2 * nnew - q
        field = 0.0
        for d in range(1, nj):
            field += jprof[d] * (2 * n[(k + d) % M] - q)
            if 2 * d != M:
                field += jprof[d] * (2 * n[(k - d + M) % M] - q)
        dl = -(en - eo) * field - 0.5 * jprof[0] * (en * en - eo * eo)
        dh += dl
        de += dl
    return dh, de


def cg_metropolis(n, q, beta, logprior, u1, v3, e1, dv3, jprof, move_kind,
                  cells, dirs, u, rec_first, thin, out_mag, out_h, out_est,
                  snaps, take_snaps, state, err):
    """Metropolis chain on up-counts ``n`` (``eta = 2n - q``) targeting
    ``exp(-beta H0) * prior``.

    ``move_kind`` 0 proposes ``eta_k -> eta_k +- 2``; 1 exchanges two units
    between cells ``k`` and ``k+1``. ``state`` is ``[H0, estimator, sum eta]``.
    A NaN table entry sets ``err`` and stops early. Returns
    ``(accepted, recorded, steps_done)``.
    """
    M = n.shape[0]
    nsteps = cells.shape[0]
    nj = jprof.shape[0]
    accepted = 0
    nrec = 0
    for i in range(nsteps):
        k = cells[i]
        d = 2 * dirs[i] - 1
        nold = n[k]
        nnew = nold + d
        if 0 <= nnew <= q:
            if move_kind == 0:
                dh, de = _cg_delta(n, M, q, k, nnew, u1, v3, e1, dv3, jprof, nj, err)
                if err[0] != 0:
                    return accepted, nrec, i
                lr = (logprior[nnew] - logprior[nold]) - beta * dh
                if lr >= 0.0 or u[i] < exp(lr):
                    n[k] = nnew
                    state[0] += dh
                    state[1] += de
                    state[2] += 2.0 * d
                    accepted += 1
            else:
                k2 = (k + 1) % M
                nold2 = n[k2]
                nnew2 = nold2 - d
                if 0 <= nnew2 <= q:
                    dh1, de1 = _cg_delta(n, M, q, k, nnew, u1, v3, e1, dv3, jprof, nj, err)
                    if err[0] != 0:
                        return accepted, nrec, i
                    n[k] = nnew
                    dh2, de2 = _cg_delta(n, M, q, k2, nnew2, u1, v3, e1, dv3, jprof, nj, err)
                    if err[0] != 0:
                        n[k] = nold
                        return accepted, nrec, i
                    dh = dh1 + dh2
                    lr = ((logprior[nnew] - logprior[nold])
                          + (logprior[nnew2] - logprior[nold2])) - beta * dh
                    if lr >= 0.0 or u[i] < exp(lr):
                        n[k2] = nnew2
                        state[0] += dh
                        state[1] += de1 + de2
                        accepted += 1
                    else:
                        n[k] = nold
        if i >= rec_first and (i - rec_first) % thin == 0:
            out_mag[nrec] = state[2]
            out_h[nrec] = state[0]
            out_est[nrec] = state[1]
            if take_snaps:
                for y in range(M):
                    snaps[nrec, y] = n[y]
            nrec += 1
    return accepted, nrec, nsteps


def cell_metropolis(spins, K, beta, sites, u, rec_first, thin, rec_offset,
                    total_rec, acc, state):
    """Free-boundary single-cell Metropolis; histograms boundary correlations by
    up-count into ``acc[6, nbatch, q+1]``.

    ``state`` is ``[H_cell, sum(spins)]``. Accumulator rows: count,
    ``(s_1 + s_q)/2``, ``s_1 s_q``, ``H``, and the last two times ``H``.
    """
    q = spins.shape[0]
    n = sites.shape[0]
    nbatch = acc.shape[1]
    accepted = 0
    nrec = 0
    for i in range(n):
        x = sites[i]
        s = spins[x]
        nb = 0
        if x > 0:
            nb += spins[x - 1]
        if x < q - 1:
            nb += spins[x + 1]
        d_e = -2.0 * K * s * nb
        if d_e <= 0.0 or u[i] < exp(-beta * d_e):
            spins[x] = -s
            state[0] += d_e
            state[1] -= 2.0 * s
            accepted += 1
        if i >= rec_first and (i - rec_first) % thin == 0:
            b = ((rec_offset + nrec) * nbatch) // total_rec
            m = (int(state[1]) + q) // 2
            s1 = 0.5 * (spins[0] + spins[q - 1])
            s2 = 1.0 * spins[0] * spins[q - 1]
            h = state[0]
            acc[0, b, m] += 1.0
            acc[1, b, m] += s1
            acc[2, b, m] += s2
            acc[3, b, m] += h
            acc[4, b, m] += s1 * h
            acc[5, b, m] += s2 * h
            nrec += 1
    return accepted, nrec


def _local_bonds(spins, q, i):
    e = 0
    if i > 0:
        e += spins[i] * spins[i - 1]
    if i < q - 1:
        e += spins[i] * spins[i + 1]
    return e


def kawasaki_cell(spins, K, beta, gl, gr, ua, ub, u, rec_first, thin, snaps):
    """Sum-preserving exchange chain on one cell.

    Target ``exp(-beta H_cell + gl[s_1] + gr[s_q])`` with ``g`` indexed by
    ``(s+1)/2``. Each step swaps a uniformly chosen ``+`` site with a
    uniformly chosen ``-`` site. Returns ``(accepted, recorded)``.
    """
    q = spins.shape[0]
    n = u.shape[0]
    npl = 0
    for y in range(q):
        if spins[y] > 0:
            npl += 1
    nmi = q - npl
    accepted = 0
    nrec = 0
    for i in range(n):
        if npl > 0 and nmi > 0:
            ta = int(ua[i] * npl)
            tb = int(ub[i] * nmi)
            a = -1
            b = -1
            for y in range(q):
                if spins[y] > 0:
                    if ta == 0:
                        a = y
                    ta -= 1
                else:
                    if tb == 0:
                        b = y
                    tb -= 1
            before = _local_bonds(spins, q, a) + _local_bonds(spins, q, b)
            f0 = gl[(spins[0] + 1) // 2] + gr[(spins[q - 1] + 1) // 2]
            spins[a] = -1
            spins[b] = 1
            after = _local_bonds(spins, q, a) + _local_bonds(spins, q, b)
            f1 = gl[(spins[0] + 1) // 2] + gr[(spins[q - 1] + 1) // 2]
            lr = -beta * K * (after - before) + (f1 - f0)
            if lr >= 0.0 or u[i] < exp(lr):
                accepted += 1
            else:
                spins[a] = 1
                spins[b] = -1
        if i >= rec_first and (i - rec_first) % thin == 0:
            for y in range(q):
                snaps[nrec, y] = spins[y]
            nrec += 1
    return accepted, nrec
