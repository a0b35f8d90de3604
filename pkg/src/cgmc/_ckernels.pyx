# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sampling kernels; see ``_pykernels.py`` for the reference semantics.

All modulo operations are taken on nonnegative operands, so C division
semantics are safe.
"""
from libc.math cimport exp, isnan


def micro_metropolis(signed char[::1] spins, double K, double beta,
                     const long long[::1] offs, const double[::1] wts,
                     const long long[::1] sites, const double[::1] u,
                     long long rec_first, long long thin,
                     double[::1] out_mag, double[::1] out_en,
                     signed char[:, ::1] snaps, bint take_snaps, double[::1] state):
    cdef Py_ssize_t N = spins.shape[0]
    cdef Py_ssize_t n = sites.shape[0]
    cdef Py_ssize_t nw = offs.shape[0]
    cdef Py_ssize_t i, j, y, x
    cdef long long accepted = 0, nrec = 0
    cdef int s, nn
    cdef double d_short, d_long, d_e, field
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


cdef inline int _cg_delta(long long[::1] n, Py_ssize_t M, long long q, Py_ssize_t k,
                          long long nnew, const double[::1] u1, const double[::1] v3,
                          const double[::1] e1, const double[::1] dv3,
                          const double[::1] jprof, Py_ssize_t nj, long long[::1] err,
                          double* dh_out, double* de_out) noexcept:
    cdef long long nold = n[k]
    cdef long long q1 = q + 1
    cdef double a = u1[nnew]
    cdef double b = u1[nold]
    cdef double dh, de, field, dl
    cdef Py_ssize_t c0, c, lft, rgt, t, d, ncent
    cdef long long ol, om, orr, nl, nm, nr, inew, iold, eo, en
    if isnan(a) or isnan(b):
        err[0] = 1
        err[1] = nnew if isnan(a) else nold
        err[2] = -1
        err[3] = -1
        return 1
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
            return 1
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
    dh_out[0] = dh
    de_out[0] = de
    return 0


def cg_metropolis(long long[::1] n, long long q, double beta,
                  const double[::1] logprior, const double[::1] u1, const double[::1] v3,
                  const double[::1] e1, const double[::1] dv3, const double[::1] jprof,
                  int move_kind, const long long[::1] cells, const long long[::1] dirs,
                  const double[::1] u, long long rec_first, long long thin,
                  double[::1] out_mag, double[::1] out_h, double[::1] out_est,
                  long long[:, ::1] snaps, bint take_snaps, double[::1] state,
                  long long[::1] err):
    cdef Py_ssize_t M = n.shape[0]
    cdef Py_ssize_t nsteps = cells.shape[0]
    cdef Py_ssize_t nj = jprof.shape[0]
    cdef Py_ssize_t i, k, k2, y
    cdef long long accepted = 0, nrec = 0, d, nold, nnew, nold2, nnew2
    cdef double dh = 0.0, de = 0.0, dh1 = 0.0, de1 = 0.0, dh2 = 0.0, de2 = 0.0, lr
    for i in range(nsteps):
        k = cells[i]
        d = 2 * dirs[i] - 1
        nold = n[k]
        nnew = nold + d
        if 0 <= nnew <= q:
            if move_kind == 0:
                if _cg_delta(n, M, q, k, nnew, u1, v3, e1, dv3, jprof, nj, err, &dh, &de):
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
                    if _cg_delta(n, M, q, k, nnew, u1, v3, e1, dv3, jprof, nj, err, &dh1, &de1):
                        return accepted, nrec, i
                    n[k] = nnew
                    if _cg_delta(n, M, q, k2, nnew2, u1, v3, e1, dv3, jprof, nj, err, &dh2, &de2):
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


def cell_metropolis(signed char[::1] spins, double K, double beta,
                    const long long[::1] sites, const double[::1] u,
                    long long rec_first, long long thin, long long rec_offset,
                    long long total_rec, double[:, :, ::1] acc, double[::1] state):
    cdef Py_ssize_t q = spins.shape[0]
    cdef Py_ssize_t n = sites.shape[0]
    cdef long long nbatch = acc.shape[1]
    cdef Py_ssize_t i, x, b, m
    cdef long long accepted = 0, nrec = 0
    cdef int s, nb
    cdef double d_e, s1, s2, h
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
            m = (<long long> state[1] + q) // 2
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


cdef inline int _local_bonds(signed char[::1] spins, Py_ssize_t q, Py_ssize_t i) noexcept:
    cdef int e = 0
    if i > 0:
        e += spins[i] * spins[i - 1]
    if i < q - 1:
        e += spins[i] * spins[i + 1]
    return e


def kawasaki_cell(signed char[::1] spins, double K, double beta,
                  const double[::1] gl, const double[::1] gr,
                  const double[::1] ua, const double[::1] ub, const double[::1] u,
                  long long rec_first, long long thin, signed char[:, ::1] snaps):
    cdef Py_ssize_t q = spins.shape[0]
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t i, y, a, b
    cdef long long npl = 0, nmi, ta, tb, accepted = 0, nrec = 0
    cdef int before, after
    cdef double f0, f1, lr
    for y in range(q):
        if spins[y] > 0:
            npl += 1
    nmi = q - npl
    for i in range(n):
        if npl > 0 and nmi > 0:
            ta = <long long> (ua[i] * npl)
            tb = <long long> (ub[i] * nmi)
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
