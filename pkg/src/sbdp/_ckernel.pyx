# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event loops for the uniform-birth model family.

Mirror of ``_pykernel.py``; any change must be made in both files.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memmove
from libc.stdint cimport int64_t

from ._pykernel import KernelError

cnp.import_array()

cdef enum:
    HORIZON = 0
    ABSORBED = 1
    STOPPED = 2
    BREAKER = 3
    BIRTH = 0
    DEATH = 1

cdef double ENVELOPE_TOL = 1e-9


cdef struct Params:
    double c
    bint count_all
    int kind
    double d0
    double log_a
    double phi_near
    double phi_far
    double r2max
    bint incl
    double phi_min


cdef Params _unpack(double[::1] fp):
    cdef Params p
    p.c = fp[0]
    p.count_all = fp[1] != 0.0
    p.kind = <int>fp[2]
    p.d0 = fp[3]
    p.log_a = fp[4]
    p.phi_near = fp[5]
    p.phi_far = fp[6]
    p.r2max = fp[7] * fp[7]
    p.incl = fp[8] != 0.0
    p.phi_min = fp[9]
    return p


cdef class _Uniforms:
    cdef object stream
    cdef double[::1] buf
    cdef Py_ssize_t pos
    cdef Py_ssize_t size

    def __init__(self, stream):
        self.stream = stream
        b, pos = stream.export_state()
        self.buf = np.asarray(b, dtype=np.float64) if len(b) else np.empty(0)
        self.size = self.buf.shape[0]
        self.pos = pos

    cdef inline double next(self) except? -1.0:
        if self.pos >= self.size:
            self.buf = self.stream.refill()
            self.size = self.buf.shape[0]
            self.pos = 0
        self.pos += 1
        return self.buf[self.pos - 1]

    cdef void sync(self):
        # the stream already holds the current block as a list after refill
        self.stream._pos = self.pos


cdef class _Particles:
    """Growable particle store kept in insertion order."""
    cdef int64_t* ids
    cdef double* pts
    cdef char* inlam
    cdef char* in1
    cdef Py_ssize_t n
    cdef Py_ssize_t cap
    cdef int dim

    def __cinit__(self, int dim, Py_ssize_t cap):
        self.dim = dim
        self.cap = cap if cap > 16 else 16
        self.n = 0
        self.ids = <int64_t*>malloc(self.cap * sizeof(int64_t))
        self.pts = <double*>malloc(self.cap * dim * sizeof(double))
        self.inlam = <char*>malloc(self.cap)
        self.in1 = <char*>malloc(self.cap)
        if not self.ids or not self.pts or not self.inlam or not self.in1:
            raise MemoryError()

    def __dealloc__(self):
        free(self.ids)
        free(self.pts)
        free(self.inlam)
        free(self.in1)

    cdef int grow(self) except -1:
        cdef Py_ssize_t cap = self.cap * 2
        cdef int64_t* ids = <int64_t*>realloc(self.ids, cap * sizeof(int64_t))
        if not ids:
            raise MemoryError()
        self.ids = ids
        cdef double* pts = <double*>realloc(self.pts, cap * self.dim * sizeof(double))
        if not pts:
            raise MemoryError()
        self.pts = pts
        cdef char* a = <char*>realloc(self.inlam, cap)
        if not a:
            raise MemoryError()
        self.inlam = a
        cdef char* b = <char*>realloc(self.in1, cap)
        if not b:
            raise MemoryError()
        self.in1 = b
        self.cap = cap
        return 0

    cdef int append(self, int64_t pid, double* x, char inl, char i1) except -1:
        if self.n == self.cap:
            self.grow()
        cdef Py_ssize_t k
        self.ids[self.n] = pid
        for k in range(self.dim):
            self.pts[self.n * self.dim + k] = x[k]
        self.inlam[self.n] = inl
        self.in1[self.n] = i1
        self.n += 1
        return 0

    cdef void pop(self, Py_ssize_t j):
        cdef Py_ssize_t tail = self.n - j - 1
        if tail > 0:
            memmove(&self.ids[j], &self.ids[j + 1], tail * sizeof(int64_t))
            memmove(&self.pts[j * self.dim], &self.pts[(j + 1) * self.dim], tail * self.dim * sizeof(double))
            memmove(&self.inlam[j], &self.inlam[j + 1], tail)
            memmove(&self.in1[j], &self.in1[j + 1], tail)
        self.n -= 1

    cdef tuple export(self):
        ids = np.empty(self.n, dtype=np.int64)
        pts = np.empty((self.n, self.dim), dtype=np.float64)
        in1 = np.empty(self.n, dtype=np.bool_)
        cdef int64_t[::1] iv = ids
        cdef double[:, ::1] pv = pts
        cdef Py_ssize_t i, k
        for i in range(self.n):
            iv[i] = self.ids[i]
            in1[i] = self.in1[i] != 0
            for k in range(self.dim):
                pv[i, k] = self.pts[i * self.dim + k]
        return ids, pts, in1


cdef class _Log:
    cdef double* t
    cdef char* k
    cdef int64_t* ids
    cdef double* x
    cdef Py_ssize_t n
    cdef Py_ssize_t cap
    cdef int dim

    def __cinit__(self, int dim):
        self.dim = dim
        self.cap = 64
        self.n = 0
        self.t = <double*>malloc(self.cap * sizeof(double))
        self.k = <char*>malloc(self.cap)
        self.ids = <int64_t*>malloc(self.cap * sizeof(int64_t))
        self.x = <double*>malloc(self.cap * dim * sizeof(double))
        if not self.t or not self.k or not self.ids or not self.x:
            raise MemoryError()

    def __dealloc__(self):
        free(self.t)
        free(self.k)
        free(self.ids)
        free(self.x)

    cdef int push(self, double t, char kind, int64_t pid, double* x) except -1:
        cdef Py_ssize_t cap, j
        if self.n == self.cap:
            cap = self.cap * 2
            self.t = <double*>realloc(self.t, cap * sizeof(double))
            self.k = <char*>realloc(self.k, cap)
            self.ids = <int64_t*>realloc(self.ids, cap * sizeof(int64_t))
            self.x = <double*>realloc(self.x, cap * self.dim * sizeof(double))
            if not self.t or not self.k or not self.ids or not self.x:
                raise MemoryError()
            self.cap = cap
        self.t[self.n] = t
        self.k[self.n] = kind
        self.ids[self.n] = pid
        for j in range(self.dim):
            self.x[self.n * self.dim + j] = x[j]
        self.n += 1
        return 0

    cdef tuple export(self):
        times = np.empty(self.n, dtype=np.float64)
        kinds = np.empty(self.n, dtype=np.int8)
        ids = np.empty(self.n, dtype=np.int64)
        coords = np.empty((self.n, self.dim), dtype=np.float64)
        cdef double[::1] tv = times
        cdef cnp.int8_t[::1] kv = kinds
        cdef int64_t[::1] iv = ids
        cdef double[:, ::1] xv = coords
        cdef Py_ssize_t i, j
        for i in range(self.n):
            tv[i] = self.t[i]
            kv[i] = self.k[i]
            iv[i] = self.ids[i]
            for j in range(self.dim):
                xv[i, j] = self.x[i * self.dim + j]
        return times, kinds, ids, coords


cdef inline void _bounds(Params* p, Py_ssize_t n, Py_ssize_t nlam, double* bin_, double* bout):
    if p.kind == 0:
        bin_[0] = p.d0
        bout[0] = p.d0
    elif p.kind == 1:
        bin_[0] = exp(-p.log_a * <double>n)
        bout[0] = 0.0
    elif p.incl:
        bin_[0] = exp(-p.phi_min * <double>nlam)
        bout[0] = exp(-p.phi_near)
    else:
        bin_[0] = exp(-p.phi_min * <double>(nlam - 1))
        bout[0] = 1.0


cdef double _exact(Params* p, Py_ssize_t j, _Particles P, bint only1, Py_ssize_t nk):
    cdef Py_ssize_t i, k
    cdef double s, r2, z
    cdef int dim = P.dim
    if p.kind == 0:
        return p.d0
    if p.kind == 1:
        if P.inlam[j]:
            return exp(-p.log_a * <double>nk)
        return 0.0
    s = 0.0
    for i in range(P.n):
        if i == j or (only1 and not P.in1[i]):
            continue
        r2 = 0.0
        for k in range(dim):
            z = P.pts[j * dim + k] - P.pts[i * dim + k]
            r2 += z * z
        if r2 <= p.r2max:
            s += p.phi_near
        else:
            s += p.phi_far
    if p.incl:
        s += p.phi_near
    return exp(-s)


cdef inline bint _in_box(double* x, double[::1] lo, double[::1] hi, int dim):
    cdef int k
    for k in range(dim):
        if x[k] < lo[k] or x[k] > hi[k]:
            return False
    return True


def run_single(fp_, lo_, hi_, ids0, coords0, next_id_, double horizon, long long max_events,
               long long stop_count, stream):
    cdef double[::1] fp = np.ascontiguousarray(fp_, dtype=np.float64)
    cdef double[::1] lo = np.ascontiguousarray(lo_, dtype=np.float64)
    cdef double[::1] hi = np.ascontiguousarray(hi_, dtype=np.float64)
    cdef Params p = _unpack(fp)
    cdef int dim = lo.shape[0]
    cdef int64_t[::1] ids_in = np.ascontiguousarray(ids0, dtype=np.int64)
    cdef double[:, ::1] x_in = np.ascontiguousarray(np.asarray(coords0, dtype=np.float64).reshape(-1, dim))
    cdef _Uniforms U = _Uniforms(stream)
    cdef _Particles P = _Particles(dim, ids_in.shape[0] * 2 + 16)
    cdef _Log L = _Log(dim)
    cdef double* x = <double*>malloc(dim * sizeof(double))
    cdef Py_ssize_t i, j, k, n, nlam
    cdef int64_t pid, next_id = next_id_
    cdef double t = 0.0, B, R, u, w, bin_, bout, target, acc, m, wi, v, dj
    cdef long long nev = 0, nulls = 0
    cdef int status = HORIZON
    cdef char inl
    try:
        for i in range(ids_in.shape[0]):
            for k in range(dim):
                x[k] = x_in[i, k]
            P.append(ids_in[i], x, _in_box(x, lo, hi, dim), 0)
        n = P.n
        nlam = 0
        for i in range(n):
            if P.inlam[i]:
                nlam += 1
        while True:
            if stop_count >= 0 and nlam >= stop_count:
                status = STOPPED
                break
            B = p.c * <double>(n if p.count_all else nlam)
            _bounds(&p, n, nlam, &bin_, &bout)
            R = B + (<double>nlam * bin_ + <double>(n - nlam) * bout)
            if not R > 0.0:
                status = ABSORBED
                break
            u = U.next()
            t = t - log1p(-u) / R
            if t > horizon:
                status = HORIZON
                break
            w = U.next() * R
            if w < B:
                for k in range(dim):
                    x[k] = lo[k] + U.next() * (hi[k] - lo[k])
                pid = next_id
                next_id += 1
                P.append(pid, x, 1, 0)
                n += 1
                nlam += 1
                L.push(t, BIRTH, pid, x)
            else:
                target = w - B
                acc = 0.0
                j = -1
                m = 0.0
                for i in range(n):
                    wi = bin_ if P.inlam[i] else bout
                    if wi > 0.0:
                        acc += wi
                        j = i
                        m = wi
                        if target < acc:
                            break
                if j < 0:
                    raise KernelError("death proposal with no positive weight")
                if p.kind == 2:
                    v = U.next() * m
                    dj = _exact(&p, j, P, False, n)
                    if dj > m * (1.0 + ENVELOPE_TOL):
                        raise KernelError(
                            f"death rate {dj!r} of particle {P.ids[j]} exceeds its bound {m!r} at t={t!r}")
                    if not v < dj:
                        nulls += 1
                        continue
                pid = P.ids[j]
                for k in range(dim):
                    x[k] = P.pts[j * dim + k]
                inl = P.inlam[j]
                P.pop(j)
                if inl:
                    nlam -= 1
                n -= 1
                L.push(t, DEATH, pid, x)
            nev += 1
            if nev >= max_events:
                status = BREAKER
                break
    finally:
        free(x)
        U.sync()
    times, kinds, ids, coords = L.export()
    fids, fpts, _ = P.export()
    return {
        "times": times, "kinds": kinds, "ids": ids, "coords": coords,
        "status": status, "t_end": t, "next_id": int(next_id), "nulls": int(nulls),
        "final_ids": fids, "final_coords": fpts,
    }


def run_coupled(fp1_, fp2_, lo_, hi_, ids0, coords0, in1_0, next_id_, double horizon,
                long long max_events, stream):
    cdef double[::1] fp1 = np.ascontiguousarray(fp1_, dtype=np.float64)
    cdef double[::1] fp2 = np.ascontiguousarray(fp2_, dtype=np.float64)
    cdef double[::1] lo = np.ascontiguousarray(lo_, dtype=np.float64)
    cdef double[::1] hi = np.ascontiguousarray(hi_, dtype=np.float64)
    cdef Params p1 = _unpack(fp1)
    cdef Params p2 = _unpack(fp2)
    cdef int dim = lo.shape[0]
    cdef int64_t[::1] ids_in = np.ascontiguousarray(ids0, dtype=np.int64)
    cdef double[:, ::1] x_in = np.ascontiguousarray(np.asarray(coords0, dtype=np.float64).reshape(-1, dim))
    in1_arr = np.ascontiguousarray(in1_0, dtype=np.bool_)
    cdef _Uniforms U = _Uniforms(stream)
    cdef _Particles P = _Particles(dim, ids_in.shape[0] * 2 + 16)
    cdef _Log L1 = _Log(dim)
    cdef _Log L2 = _Log(dim)
    cdef double* x = <double*>malloc(dim * sizeof(double))
    cdef Py_ssize_t i, j, k, n1, n1lam, n2, n2lam
    cdef int64_t pid, next_id = next_id_
    cdef double t = 0.0, B1, B2, R, u, w, b1in, b1out, b2in, b2out, target, acc, m, wi, v, d1, d2
    cdef long long nev = 0, nulls = 0
    cdef int status = HORIZON
    cdef bint acc1, k1, k2
    try:
        for i in range(ids_in.shape[0]):
            for k in range(dim):
                x[k] = x_in[i, k]
            P.append(ids_in[i], x, _in_box(x, lo, hi, dim), 1 if in1_arr[i] else 0)
        n2 = P.n
        n2lam = 0
        n1 = 0
        n1lam = 0
        for i in range(n2):
            if P.inlam[i]:
                n2lam += 1
            if P.in1[i]:
                n1 += 1
                if P.inlam[i]:
                    n1lam += 1
        while True:
            B1 = p1.c * <double>(n1 if p1.count_all else n1lam)
            B2 = p2.c * <double>(n2 if p2.count_all else n2lam)
            if B1 > B2:
                raise KernelError(f"birth monotonicity violated at t={t!r}: {B1!r} > {B2!r}")
            _bounds(&p1, n1, n1lam, &b1in, &b1out)
            _bounds(&p2, n2, n2lam, &b2in, &b2out)
            R = B2 + (<double>n1lam * b1in + <double>(n1 - n1lam) * b1out
                      + <double>(n2lam - n1lam) * b2in + <double>((n2 - n2lam) - (n1 - n1lam)) * b2out)
            if not R > 0.0:
                status = ABSORBED
                break
            u = U.next()
            t = t - log1p(-u) / R
            if t > horizon:
                status = HORIZON
                break
            w = U.next() * R
            if w < B2:
                for k in range(dim):
                    x[k] = lo[k] + U.next() * (hi[k] - lo[k])
                pid = next_id
                next_id += 1
                acc1 = w < B1
                P.append(pid, x, 1, 1 if acc1 else 0)
                n2 += 1
                n2lam += 1
                L2.push(t, BIRTH, pid, x)
                if acc1:
                    n1 += 1
                    n1lam += 1
                    L1.push(t, BIRTH, pid, x)
            else:
                target = w - B2
                acc = 0.0
                j = -1
                m = 0.0
                for i in range(n2):
                    if P.in1[i]:
                        wi = b1in if P.inlam[i] else b1out
                    else:
                        wi = b2in if P.inlam[i] else b2out
                    if wi > 0.0:
                        acc += wi
                        j = i
                        m = wi
                        if target < acc:
                            break
                if j < 0:
                    raise KernelError("death proposal with no positive weight")
                v = U.next() * m
                d2 = _exact(&p2, j, P, False, n2)
                if P.in1[j]:
                    d1 = _exact(&p1, j, P, True, n1)
                    if d1 > m * (1.0 + ENVELOPE_TOL):
                        raise KernelError(
                            f"death rate {d1!r} of particle {P.ids[j]} exceeds its bound {m!r} at t={t!r}")
                    if d2 > d1 * (1.0 + ENVELOPE_TOL):
                        raise KernelError(
                            f"death monotonicity violated for particle {P.ids[j]} at t={t!r}: "
                            f"d1={d1!r} < d2={d2!r} (n1={n1}, n2={n2})")
                    if d2 > d1:
                        d2 = d1
                    k1 = v < d1
                    k2 = v < d2
                    if k2 and not k1:
                        raise KernelError(f"inclusion violated by particle {P.ids[j]} at t={t!r}")
                else:
                    if d2 > m * (1.0 + ENVELOPE_TOL):
                        raise KernelError(
                            f"death rate {d2!r} of particle {P.ids[j]} exceeds its bound {m!r} at t={t!r}")
                    k1 = False
                    k2 = v < d2
                if not (k1 or k2):
                    nulls += 1
                    continue
                pid = P.ids[j]
                for k in range(dim):
                    x[k] = P.pts[j * dim + k]
                if k1:
                    P.in1[j] = 0
                    n1 -= 1
                    if P.inlam[j]:
                        n1lam -= 1
                    L1.push(t, DEATH, pid, x)
                if k2:
                    if P.inlam[j]:
                        n2lam -= 1
                    P.pop(j)
                    n2 -= 1
                    L2.push(t, DEATH, pid, x)
            nev += 1
            if nev >= max_events:
                status = BREAKER
                break
    finally:
        free(x)
        U.sync()
    fids, fpts, fin1 = P.export()
    return {
        "log1": L1.export(), "log2": L2.export(), "status": status, "t_end": t,
        "next_id": int(next_id), "nulls": int(nulls),
        "final_ids": fids, "final_coords": fpts, "final_in1": fin1,
    }
