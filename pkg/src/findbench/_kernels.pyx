# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in ``findbench._kernels_py``.

Floating-point operations are written in the same order as the numpy
reference so both backends agree to the last bit on one platform.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport free, malloc
from libc.string cimport memcmp, memcpy

from findbench.strings import OP_KINDS

cnp.import_array()

cdef enum:
    MAXLEN = 256

# op codes follow OP_KINDS order
cdef int K_CAPITALIZE = OP_KINDS.index("capitalize")
cdef int K_CONCATENATE = OP_KINDS.index("concatenate")
cdef int K_DROP_FIRST = OP_KINDS.index("drop_first")
cdef int K_DROP_LAST = OP_KINDS.index("drop_last")
cdef int K_DUPLICATE_LAST = OP_KINDS.index("duplicate_last")
cdef int K_LOWERCASE = OP_KINDS.index("lowercase")
cdef int K_PREPEND = OP_KINDS.index("prepend")
cdef int K_REMOVE_DUPLICATES = OP_KINDS.index("remove_duplicates")
cdef int K_REMOVE_VOWELS = OP_KINDS.index("remove_vowels")
cdef int K_REPLACE = OP_KINDS.index("replace")
cdef int K_REVERSE = OP_KINDS.index("reverse")
cdef int K_ROTATE_LEFT = OP_KINDS.index("rotate_left")
cdef int K_SHIFT_FIRST = OP_KINDS.index("shift_first")
cdef int K_SHIFT_LAST = OP_KINDS.index("shift_last")
cdef int K_SWAP_HALVES = OP_KINDS.index("swap_halves")


cdef inline Py_ssize_t _lower_bound(const double[::1] xs, double t, bint strict) noexcept nogil:
    # first index with xs[i] > t (strict) or xs[i] >= t
    cdef Py_ssize_t lo = 0, hi = xs.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if (xs[mid] <= t) if strict else (xs[mid] < t):
            lo = mid + 1
        else:
            hi = mid
    return lo


def mlp_loss_grad(const double[::1] xs, const double[::1] ys, const double[::1] w1,
                  const double[::1] b1, const double[::1] w2, double c):
    cdef Py_ssize_t n = xs.shape[0], h = w1.shape[0], i, j
    cdef cnp.int64_t[::1] lo = np.zeros(h, dtype=np.int64)
    cdef cnp.int64_t[::1] hi = np.zeros(h, dtype=np.int64)
    cdef double[::1] dslope = np.zeros(n + 1)
    cdef double[::1] dicpt = np.zeros(n + 1)
    cdef double[::1] E = np.zeros(n + 1)
    cdef double[::1] EX = np.zeros(n + 1)
    gw1_a = np.empty(h)
    gb1_a = np.empty(h)
    gw2_a = np.empty(h)
    cdef double[::1] gw1 = gw1_a, gb1 = gb1_a, gw2 = gw2_a
    cdef double w, b, slope, icpt, r, loss, S, SX, e

    with nogil:
        for j in range(h):
            w = w1[j]
            b = b1[j]
            if w > 0:
                lo[j] = _lower_bound(xs, -b / w, True)
                hi[j] = n
            elif w < 0:
                hi[j] = _lower_bound(xs, -b / w, False)
            elif b > 0:
                hi[j] = n
        for j in range(h):
            dslope[lo[j]] += w2[j] * w1[j]
        for j in range(h):
            dslope[hi[j]] += -(w2[j] * w1[j])
        for j in range(h):
            dicpt[lo[j]] += w2[j] * b1[j]
        for j in range(h):
            dicpt[hi[j]] += -(w2[j] * b1[j])
        slope = 0.0
        icpt = 0.0
        loss = 0.0
        for i in range(n):
            if i == 0:
                slope = dslope[0]
                icpt = dicpt[0]
            else:
                slope = slope + dslope[i]
                icpt = icpt + dicpt[i]
            r = slope * xs[i] + icpt + c - ys[i]
            if i == 0:
                loss = r * r
            else:
                loss = loss + r * r
            e = 2.0 * r / n
            if i == 0:
                E[1] = e
                EX[1] = e * xs[i]
            else:
                E[i + 1] = E[i] + e
                EX[i + 1] = EX[i] + e * xs[i]
        loss = loss / n
        for j in range(h):
            S = E[hi[j]] - E[lo[j]]
            SX = EX[hi[j]] - EX[lo[j]]
            gw2[j] = w1[j] * SX + b1[j] * S
            gw1[j] = w2[j] * SX
            gb1[j] = w2[j] * S
    return loss, gw1_a, gb1_a, gw2_a, E[n]


# ---------------------------------------------------------------------------
# string ops on byte buffers

cdef struct COp:
    int code
    int k
    int alen
    int blen
    char a[8]
    char b[8]


cdef inline char _shift(char ch) noexcept nogil:
    if ch >= 97 and ch <= 122:
        return <char>((ch - 97 + 1) % 26 + 97)
    if ch >= 65 and ch <= 90:
        return <char>((ch - 65 + 1) % 26 + 65)
    return ch


cdef inline bint _vowel(char ch) noexcept nogil:
    return (ch == 97 or ch == 101 or ch == 105 or ch == 111 or ch == 117 or
            ch == 65 or ch == 69 or ch == 73 or ch == 79 or ch == 85)


cdef int _apply(const COp* op, const char* s, int n, char* out) noexcept nogil:
    """Apply one op; returns the output length or -1 on buffer overflow."""
    cdef int code = op.code, i, m = 0, r, hlen
    cdef bint seen[256]
    if code == K_CAPITALIZE:
        for i in range(n):
            out[i] = s[i] - 32 if (s[i] >= 97 and s[i] <= 122) else s[i]
        return n
    if code == K_LOWERCASE:
        for i in range(n):
            out[i] = s[i] + 32 if (s[i] >= 65 and s[i] <= 90) else s[i]
        return n
    if code == K_CONCATENATE:
        if n + op.alen > MAXLEN:
            return -1
        memcpy(out, s, n)
        memcpy(out + n, op.a, op.alen)
        return n + op.alen
    if code == K_PREPEND:
        if n + op.alen > MAXLEN:
            return -1
        memcpy(out, op.a, op.alen)
        memcpy(out + op.alen, s, n)
        return n + op.alen
    if code == K_DROP_FIRST:
        if n == 0:
            return 0
        memcpy(out, s + 1, n - 1)
        return n - 1
    if code == K_DROP_LAST:
        if n == 0:
            return 0
        memcpy(out, s, n - 1)
        return n - 1
    if code == K_DUPLICATE_LAST:
        if n == 0:
            return 0
        if n + 1 > MAXLEN:
            return -1
        memcpy(out, s, n)
        out[n] = s[n - 1]
        return n + 1
    if code == K_REMOVE_DUPLICATES:
        for i in range(256):
            seen[i] = False
        for i in range(n):
            if not seen[<unsigned char>s[i]]:
                seen[<unsigned char>s[i]] = True
                out[m] = s[i]
                m += 1
        return m
    if code == K_REMOVE_VOWELS:
        for i in range(n):
            if not _vowel(s[i]):
                out[m] = s[i]
                m += 1
        return m
    if code == K_REPLACE:
        i = 0
        while i < n:
            if op.alen > 0 and i + op.alen <= n and memcmp(s + i, op.a, op.alen) == 0:
                if m + op.blen > MAXLEN:
                    return -1
                memcpy(out + m, op.b, op.blen)
                m += op.blen
                i += op.alen
            else:
                if m + 1 > MAXLEN:
                    return -1
                out[m] = s[i]
                m += 1
                i += 1
        return m
    if code == K_REVERSE:
        for i in range(n):
            out[i] = s[n - 1 - i]
        return n
    if code == K_ROTATE_LEFT:
        if n == 0:
            return 0
        r = op.k % n
        memcpy(out, s + r, n - r)
        memcpy(out + n - r, s, r)
        return n
    if code == K_SHIFT_FIRST:
        memcpy(out, s, n)
        if n > 0:
            out[0] = _shift(s[0])
        return n
    if code == K_SHIFT_LAST:
        memcpy(out, s, n)
        if n > 0:
            out[n - 1] = _shift(s[n - 1])
        return n
    if code == K_SWAP_HALVES:
        hlen = n // 2
        memcpy(out, s + hlen, n - hlen)
        memcpy(out + n - hlen, s, hlen)
        return n
    return -1


cdef int _encode(op, COp* dst) except -1:
    cdef bytes ab, bb
    dst.code = OP_KINDS.index(op.kind)
    dst.k = 0
    dst.alen = 0
    dst.blen = 0
    if op.kind == "rotate_left":
        dst.k = int(op.args[0])
    elif op.args:
        ab = op.args[0].encode("ascii")
        if len(ab) > 8:
            raise ValueError("op argument too long for the compiled kernel")
        dst.alen = len(ab)
        memcpy(dst.a, <char*>ab, dst.alen)
        if len(op.args) > 1:
            bb = op.args[1].encode("ascii")
            if len(bb) > 8:
                raise ValueError("op argument too long for the compiled kernel")
            dst.blen = len(bb)
            memcpy(dst.b, <char*>bb, dst.blen)
    return 0


cdef class _Encoded:
    cdef COp* ops
    cdef int n

    def __cinit__(self, list ops):
        cdef int i
        self.n = len(ops)
        self.ops = <COp*>malloc(max(self.n, 1) * sizeof(COp))
        if self.ops == NULL:
            raise MemoryError()
        for i, op in enumerate(ops):
            _encode(op, &self.ops[i])

    def __dealloc__(self):
        free(self.ops)


cdef _bufs(list strs, char* buf, int* lens):
    cdef bytes bs
    cdef int i
    for i, s in enumerate(strs):
        bs = s.encode("ascii")
        if len(bs) > MAXLEN:
            raise ValueError("string too long for the compiled kernel")
        memcpy(buf + i * MAXLEN, <char*>bs, len(bs))
        lens[i] = len(bs)


def consistent_pairs(list ops, list inputs, list outputs):
    cdef _Encoded enc = _Encoded(ops)
    cdef int nex = len(inputs), nop = enc.n, i, j, t, ml, gl
    cdef char* xin = <char*>malloc(max(nex, 1) * MAXLEN)
    cdef char* yout = <char*>malloc(max(nex, 1) * MAXLEN)
    cdef char* mids = <char*>malloc(max(nex, 1) * MAXLEN)
    cdef int* xl = <int*>malloc(max(nex, 1) * sizeof(int))
    cdef int* yl = <int*>malloc(max(nex, 1) * sizeof(int))
    cdef int* mlens = <int*>malloc(max(nex, 1) * sizeof(int))
    cdef char tmp[MAXLEN]
    cdef bint ok
    res = []
    try:
        _bufs(inputs, xin, xl)
        _bufs(outputs, yout, yl)
        for i in range(nop):
            ok = True
            for t in range(nex):
                ml = _apply(&enc.ops[i], xin + t * MAXLEN, xl[t], mids + t * MAXLEN)
                if ml < 0:
                    ok = False
                    break
                mlens[t] = ml
            if not ok:
                continue
            for j in range(nop):
                ok = True
                for t in range(nex):
                    gl = _apply(&enc.ops[j], mids + t * MAXLEN, mlens[t], tmp)
                    if gl != yl[t] or memcmp(tmp, yout + t * MAXLEN, gl) != 0:
                        ok = False
                        break
                if ok:
                    res.append((i, j))
    finally:
        free(xin)
        free(yout)
        free(mids)
        free(xl)
        free(yl)
        free(mlens)
    return res


def consistent_singles(list ops, list inputs, list outputs):
    cdef _Encoded enc = _Encoded(ops)
    cdef int nex = len(inputs), nop = enc.n, i, t, gl
    cdef char* xin = <char*>malloc(max(nex, 1) * MAXLEN)
    cdef char* yout = <char*>malloc(max(nex, 1) * MAXLEN)
    cdef int* xl = <int*>malloc(max(nex, 1) * sizeof(int))
    cdef int* yl = <int*>malloc(max(nex, 1) * sizeof(int))
    cdef char tmp[MAXLEN]
    cdef bint ok
    res = []
    try:
        _bufs(inputs, xin, xl)
        _bufs(outputs, yout, yl)
        for i in range(nop):
            ok = True
            for t in range(nex):
                gl = _apply(&enc.ops[i], xin + t * MAXLEN, xl[t], tmp)
                if gl != yl[t] or memcmp(tmp, yout + t * MAXLEN, gl) != 0:
                    ok = False
                    break
            if ok:
                res.append(i)
    finally:
        free(xin)
        free(yout)
        free(xl)
        free(yl)
    return res


def apply_batch(list ops, str s):
    cdef _Encoded enc = _Encoded(ops)
    cdef char src[MAXLEN]
    cdef char tmp[MAXLEN]
    cdef bytes bs = s.encode("ascii")
    cdef int n = len(bs), i, m
    if n > MAXLEN:
        raise ValueError("string too long for the compiled kernel")
    memcpy(src, <char*>bs, n)
    res = []
    for i in range(enc.n):
        m = _apply(&enc.ops[i], src, n, tmp)
        if m < 0:
            raise ValueError("output too long for the compiled kernel")
        res.append(tmp[:m].decode("ascii"))
    return res
