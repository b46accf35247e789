# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics mirror ``_pykernels`` exactly."""
import itertools

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY, isfinite
from libc.stdlib cimport malloc, realloc, free

cnp.import_array()

cdef double TIE_TOL = 1e-9
cdef double DEGENERATE_TOL = 1e-6


def obstacle_distance(points, sph_c, sph_r, box_lo, box_hi, double d_bar):
    cdef double[:, ::1] P = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    cdef Py_ssize_t m = P.shape[0], n = P.shape[1]
    cdef double[:, ::1] SC = np.ascontiguousarray(sph_c, dtype=np.float64).reshape(-1, n)
    cdef double[::1] SR = np.ascontiguousarray(sph_r, dtype=np.float64).reshape(-1)
    cdef double[:, ::1] BL = np.ascontiguousarray(box_lo, dtype=np.float64).reshape(-1, n)
    cdef double[:, ::1] BH = np.ascontiguousarray(box_hi, dtype=np.float64).reshape(-1, n)
    cdef Py_ssize_t ns = SR.shape[0], nb = BL.shape[0], nobs = ns + nb
    dist_out = np.empty(m)
    grad_out = np.zeros((m, n))
    deg_out = np.zeros(m, dtype=np.uint8)
    cdef double[::1] D = dist_out
    cdef double[:, ::1] G = grad_out
    cdef unsigned char[::1] DG = deg_out
    cdef double[::1] dtmp = np.empty(nobs)
    cdef double[:, ::1] vtmp = np.empty((nobs, n))
    cdef Py_ssize_t i, j, k
    cdef double dmin, s, nrm, a, gn
    for i in range(m):
        if nobs == 0:
            D[i] = d_bar
            DG[i] = 1
            continue
        for j in range(ns):
            s = 0.0
            for k in range(n):
                a = P[i, k] - SC[j, k]
                vtmp[j, k] = a
                s += a * a
            nrm = sqrt(s)
            dtmp[j] = nrm - SR[j] if nrm - SR[j] > 0.0 else 0.0
            for k in range(n):
                vtmp[j, k] = vtmp[j, k] / nrm if nrm > 0.0 else 0.0
        for j in range(nb):
            s = 0.0
            for k in range(n):
                if BL[j, k] - P[i, k] > 0.0:
                    a = -(BL[j, k] - P[i, k])
                elif P[i, k] - BH[j, k] > 0.0:
                    a = P[i, k] - BH[j, k]
                else:
                    a = 0.0
                vtmp[ns + j, k] = a
                s += a * a
            nrm = sqrt(s)
            dtmp[ns + j] = nrm
            for k in range(n):
                vtmp[ns + j, k] = vtmp[ns + j, k] / nrm if nrm > 0.0 else 0.0
        dmin = dtmp[0]
        for j in range(1, nobs):
            if dtmp[j] < dmin:
                dmin = dtmp[j]
        for j in range(nobs):
            if dtmp[j] <= dmin + TIE_TOL:
                for k in range(n):
                    G[i, k] += vtmp[j, k]
        s = 0.0
        for k in range(n):
            s += G[i, k] * G[i, k]
        gn = sqrt(s)
        if gn < DEGENERATE_TOL or dmin <= 0.0 or dmin >= d_bar:
            DG[i] = 1
            for k in range(n):
                G[i, k] = 0.0
        else:
            for k in range(n):
                G[i, k] = G[i, k] / gn
        D[i] = dmin if dmin < d_bar else d_bar
    return dist_out, grad_out, deg_out.astype(bool)


cdef void _edt_row(double[::1] f, double[::1] out, long[::1] v, double[::1] z) nogil:
    cdef Py_ssize_t n = f.shape[0], q, p, j
    cdef long k = -1
    cdef double s
    for q in range(n):
        if not isfinite(f[q]):
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -INFINITY
            z[1] = INFINITY
            continue
        while True:
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p)
            if s <= z[k]:
                k -= 1
                if k < 0:
                    break
            else:
                break
        k += 1
        v[k] = q
        z[k] = s if k > 0 else -INFINITY
        z[k + 1] = INFINITY
    if k < 0:
        for q in range(n):
            out[q] = INFINITY
        return
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        p = v[j]
        out[q] = (q - p) * (q - p) + f[p]


def edt(occupied):
    occ = np.asarray(occupied, dtype=bool)
    f = np.where(occ, 0.0, np.inf)
    cdef double[:, ::1] rows
    cdef double[::1] outrow
    cdef long[::1] v
    cdef double[::1] z
    cdef Py_ssize_t r, length
    for axis in range(occ.ndim):
        moved = np.ascontiguousarray(np.moveaxis(f, axis, -1))
        shape = moved.shape
        length = shape[len(shape) - 1]
        flat = moved.reshape(-1, length)
        res = np.empty_like(flat)
        rows = flat
        v = np.zeros(length, dtype=np.int_)
        z = np.empty(length + 1)
        for r in range(flat.shape[0]):
            outrow = res[r]
            _edt_row(rows[r], outrow, v, z)
        f = np.moveaxis(res.reshape(shape), -1, axis)
    return np.sqrt(f)


cdef struct HeapItem:
    double f
    long long order
    long long node


cdef inline bint _less(HeapItem a, HeapItem b) nogil:
    return a.f < b.f or (a.f == b.f and a.order < b.order)


cdef class _Heap:
    cdef HeapItem* data
    cdef Py_ssize_t size, cap

    def __cinit__(self, Py_ssize_t cap):
        self.cap = cap if cap > 16 else 16
        self.size = 0
        self.data = <HeapItem*> malloc(self.cap * sizeof(HeapItem))
        if self.data == NULL:
            raise MemoryError()

    def __dealloc__(self):
        free(self.data)

    cdef int push(self, double f, long long order, long long node) except -1:
        cdef Py_ssize_t i, parent
        cdef HeapItem item, tmp
        cdef HeapItem* grown
        if self.size == self.cap:
            grown = <HeapItem*> realloc(self.data, 2 * self.cap * sizeof(HeapItem))
            if grown == NULL:
                raise MemoryError()
            self.data = grown
            self.cap *= 2
        item.f = f
        item.order = order
        item.node = node
        i = self.size
        self.size += 1
        self.data[i] = item
        while i > 0:
            parent = (i - 1) // 2
            if _less(self.data[i], self.data[parent]):
                tmp = self.data[i]
                self.data[i] = self.data[parent]
                self.data[parent] = tmp
                i = parent
            else:
                break
        return 0

    cdef HeapItem pop(self):
        cdef HeapItem top = self.data[0], tmp
        cdef Py_ssize_t i = 0, l, r, best
        self.size -= 1
        self.data[0] = self.data[self.size]
        while True:
            l = 2 * i + 1
            r = l + 1
            best = i
            if l < self.size and _less(self.data[l], self.data[best]):
                best = l
            if r < self.size and _less(self.data[r], self.data[best]):
                best = r
            if best == i:
                break
            tmp = self.data[i]
            self.data[i] = self.data[best]
            self.data[best] = tmp
            i = best
        return top


def astar(free_mask, start, goal):
    fm = np.ascontiguousarray(np.asarray(free_mask, dtype=np.uint8))
    cdef int ndim = fm.ndim
    shape_t = fm.shape
    start = tuple(int(i) for i in start)
    goal = tuple(int(i) for i in goal)
    if not (fm[start] and fm[goal]):
        return []
    cdef unsigned char[::1] free_flat = fm.reshape(-1)
    cdef long long total = free_flat.shape[0]
    offs = [d for d in itertools.product((-1, 0, 1), repeat=ndim) if any(d)]
    cdef int noff = len(offs)
    cdef long long[:, ::1] off = np.array(offs, dtype=np.int64)
    cdef double[::1] step = np.array([np.sqrt(float(sum(abs(x) for x in d))) for d in offs])
    cdef long long[::1] shp = np.array(shape_t, dtype=np.int64)
    cdef long long[::1] strides = np.array(
        [int(np.prod(shape_t[a + 1:])) for a in range(ndim)], dtype=np.int64)
    cdef long long[::1] gidx = np.array(goal, dtype=np.int64)
    cdef double[::1] gcost = np.full(total, np.inf)
    cdef long long[::1] parent = np.full(total, -1, dtype=np.int64)
    cdef unsigned char[::1] closed = np.zeros(total, dtype=np.uint8)
    cdef long long[::1] cur_idx = np.zeros(ndim, dtype=np.int64)
    cdef long long[::1] nb_idx = np.zeros(ndim, dtype=np.int64)
    cdef long long s_node = 0, g_node = 0, cur, nb, counter = 0, rem, hs
    cdef int a, o
    cdef bint ok
    cdef double gc, ng, hval
    cdef HeapItem item
    for a in range(ndim):
        s_node += start[a] * strides[a]
        g_node += goal[a] * strides[a]
    heap = _Heap(1024)
    hs = 0
    for a in range(ndim):
        hs += (start[a] - gidx[a]) * (start[a] - gidx[a])
    gcost[s_node] = 0.0
    heap.push(sqrt(<double> hs), counter, s_node)
    counter += 1
    while heap.size > 0:
        item = heap.pop()
        cur = item.node
        if closed[cur]:
            continue
        if cur == g_node:
            path = []
            while cur != -1:
                rem = cur
                idx = []
                for a in range(ndim):
                    idx.append(int(rem // strides[a]))
                    rem = rem % strides[a]
                path.append(tuple(idx))
                cur = parent[cur]
            path.reverse()
            return path
        closed[cur] = 1
        gc = gcost[cur]
        rem = cur
        for a in range(ndim):
            cur_idx[a] = rem // strides[a]
            rem = rem % strides[a]
        for o in range(noff):
            ok = True
            nb = 0
            for a in range(ndim):
                nb_idx[a] = cur_idx[a] + off[o, a]
                if nb_idx[a] < 0 or nb_idx[a] >= shp[a]:
                    ok = False
                    break
                nb += nb_idx[a] * strides[a]
            if not ok or not free_flat[nb] or closed[nb]:
                continue
            ng = gc + step[o]
            if ng < gcost[nb] - 1e-12:
                gcost[nb] = ng
                parent[nb] = cur
                hs = 0
                for a in range(ndim):
                    hs += (nb_idx[a] - gidx[a]) * (nb_idx[a] - gidx[a])
                hval = sqrt(<double> hs)
                heap.push(ng + hval, counter, nb)
                counter += 1
    return []
