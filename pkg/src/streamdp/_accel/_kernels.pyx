# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the hot kernels (see _reference.py for the contracts).

Plain C loops over typed memoryviews; no NumPy C-API dependency. Numerical
results match the reference implementations up to summation order.
"""

import numpy as np

from libc.math cimport INFINITY, fabs, log


def consistency_transform(double[::1] flat, sizes_in, int b):
    """In-place least-squares consistency pass (bottom-up then top-down)."""
    sizes_arr = np.ascontiguousarray(sizes_in, dtype=np.longlong)
    cdef long long[::1] sizes = sizes_arr
    cdef int n_levels = sizes.shape[0]
    offsets_arr = np.zeros(n_levels + 1, dtype=np.longlong)
    cdef long long[::1] offsets = offsets_arr
    cdef int j
    cdef long long node, child, base
    for j in range(n_levels):
        offsets[j + 1] = offsets[j] + sizes[j]

    cdef double power, lower, c_self, c_child, child_sum, adjust
    cdef int height
    # Bottom-up (children already updated when their parent level runs).
    for j in range(n_levels - 2, -1, -1):
        height = n_levels - j
        power = float(b) ** height
        lower = power / b
        c_self = (power - lower) / (power - 1.0)
        c_child = (lower - 1.0) / (power - 1.0)
        for node in range(sizes[j]):
            child_sum = 0.0
            base = offsets[j + 1] + node * b
            for child in range(b):
                child_sum += flat[base + child]
            flat[offsets[j] + node] = (
                c_self * flat[offsets[j] + node] + c_child * child_sum
            )

    # Top-down: distribute each parent's residual equally over its children.
    for j in range(1, n_levels):
        for node in range(sizes[j - 1]):
            child_sum = 0.0
            base = offsets[j] + node * b
            for child in range(b):
                child_sum += flat[base + child]
            adjust = (flat[offsets[j - 1] + node] - child_sum) / b
            for child in range(b):
                flat[base + child] += adjust


def em_iterate(double[:, ::1] cond, double[::1] counts, int max_iter, double tol):
    """Expectation-maximization over a binned mixture; see the reference twin."""
    cdef int n_values = cond.shape[1]
    cdef double total = 0.0
    cdef int i, j, it
    for j in range(counts.shape[0]):
        total += counts[j]

    # Rows with zero counts contribute nothing; compress them away so both
    # inner loops stay cache-friendly row-major scans.
    counts_np = np.asarray(counts)
    observed_idx = np.flatnonzero(counts_np > 0)
    cond_obs_arr = np.ascontiguousarray(np.asarray(cond)[observed_idx])
    counts_obs_arr = np.ascontiguousarray(counts_np[observed_idx])
    cdef double[:, ::1] cond_obs = cond_obs_arr
    cdef double[::1] counts_obs = counts_obs_arr
    cdef int n_obs = cond_obs.shape[0]

    f_arr = np.full(n_values, 1.0 / n_values)
    post_arr = np.empty(n_values)
    cdef double[::1] f = f_arr
    cdef double[::1] post = post_arr

    cdef double loglik = -INFINITY
    cdef double new_loglik, acc, ratio
    cdef int used = 0
    for it in range(1, max_iter + 1):
        used = it
        new_loglik = 0.0
        for i in range(n_values):
            post[i] = 0.0
        for j in range(n_obs):
            acc = 0.0
            for i in range(n_values):
                acc += cond_obs[j, i] * f[i]
            if acc < 1e-300:
                acc = 1e-300
            new_loglik += counts_obs[j] * log(acc)
            ratio = counts_obs[j] / acc
            for i in range(n_values):
                post[i] += cond_obs[j, i] * ratio
        for i in range(n_values):
            f[i] = f[i] * post[i] / total
        if it > 1 and fabs(new_loglik - loglik) < tol * fabs(loglik):
            loglik = new_loglik
            break
        loglik = new_loglik
    return f_arr, used, loglik


def expanding_median(double[::1] x):
    """Running medians of all prefixes via two binary heaps."""
    cdef Py_ssize_t n = x.shape[0]
    out_arr = np.empty(n)
    low_arr = np.empty(n)   # max-heap (negated values)
    high_arr = np.empty(n)  # min-heap
    cdef double[::1] out = out_arr
    cdef double[::1] low = low_arr
    cdef double[::1] high = high_arr
    cdef Py_ssize_t n_low = 0, n_high = 0, i
    cdef double value, moved
    for i in range(n):
        value = x[i]
        if n_low == 0 or value <= -low[0]:
            _heap_push(low, n_low, -value)
            n_low += 1
        else:
            _heap_push(high, n_high, value)
            n_high += 1
        if n_low > n_high + 1:
            moved = -_heap_pop(low, n_low)
            n_low -= 1
            _heap_push(high, n_high, moved)
            n_high += 1
        elif n_high > n_low:
            moved = -_heap_pop(high, n_high)
            n_high -= 1
            _heap_push(low, n_low, moved)
            n_low += 1
        if n_low > n_high:
            out[i] = -low[0]
        else:
            out[i] = (-low[0] + high[0]) / 2.0
    return out_arr


cdef inline void _heap_push(double[::1] heap, Py_ssize_t size, double value):
    cdef Py_ssize_t pos = size
    cdef Py_ssize_t parent
    heap[pos] = value
    while pos > 0:
        parent = (pos - 1) >> 1
        if heap[parent] <= heap[pos]:
            break
        heap[parent], heap[pos] = heap[pos], heap[parent]
        pos = parent


cdef inline double _heap_pop(double[::1] heap, Py_ssize_t size):
    cdef double top = heap[0]
    cdef Py_ssize_t pos = 0, child
    heap[0] = heap[size - 1]
    size -= 1
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and heap[child + 1] < heap[child]:
            child += 1
        if heap[pos] <= heap[child]:
            break
        heap[pos], heap[child] = heap[child], heap[pos]
        pos = child
    return top


def exponential_filter(double[::1] x, double alpha, double seed):
    """First-order recursion out[t] = alpha*x[t] + (1-alpha)*out[t-1]."""
    cdef Py_ssize_t n = x.shape[0]
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double prev = seed
    cdef Py_ssize_t i
    for i in range(n):
        prev = alpha * x[i] + (1.0 - alpha) * prev
        out[i] = prev
    return out_arr
