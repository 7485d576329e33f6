"""Naive reference implementations used as test oracles.

Each one walks pixels or voxels in plain Python loops so it shares no code
path with the vectorised kernels under test.
"""
import numpy as np


def rays(data, axis):
    """Yield ``((i, j), ray_list)`` for every output pixel."""
    moved = np.moveaxis(data, axis, -1)
    h, w, _ = moved.shape
    for i in range(h):
        for j in range(w):
            yield (i, j), [moved[i, j, k] for k in range(moved.shape[2])]


def project(data, axis, reduce, dtype=np.float32):
    shape = tuple(n for a, n in enumerate(data.shape) if a != axis)
    out = np.zeros(shape, dtype=dtype)
    for idx, ray in rays(data, axis):
        out[idx] = reduce(ray)
    return out


def ray_max(ray):
    best = ray[0]
    for v in ray[1:]:
        if v > best:
            best = v
    return best


def ray_min(ray):
    best = ray[0]
    for v in ray[1:]:
        if v < best:
            best = v
    return best


def ray_mean64(ray):
    total = 0.0
    for v in ray:
        total += float(v)
    return total / len(ray)


def ray_cvp_literal(ray, threshold):
    m = ray_max(ray)
    return m if m <= threshold else 0.0


def ray_lmip(ray, threshold):
    n = len(ray)
    for k in range(n):
        left = ray[k - 1] if k > 0 else None
        right = ray[k + 1] if k < n - 1 else None
        peak = (left is None or ray[k] >= left) and (right is None or ray[k] >= right)
        if peak and ray[k] > threshold:
            return ray[k]
    return 0.0


def ulp_distance32(a, b):
    """Units-in-last-place distance between float32 arrays."""
    ia = np.asarray(a, np.float32).view(np.int32).astype(np.int64)
    ib = np.asarray(b, np.float32).view(np.int32).astype(np.int64)
    ia = np.where(ia < 0, np.int64(-(2**31)) - ia, ia)
    ib = np.where(ib < 0, np.int64(-(2**31)) - ib, ib)
    return np.abs(ia - ib)


def confusion(pred, truth, cls):
    tp = fp = tn = fn = 0
    for p, t in zip(np.ravel(pred), np.ravel(truth)):
        if p == cls and t == cls:
            tp += 1
        elif p == cls:
            fp += 1
        elif t == cls:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn
