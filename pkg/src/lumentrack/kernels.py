"""Hot numeric kernels with numba and pure-numpy implementations.

Boxes are ``(N, 4)`` float64 arrays in center form ``[cx, cy, w, h]``.
Kalman states are ``(N, 7)`` means ``[cx, cy, h, a, vx, vy, vh]`` with
``(N, 7, 7)`` covariances.

Both variants of every kernel are always importable (``*_jit`` and
``*_np``); the unsuffixed public names are bound to one of them according
to :data:`lumentrack._accel.USE_NUMBA`.
"""
import numpy as np

from ._accel import USE_NUMBA

try:
    from numba import njit as _numba_njit
except ImportError:  # pragma: no cover
    _numba_njit = None

MIN_SIZE = 1e-3


# --------------------------------------------------------------------------
# overlap matrices
# --------------------------------------------------------------------------


def iou_matrix_np(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax0 = (a[:, 0] - a[:, 2] / 2)[:, None]
    ax1 = (a[:, 0] + a[:, 2] / 2)[:, None]
    ay0 = (a[:, 1] - a[:, 3] / 2)[:, None]
    ay1 = (a[:, 1] + a[:, 3] / 2)[:, None]
    bx0 = (b[:, 0] - b[:, 2] / 2)[None, :]
    bx1 = (b[:, 0] + b[:, 2] / 2)[None, :]
    by0 = (b[:, 1] - b[:, 3] / 2)[None, :]
    by1 = (b[:, 1] + b[:, 3] / 2)[None, :]
    iw = np.clip(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0.0, None)
    ih = np.clip(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0.0, None)
    inter = iw * ih
    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    union = area_a + area_b - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def containment_matrix_np(inner, outer):
    """``out[i, j] = area(inner_i & outer_j) / area(inner_i)``."""
    inner = np.asarray(inner, dtype=np.float64).reshape(-1, 4)
    outer = np.asarray(outer, dtype=np.float64).reshape(-1, 4)
    ix0 = (inner[:, 0] - inner[:, 2] / 2)[:, None]
    ix1 = (inner[:, 0] + inner[:, 2] / 2)[:, None]
    iy0 = (inner[:, 1] - inner[:, 3] / 2)[:, None]
    iy1 = (inner[:, 1] + inner[:, 3] / 2)[:, None]
    ox0 = (outer[:, 0] - outer[:, 2] / 2)[None, :]
    ox1 = (outer[:, 0] + outer[:, 2] / 2)[None, :]
    oy0 = (outer[:, 1] - outer[:, 3] / 2)[None, :]
    oy1 = (outer[:, 1] + outer[:, 3] / 2)[None, :]
    iw = np.clip(np.minimum(ix1, ox1) - np.maximum(ix0, ox0), 0.0, None)
    ih = np.clip(np.minimum(iy1, oy1) - np.maximum(iy0, oy0), 0.0, None)
    area = (inner[:, 2] * inner[:, 3])[:, None]
    return np.minimum(iw * ih / area, 1.0)


def _iou_matrix_py(a, b):
    n = a.shape[0]
    m = b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        ax0 = a[i, 0] - a[i, 2] / 2
        ax1 = a[i, 0] + a[i, 2] / 2
        ay0 = a[i, 1] - a[i, 3] / 2
        ay1 = a[i, 1] + a[i, 3] / 2
        area_a = a[i, 2] * a[i, 3]
        for j in range(m):
            bx0 = b[j, 0] - b[j, 2] / 2
            bx1 = b[j, 0] + b[j, 2] / 2
            by0 = b[j, 1] - b[j, 3] / 2
            by1 = b[j, 1] + b[j, 3] / 2
            iw = min(ax1, bx1) - max(ax0, bx0)
            ih = min(ay1, by1) - max(ay0, by0)
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            union = area_a + b[j, 2] * b[j, 3] - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out


def _containment_matrix_py(inner, outer):
    n = inner.shape[0]
    m = outer.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        ix0 = inner[i, 0] - inner[i, 2] / 2
        ix1 = inner[i, 0] + inner[i, 2] / 2
        iy0 = inner[i, 1] - inner[i, 3] / 2
        iy1 = inner[i, 1] + inner[i, 3] / 2
        area = inner[i, 2] * inner[i, 3]
        for j in range(m):
            ox0 = outer[j, 0] - outer[j, 2] / 2
            ox1 = outer[j, 0] + outer[j, 2] / 2
            oy0 = outer[j, 1] - outer[j, 3] / 2
            oy1 = outer[j, 1] + outer[j, 3] / 2
            iw = min(ix1, ox1) - max(ix0, ox0)
            ih = min(iy1, oy1) - max(iy0, oy0)
            if iw <= 0.0 or ih <= 0.0:
                continue
            out[i, j] = min(iw * ih / area, 1.0)
    return out


# --------------------------------------------------------------------------
# Kalman filter, 7-dim constant velocity state
# --------------------------------------------------------------------------


def _kf_predict_py(mean, cov, std_pos, std_vel, std_aspect):
    n = mean.shape[0]
    out_m = mean.copy()
    out_p = cov.copy()
    for k in range(n):
        h = mean[k, 2]
        out_m[k, 0] += mean[k, 4]
        out_m[k, 1] += mean[k, 5]
        out_m[k, 2] += mean[k, 6]
        p = out_p[k]
        # F P: rows 0..2 gain rows 4..6
        for r in range(3):
            for c in range(7):
                p[r, c] += p[r + 4, c]
        # (F P) F^T: cols 0..2 gain cols 4..6
        for r in range(7):
            for c in range(3):
                p[r, c] += p[r, c + 4]
        qp = (std_pos * h) ** 2
        qv = (std_vel * h) ** 2
        p[0, 0] += qp
        p[1, 1] += qp
        p[2, 2] += qp
        p[3, 3] += std_aspect * std_aspect
        p[4, 4] += qv
        p[5, 5] += qv
        p[6, 6] += qv
        for r in range(7):
            for c in range(r + 1, 7):
                s = 0.5 * (p[r, c] + p[c, r])
                p[r, c] = s
                p[c, r] = s
    return out_m, out_p


def _kf_update_py(mean, cov, z, std_meas, std_aspect_meas):
    n = mean.shape[0]
    out_m = mean.copy()
    out_p = cov.copy()
    ok = np.ones(n, dtype=np.bool_)
    S = np.zeros((4, 4))
    L = np.zeros((4, 4))
    for k in range(n):
        P = cov[k]
        h = mean[k, 2]
        for r in range(4):
            for c in range(4):
                S[r, c] = P[r, c]
        rp = (std_meas * h) ** 2
        S[0, 0] += rp
        S[1, 1] += rp
        S[2, 2] += rp
        S[3, 3] += std_aspect_meas * std_aspect_meas
        # Cholesky S = L L^T
        good = True
        for r in range(4):
            for c in range(r + 1):
                acc = S[r, c]
                for t in range(c):
                    acc -= L[r, t] * L[c, t]
                if r == c:
                    if not (acc > 1e-12):
                        good = False
                        break
                    L[r, r] = np.sqrt(acc)
                else:
                    L[r, c] = acc / L[c, c]
            if not good:
                break
        if not good:
            ok[k] = False
            continue
        # gain^T = S^-1 (P H^T)^T, solved column by column of PH^T^T (4 x 7)
        KT = np.zeros((4, 7))
        for col in range(7):
            y = np.zeros(4)
            for r in range(4):
                acc = P[col, r]
                for t in range(r):
                    acc -= L[r, t] * y[t]
                y[r] = acc / L[r, r]
            for r in range(3, -1, -1):
                acc = y[r]
                for t in range(r + 1, 4):
                    acc -= L[t, r] * KT[t, col]
                KT[r, col] = acc / L[r, r]
        innov = np.zeros(4)
        for r in range(4):
            innov[r] = z[k, r] - mean[k, r]
        for r in range(7):
            acc = 0.0
            for t in range(4):
                acc += KT[t, r] * innov[t]
            out_m[k, r] = mean[k, r] + acc
        # P' = P - K (H P)
        Pn = out_p[k]
        for r in range(7):
            for c in range(7):
                acc = 0.0
                for t in range(4):
                    acc += KT[t, r] * P[t, c]
                Pn[r, c] = P[r, c] - acc
        for r in range(7):
            for c in range(r + 1, 7):
                s = 0.5 * (Pn[r, c] + Pn[c, r])
                Pn[r, c] = s
                Pn[c, r] = s
        if out_m[k, 2] < MIN_SIZE:
            out_m[k, 2] = MIN_SIZE
        if out_m[k, 3] < MIN_SIZE:
            out_m[k, 3] = MIN_SIZE
    return out_m, out_p, ok


_F = np.eye(7)
_F[0, 4] = _F[1, 5] = _F[2, 6] = 1.0


def kf_predict_np(mean, cov, std_pos, std_vel, std_aspect):
    mean = np.asarray(mean, dtype=np.float64).reshape(-1, 7)
    cov = np.asarray(cov, dtype=np.float64).reshape(-1, 7, 7)
    h = mean[:, 2]
    out_m = mean @ _F.T
    out_p = _F @ cov @ _F.T
    q = np.empty((mean.shape[0], 7))
    q[:, 0:3] = (std_pos * h[:, None]) ** 2
    q[:, 3] = std_aspect**2
    q[:, 4:7] = (std_vel * h[:, None]) ** 2
    idx = np.arange(7)
    out_p[:, idx, idx] += q
    out_p = 0.5 * (out_p + np.swapaxes(out_p, 1, 2))
    return out_m, out_p


def kf_update_np(mean, cov, z, std_meas, std_aspect_meas):
    mean = np.asarray(mean, dtype=np.float64).reshape(-1, 7)
    cov = np.asarray(cov, dtype=np.float64).reshape(-1, 7, 7)
    z = np.asarray(z, dtype=np.float64).reshape(-1, 4)
    n = mean.shape[0]
    h = mean[:, 2]
    S = cov[:, :4, :4].copy()
    r = np.empty((n, 4))
    r[:, 0:3] = (std_meas * h[:, None]) ** 2
    r[:, 3] = std_aspect_meas**2
    idx = np.arange(4)
    S[:, idx, idx] += r
    out_m = mean.copy()
    out_p = cov.copy()
    ok = np.ones(n, dtype=bool)
    for k in range(n):
        try:
            np.linalg.cholesky(S[k])
        except np.linalg.LinAlgError:
            ok[k] = False
    if ok.any():
        PHt = cov[ok][:, :, :4]
        KT = np.linalg.solve(S[ok], np.swapaxes(PHt, 1, 2))  # (k, 4, 7)
        innov = z[ok] - mean[ok][:, :4]
        out_m[ok] = mean[ok] + np.einsum("kij,ki->kj", KT, innov)
        Pn = cov[ok] - np.einsum("kti,ktj->kij", KT, cov[ok][:, :4, :])
        out_p[ok] = 0.5 * (Pn + np.swapaxes(Pn, 1, 2))
    out_m[:, 2] = np.maximum(out_m[:, 2], MIN_SIZE)
    out_m[:, 3] = np.maximum(out_m[:, 3], MIN_SIZE)
    return out_m, out_p, ok


# --------------------------------------------------------------------------
# rectangular Hungarian (shortest augmenting path with potentials)
# --------------------------------------------------------------------------


def _lsa_py(cost):
    """Min-cost assignment of every row of an ``n <= m`` finite matrix.

    Returns ``col_for_row`` (length n). Scan order is fixed, so results are
    deterministic; among equal-cost optima the first found wins.
    """
    n = cost.shape[0]
    m = cost.shape[1]
    col_for_row = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return col_for_row
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    minv = np.empty(m + 1)
    used = np.zeros(m + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = inf
            used[j] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    for j in range(1, m + 1):
        if p[j] != 0:
            col_for_row[p[j] - 1] = j - 1
    return col_for_row


def lsa_np(cost):
    return _lsa_py(np.ascontiguousarray(cost, dtype=np.float64))


if _numba_njit is not None:
    iou_matrix_jit = _numba_njit(cache=True)(_iou_matrix_py)
    containment_matrix_jit = _numba_njit(cache=True)(_containment_matrix_py)
    kf_predict_jit = _numba_njit(cache=True)(_kf_predict_py)
    kf_update_jit = _numba_njit(cache=True)(_kf_update_py)
    lsa_jit = _numba_njit(cache=True)(_lsa_py)
else:  # pragma: no cover
    iou_matrix_jit = containment_matrix_jit = None
    kf_predict_jit = kf_update_jit = lsa_jit = None


def _as_boxes(x):
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64).reshape(-1, 4))


if USE_NUMBA:

    def iou_matrix(a, b):
        return iou_matrix_jit(_as_boxes(a), _as_boxes(b))

    def containment_matrix(inner, outer):
        return containment_matrix_jit(_as_boxes(inner), _as_boxes(outer))

    def kf_predict(mean, cov, std_pos, std_vel, std_aspect):
        return kf_predict_jit(
            np.ascontiguousarray(mean, dtype=np.float64).reshape(-1, 7),
            np.ascontiguousarray(cov, dtype=np.float64).reshape(-1, 7, 7),
            float(std_pos), float(std_vel), float(std_aspect),
        )

    def kf_update(mean, cov, z, std_meas, std_aspect_meas):
        return kf_update_jit(
            np.ascontiguousarray(mean, dtype=np.float64).reshape(-1, 7),
            np.ascontiguousarray(cov, dtype=np.float64).reshape(-1, 7, 7),
            np.ascontiguousarray(z, dtype=np.float64).reshape(-1, 4),
            float(std_meas), float(std_aspect_meas),
        )

    def lsa(cost):
        return lsa_jit(np.ascontiguousarray(cost, dtype=np.float64))

else:
    iou_matrix = iou_matrix_np
    containment_matrix = containment_matrix_np
    kf_predict = kf_predict_np
    kf_update = kf_update_np
    lsa = lsa_np


def warmup():
    """Trigger JIT compilation so the first real frame is not charged for it."""
    boxes = np.array([[5.0, 5.0, 10.0, 10.0], [10.0, 5.0, 10.0, 10.0]])
    iou_matrix(boxes, boxes)
    containment_matrix(boxes, boxes)
    mean = np.array([[5.0, 5.0, 10.0, 1.0, 0.0, 0.0, 0.0]])
    cov = np.eye(7)[None]
    m, p = kf_predict(mean, cov, 0.05, 0.00625, 0.01)
    kf_update(m, p, mean[:, :4], 0.05, 0.01)
    lsa(np.array([[1.0, 2.0], [2.0, 1.0]]))
