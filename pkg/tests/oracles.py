"""Independent reference implementations in plain Python (math + loops).

Nothing here imports the package under test; values are computed
element by element so the package's vectorized code is checked against a
different code path.
"""

import itertools
import math


def softmax(z, tau=1.0):
    m = max(z)
    e = [math.exp((v - m) / tau) for v in z]
    s = sum(e)
    return [v / s for v in e]


def kl(p, q):
    return sum(a * (math.log(a) - math.log(b)) for a, b in zip(p, q) if a > 0)


def kd(zt_rows, zs_rows, tau):
    vals = [kl(softmax(t, tau), softmax(s, tau)) for t, s in zip(zt_rows, zs_rows)]
    return tau * tau * sum(vals) / len(vals)


def cross_entropy(z_rows, labels):
    return -sum(math.log(softmax(z)[y]) for z, y in zip(z_rows, labels)) / len(labels)


def dkd_parts(zt_rows, zs_rows, labels, tau):
    """Per-batch mean of (tckd, nckd, kd_row_weighted) computed from definitions."""
    tck, nck = [], []
    for t, s, y in zip(zt_rows, zs_rows, labels):
        pt, ps = softmax(t, tau), softmax(s, tau)
        bt, bs = [pt[y], 1 - pt[y]], [ps[y], 1 - ps[y]]
        tck.append(tau * tau * kl(bt, bs))
        rt = [pt[k] / (1 - pt[y]) for k in range(len(pt)) if k != y]
        rs = [ps[k] / (1 - ps[y]) for k in range(len(ps)) if k != y]
        nck.append(tau * tau * kl(rt, rs))
    return tck, nck


def dkd(zt_rows, zs_rows, labels, tau, alpha, beta):
    tck, nck = dkd_parts(zt_rows, zs_rows, labels, tau)
    return (alpha * sum(tck) + beta * sum(nck)) / len(tck)


def ref(zs_rows, zr_rows, weights=None):
    vals = [kl(softmax(s), softmax(r)) for s, r in zip(zs_rows, zr_rows)]
    if weights is not None:
        vals = [w * v for w, v in zip(weights, vals)]
    return sum(vals) / len(vals)


def mse(a, b):
    fa, fb = list(flat(a)), list(flat(b))
    return sum((x - y) ** 2 for x, y in zip(fa, fb)) / len(fa)


def flat(x):
    if isinstance(x, (list, tuple)):
        for v in x:
            yield from flat(v)
    else:
        yield float(x)


def _norm(v):
    return math.sqrt(sum(x * x for x in v))


def huber(x, delta=1.0):
    a = abs(x)
    return 0.5 * a * a if a <= delta else delta * (a - 0.5 * delta)


def rkd(t_pts, s_pts, w_d=25.0, w_a=50.0):
    n = len(t_pts)

    def d(p, i, j):
        return _norm([a - b for a, b in zip(p[i], p[j])])

    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    mt = sum(d(t_pts, i, j) for i, j in pairs) / len(pairs)
    ms = sum(d(s_pts, i, j) for i, j in pairs) / len(pairs)
    dist = sum(huber(d(s_pts, i, j) / ms - d(t_pts, i, j) / mt) for i, j in pairs) / len(pairs)

    def cos(p, i, j, k):
        a = [x - y for x, y in zip(p[i], p[j])]
        b = [x - y for x, y in zip(p[k], p[j])]
        return sum(x * y for x, y in zip(a, b)) / (_norm(a) * _norm(b))

    trip = [c for c in itertools.product(range(n), repeat=3) if len(set(c)) == 3]
    ang = sum(huber(cos(s_pts, *c) - cos(t_pts, *c)) for c in trip) / len(trip) if trip else 0.0
    return dist, ang, w_d * dist + w_a * ang


def _cos(a, b):
    return sum(x * y for x, y in zip(a, b)) / (_norm(a) * _norm(b))


def pkt(t_pts, s_pts):
    n = len(t_pts)

    def rows(p):
        out = []
        for i in range(n):
            k = [0.0 if i == j else (_cos(p[i], p[j]) + 1) / 2 for j in range(n)]
            s = sum(k)
            out.append([v / s for v in k])
        return out

    rt, rs = rows(t_pts), rows(s_pts)
    return sum(kl(a, b) for a, b in zip(rt, rs)) / n


def cc(t_pts, s_pts):
    n = len(t_pts)
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += (_cos(t_pts[i], t_pts[j]) - _cos(s_pts[i], s_pts[j])) ** 2
    return total / (n * n)


def attention(h, p=2.0):
    """h: [C][H][W] nested lists -> normalized flat map."""
    c, hh, ww = len(h), len(h[0]), len(h[0][0])
    a = [sum(abs(h[k][i][j]) ** p for k in range(c)) for i in range(hh) for j in range(ww)]
    n = _norm(a)
    return [v / n for v in a]


def at(t_batch, s_batch, p=2.0):
    vals = []
    for t, s in zip(t_batch, s_batch):
        at_, as_ = attention(t, p), attention(s, p)
        vals.append(_norm([a - b for a, b in zip(as_, at_)]))
    return sum(vals) / len(vals)


def sgd(params, grads_seq, lr, momentum, wd):
    """Scalar-recurrence SGD: v <- mu v + g + wd p; p <- p - lr v."""
    p = list(params)
    v = [None] * len(p)
    for grads in grads_seq:
        for i, g in enumerate(grads):
            d = g + wd * p[i]
            v[i] = d if v[i] is None else momentum * v[i] + d
            p[i] = p[i] - lr * v[i]
    return p
