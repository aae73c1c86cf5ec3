"""Independent reference computations shared by several test modules."""

import math

import numpy as np

from zbdetect.head import loss_and_grad, parameters


def finite_difference_check(extractor, head, batch, cfg, step=1e-5):
    """Max relative error between analytic gradients and central differences."""
    _, grads = loss_and_grad(extractor, head, batch, cfg)
    worst = 0.0
    for p, g in zip(parameters(extractor, head), grads):
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            up, _ = loss_and_grad(extractor, head, batch, cfg)
            p[idx] = old - step
            down, _ = loss_and_grad(extractor, head, batch, cfg)
            p[idx] = old
            num[idx] = (up - down) / (2 * step)
        scale = np.maximum(np.abs(num) + np.abs(g), 1e-6)
        worst = max(worst, float(np.max(np.abs(num - g) / scale)))
    return worst


def brute_glr(stream, fpr, tpr_lower, tpr_max, m, start=0):
    """R_k at every step by explicit enumeration of change points in ``[max(start, k - m), k)``.

    Returns one ``(statistic, taus)`` pair per step, where ``taus`` lists every
    change point attaining the maximum within 1e-9 (empty when the statistic is 0).
    """
    out = []
    for k in range(1, len(stream) + 1):
        values = {}
        for tau in range(max(start, k - m), k):
            seg = stream[tau:k]
            p = min(tpr_max, max(tpr_lower, sum(seg) / len(seg)))
            total = 0.0
            for i in seg:
                total += math.log(p / fpr) if i else math.log((1 - p) / (1 - fpr))
            values[tau] = total
        best = max(0.0, max(values.values(), default=0.0))
        taus = [t for t, v in values.items() if v > 0 and v >= best - 1e-9]
        out.append((best, taus))
    return out
