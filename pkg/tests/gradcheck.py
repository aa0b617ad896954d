"""Central finite-difference gradient checks on sampled coordinates."""

from __future__ import annotations

import numpy as np

from gazebed import autodiff as ad

EPS = 1e-4
RTOL = 1e-3
ABS_FLOOR = 1e-8


def relative_error(analytic, numeric):
    # the denominator floor turns the relative test into |a - n| < ABS_FLOOR for
    # near-zero gradients, where central differences are dominated by rounding
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), ABS_FLOOR / RTOL)


def check(loss_fn, params, rng, n_coords=6, eps=EPS, rtol=RTOL):
    """Compare backprop against central differences.

    ``loss_fn()`` builds a fresh graph from the current ``params`` data and
    returns a scalar Tensor.  Returns the worst relative error seen.
    """
    ad.zero_grad(params)
    loss = loss_fn()
    ad.backward(loss)
    analytic = {id(p): (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params}
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for i in picks:
            old = flat[i]
            flat[i] = old + eps
            up = loss_fn().item()
            flat[i] = old - eps
            down = loss_fn().item()
            flat[i] = old
            numeric = (up - down) / (2 * eps)
            a = analytic[id(p)].reshape(-1)[i]
            worst = max(worst, relative_error(a, numeric))
    ad.zero_grad(params)
    return worst
