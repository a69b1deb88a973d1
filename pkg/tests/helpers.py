"""Central finite-difference checks shared by the gradient tests."""

import numpy as np


def max_relative_error(loss_fn, net, analytic, eps=1e-6, floor=1e-5, prefix=""):
    """Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over the parameters of ``net``
    whose names start with ``prefix``."""
    worst = 0.0
    for name, arr in net.named_arrays():
        if not name.startswith(prefix):
            continue
        g = analytic[name]
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss_fn()
            flat[i] = old - eps
            down = loss_fn()
            flat[i] = old
            num = (up - down) / (2 * eps)
            worst = max(worst, abs(gf[i] - num) / max(abs(gf[i]), abs(num), floor))
    return worst
