import math

import numpy as np
from scipy.optimize import minimize as scipy_minimize


def nelder_mead_energy(n: int, starts: int = 4, seed: int = 0) -> float:
    """Multistart Nelder-Mead on the bare pair-plus-confinement energy."""
    iu = np.triu_indices(n, 1)

    def H(v):
        x = v.reshape(n, 2)
        d = x[:, None, :] - x[None, :, :]
        d2 = (d * d).sum(-1)[iu]
        if np.any(d2 == 0):
            return np.inf
        return 0.5 * math.pi * float((x * x).sum()) - 0.5 * float(np.log(d2).sum())

    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(starts):
        v = rng.normal(scale=0.5 * math.sqrt(n / math.pi), size=2 * n)
        for _ in range(3):  # restarts from the last simplex center re-expand it
            r = scipy_minimize(H, v, method="Nelder-Mead",
                               options=dict(xatol=1e-9, fatol=1e-12, maxiter=20_000 * n,
                                            maxfev=20_000 * n, adaptive=True))
            v = r.x
        best = min(best, r.fun)
    return best
