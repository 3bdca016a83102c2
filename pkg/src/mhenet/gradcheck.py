"""Central finite-difference gradient checking.

The function under test returns a tensor; it is collapsed to a scalar through
a fixed random projection so a single backward pass yields every analytic
gradient.  Numeric derivatives use central differences with step ``h`` while
recording and running-statistic updates are suspended, so the probed function
must otherwise be pure.

The finite difference is only a valid oracle where it has itself converged:
at kinks (ReLU, max pooling) or near-kink curvature (the
epsilon-regularized square root at a vanishing argument) the secant measures
nothing.  Each coordinate is therefore probed at both h and h/2; if the two
estimates disagree beyond a quarter of the tolerance, the coordinate is
skipped and counted in ``fd_skipped``.  A wrong backward rule still fails on
the (dominant) convergent coordinates, since the difference quotient does not
depend on the analytic side.

The reported error for a coordinate is |analytic - numeric| divided by
max(1, |analytic|, |numeric|): relative for large gradients, absolute near
zero, which keeps residual finite-difference noise on dead coordinates from
drowning the signal.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, backward, frozen_stats, no_grad, mul, sum_all


@dataclass
class GradCheckResult:
    name: str
    tol: float
    max_rel_err: float = 0.0
    checked: int = 0
    fd_skipped: int = 0
    per_tensor: dict = field(default_factory=dict)

    @property
    def passed(self):
        return (self.checked > 0
                and bool(np.isfinite(self.max_rel_err))
                and self.max_rel_err < self.tol
                and self.fd_skipped <= self.checked)

    def __str__(self):
        status = "ok" if self.passed else "FAIL"
        skipped = f", {self.fd_skipped} non-convergent skipped" if self.fd_skipped else ""
        return (f"{self.name}: max rel err {self.max_rel_err:.3e} over "
                f"{self.checked} coords{skipped} (tol {self.tol:.1e}) {status}")


def _rel_err(a, n):
    return abs(a - n) / max(1.0, abs(a), abs(n))


def _projection(shape, seed):
    rng = np.random.default_rng(seed)
    # weights bounded away from zero so every output element is observed
    return rng.uniform(0.5, 1.5, size=shape)


def grad_check(fn, wrt, tol=1e-4, h=1e-4, max_coords=64, seed=0, name="fn"):
    """Compare analytic and central-difference gradients of ``fn``.

    ``fn`` is a zero-argument callable returning a Tensor; ``wrt`` lists the
    tensors to differentiate with respect to (they must feed ``fn`` by
    reference).  At most ``max_coords`` coordinates per tensor are probed,
    sampled deterministically from ``seed``; pass None to probe everything.
    """
    out = fn()
    w = Tensor(_projection(out.shape, seed).astype(out.dtype))
    for t in wrt:
        t.zero_grad()
    backward(sum_all(mul(out, w)))
    analytic = []
    for t in wrt:
        if t.grad is None:
            raise ValueError("grad_check: a probed tensor received no gradient")
        analytic.append(t.grad.copy())

    def loss_value():
        with no_grad(), frozen_stats():
            return float(np.sum(fn().data * w.data))

    def central(flat, i, step):
        keep = flat[i]
        flat[i] = keep + step
        up = loss_value()
        flat[i] = keep - step
        down = loss_value()
        flat[i] = keep
        return (up - down) / (2.0 * step)

    rng = np.random.default_rng(seed + 1)
    result = GradCheckResult(name=name, tol=tol)
    converge_tol = tol / 4.0
    for t, ga in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords is None or n <= max_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        worst = 0.0
        for i in coords:
            coarse = central(flat, i, h)
            fine = central(flat, i, h / 2.0)
            if _rel_err(coarse, fine) > converge_tol:
                result.fd_skipped += 1
                continue
            result.checked += 1
            worst = max(worst, _rel_err(ga.reshape(-1)[i], fine))
        result.per_tensor[id(t)] = worst
        result.max_rel_err = max(result.max_rel_err, worst)
    return result
