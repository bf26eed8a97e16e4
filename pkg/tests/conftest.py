import numpy as np
from hypothesis import HealthCheck, settings

from semedge.kernel import Parameter, Tape

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FD_EPS = 1e-3
FD_TOL = 1e-4


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def check_gradients(loss_fn, leaves, rng, n_coords=100, eps=FD_EPS):
    """Compare analytic and central-difference gradients of a scalar loss.

    ``loss_fn(record)`` returns ``(scalar, seeds)`` where ``seeds`` is the
    list handed to ``Tape.backward`` (only used when ``record`` is true).
    ``leaves`` are float64 Tensors/Parameters whose data is perturbed in
    place. Returns the list of relative errors at the sampled coordinates.
    """
    for t in leaves:
        if isinstance(t, Parameter):
            t.zero_grad()
    with Tape() as tape:
        _, seeds = loss_fn(True)
    tape.backward(seeds)
    analytic = []
    for t in leaves:
        g = t.grad if isinstance(t, Parameter) else tape.grad_of(t)
        analytic.append(np.zeros_like(t.data) if g is None else g.copy())

    coords = [(i, idx) for i, t in enumerate(leaves) for idx in np.ndindex(t.data.shape)]
    pick = rng.choice(len(coords), size=min(n_coords, len(coords)), replace=False)
    errs = []
    for c in pick:
        i, idx = coords[c]
        data = leaves[i].data
        orig = data[idx]
        data[idx] = orig + eps
        fp = loss_fn(False)[0]
        data[idx] = orig - eps
        fm = loss_fn(False)[0]
        data[idx] = orig
        errs.append(rel_err(float(analytic[i][idx]), (fp - fm) / (2 * eps)))
    return errs


def linear_probe(forward, rng):
    """A loss_fn for ``check_gradients``: sum(out * R) with a fixed random R."""
    state = {}

    def loss_fn(record):
        out = forward()
        if "r" not in state:
            state["r"] = rng.normal(size=out.shape)
        return float((out.data * state["r"]).sum()), [(out, state["r"])]

    return loss_fn
