import numpy as np


def central_diff(f, x, h):
    """Central finite-difference gradient of scalar ``f`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros(x.shape, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i].copy()
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


# (step, relative tolerance) per working precision
TOL64 = (1e-6, 1e-5)
TOL32 = (1e-3, 1e-2)


def relu_pattern(model):
    """Active-unit pattern of every ReLU in a FusionModel's blocks (after a forward)."""
    from gapfuse.numeric_core import ReLU
    return b"".join((layer._x > 0).tobytes() for block in model.blocks.values()
                    for layer in block.layers if isinstance(layer, ReLU))


def central_diff_smooth(f, pattern, x, h):
    """Central differences plus a mask of entries whose +-h steps keep ``pattern()`` fixed.

    Entries where a step crosses a ReLU kink measure a one-sided slope mix,
    not the derivative, so they are excluded from comparisons.
    """
    grad = np.zeros(x.shape, dtype=np.float64)
    valid = np.ones(x.shape, dtype=bool)
    f()
    base = pattern()
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i].copy()
        x[i] = old + h
        fp = f()
        same = pattern() == base
        x[i] = old - h
        fm = f()
        same = same and pattern() == base
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
        valid[i] = same
    return grad, valid
