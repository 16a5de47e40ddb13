"""Shared test utilities: finite-difference gradient probes."""
import math

FD_STEP = 1e-5
REL_TOL = 1e-4


def rel_error(a: float, b: float, floor: float = 1e-7) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def fd_probes(f, arrays: dict, grads: dict, rng, n_probes: int = 20, h: float = FD_STEP):
    """Compare analytic ``grads`` with central differences of scalar ``f()``.

    ``arrays`` maps names to arrays that ``f`` reads (they are perturbed in
    place). Returns the list of relative errors, one per probe.
    """
    names = sorted(arrays)
    errs = []
    for _ in range(n_probes):
        k = names[rng.integers(len(names))]
        arr = arrays[k]
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        fd = (fp - fm) / (2 * h)
        errs.append(rel_error(float(grads[k][idx]), fd))
    return errs


def randomize(params: dict, rng, scale: float = 0.5):
    for v in params.values():
        v[...] = rng.normal(size=v.shape) * scale / math.sqrt(max(v.shape[0], 1))
