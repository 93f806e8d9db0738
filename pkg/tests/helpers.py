"""Shared test utilities: finite-difference oracles and small builders."""

import numpy as np

from roomsdf import tensor as T


def rel_err(a, b, floor=1e-7):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def numeric_grad_entries(loss_fn, param, entries, step=1e-5):
    """Central-difference d(loss)/d(param[entry]) for selected flat entries.

    ``loss_fn`` must recompute the scalar loss from current parameter values;
    it is called with no tape recording.
    """
    flat = param.values.reshape(-1)
    grads = []
    for e in entries:
        orig = flat[e]
        flat[e] = orig + step
        hi = loss_fn()
        flat[e] = orig - step
        lo = loss_fn()
        flat[e] = orig
        grads.append((hi - lo) / (2.0 * step))
    return np.array(grads)


def check_param_grads(loss_builder, store, rng, n_entries=4, step=1e-5,
                      tol=1e-4):
    """Compare tape gradients against central differences for every param.

    ``loss_builder()`` runs a forward pass and returns the scalar loss
    Tensor; it is executed under a fresh tape for the analytic side and
    without a tape for the numeric side. Probe entries where two FD step
    sizes disagree sit on a kink (relu/abs/clamp) and are excluded; at
    least half the probes must remain checkable.
    """
    store.zero_grads()
    tape = T.Tape()
    with tape:
        loss = loss_builder()
    tape.backward(loss)
    for name, p in store.items():
        total = p.size
        k = min(n_entries, total)
        entries = rng.choice(total, size=k, replace=False)
        analytic = p.grad.reshape(-1)[entries]
        fn = lambda: loss_builder().item()
        numeric = numeric_grad_entries(fn, p, entries, step=step)
        numeric_fine = numeric_grad_entries(fn, p, entries, step=step / 4.0)
        smooth = rel_err(numeric, numeric_fine) < 1e-3
        assert smooth.sum() >= (k + 1) // 2, \
            f"too many nonsmooth probe entries for '{name}'"
        err = rel_err(analytic, numeric)
        check = smooth & (np.maximum(np.abs(analytic), np.abs(numeric)) > 1e-6)
        assert np.all(err[check] < tol), (
            f"gradient mismatch for '{name}': analytic {analytic} vs "
            f"numeric {numeric} (rel err {err})")
