import numpy as np
import pytest

from flowtopo import autodiff as ad

# Acceptance-criterion results collected by tests/test_acceptance.py; printed
# in the terminal summary so pass/fail lines are visible without -s.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def analytic_grads(loss_fn, params):
    """Run the loss once and return d loss / d p for every param (zeros if
    the parameter does not influence the loss)."""
    for p in params:
        p.grad = None
    loss = loss_fn()
    ad.backward(loss)
    out = []
    for p in params:
        if p.grad is None:
            out.append(np.zeros_like(p.data))
        else:
            out.append(np.asarray(p.grad, dtype=np.float64).reshape(p.data.shape))
        p.grad = None
    return out


def fd_param_grads(loss_fn, params, step=1e-5):
    """Elementwise central finite differences of the scalar loss."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = float(loss_fn().data)
            flat[i] = orig - step
            lm = float(loss_fn().data)
            flat[i] = orig
            gf[i] = (lp - lm) / (2.0 * step)
        grads.append(g)
    return grads


def assert_grads_match_fd(loss_fn, params, rel=1e-4, abs_floor=1e-8, step=1e-5):
    ana = analytic_grads(loss_fn, params)
    num = fd_param_grads(loss_fn, params, step=step)
    for i, (a, n) in enumerate(zip(ana, num)):
        tol = np.maximum(rel * np.maximum(np.abs(a), np.abs(n)), abs_floor)
        bad = np.abs(a - n) > tol
        assert not bad.any(), (
            f"gradient mismatch in param {i} at {np.argwhere(bad)[:5]}: "
            f"analytic {a[bad][:5]} vs fd {n[bad][:5]}"
        )
