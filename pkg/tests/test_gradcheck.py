import numpy as np
import pytest

from alignfuse import autodiff as ad
from alignfuse.errors import ContractError
from alignfuse.gradcheck import check_gradients
from alignfuse.rng import DropoutRng


def test_linear_layer_passes_tight():
    g = np.random.Generator(np.random.Philox(key=1))
    w = ad.tensor(g.standard_normal((6, 4)), requires_grad=True, dtype=np.float64)
    b = ad.tensor(g.standard_normal(4), requires_grad=True, dtype=np.float64)
    x = ad.tensor(g.standard_normal((3, 6)), dtype=np.float64)
    target = g.standard_normal((3, 4))

    def forward():
        out = ad.add(ad.matmul(x, w), b)
        return ad.mse_loss(out, target)

    report = check_gradients(forward, {"w": w, "b": b}, tolerance=1e-5)
    assert report.passed, report.format_table()


def test_corrupted_backward_fails():
    """Negative control: a wrong backward rule must be caught."""
    g = np.random.Generator(np.random.Philox(key=2))
    w = ad.tensor(g.standard_normal(5), requires_grad=True, dtype=np.float64)

    def bad_square(t):
        out_data = t.data * t.data

        def backward(grad):
            # deliberately wrong: should be 2*x*grad
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += 3.0 * t.data * grad

        return ad._result(out_data, (t,), backward)

    def forward():
        return ad.mean_axis(bad_square(w), 0)

    report = check_gradients(forward, {"w": w}, tolerance=1e-4)
    assert not report.passed


def test_nondeterministic_forward_rejected():
    w = ad.tensor(np.ones(8), requires_grad=True, dtype=np.float64)
    rng_state = DropoutRng(3, 0)

    def forward():
        return ad.mean_axis(ad.dropout(w, 0.5, rng_state, train=True), 0)

    with pytest.raises(ContractError, match="deterministic"):
        check_gradients(forward, {"w": w})


def test_subsampling_kicks_in_for_large_tensors():
    g = np.random.Generator(np.random.Philox(key=4))
    w = ad.tensor(g.standard_normal((40, 40)), requires_grad=True, dtype=np.float64)
    x = ad.tensor(g.standard_normal((2, 40)), dtype=np.float64)
    target = g.standard_normal((2, 40))

    def forward():
        return ad.mse_loss(ad.matmul(x, w), target)

    report = check_gradients(forward, {"w": w}, max_checks_per_tensor=16)
    assert report.checked_counts["w"] == 16
    assert report.passed
