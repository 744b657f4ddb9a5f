import numpy as np
import pytest

from coxvae import autodiff as ad
from coxvae.data import SyntheticConfig, generate_blob_dataset, split


def numerical_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def rel_err(a, b, scale_floor=1e-3):
    """Max over elements of |a-b| / max(|a|, |b|, scale_floor * max|b|).

    Entries far below the tensor's largest gradient are judged against that
    scale; pure relative error there only measures finite-difference roundoff.
    """
    a, b = np.asarray(a), np.asarray(b)
    floor = max(scale_floor * float(np.max(np.abs(b), initial=0.0)), 1e-12)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def check_op_grad(op, *arrays, h=1e-6):
    """Compare autodiff gradients of sum(w * op(*inputs)) to finite differences."""
    rng = np.random.default_rng(123)
    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*tensors)
    w = rng.normal(size=out.shape)
    loss = ad.sum(ad.mul(out, w))
    ad.backward(loss)
    worst = 0.0
    for t in tensors:
        def f():
            fresh = [ad.Tensor(s.data) for s in tensors]
            return float(np.sum(op(*fresh).data * w))
        num = numerical_grad(f, t.data, h)
        worst = max(worst, rel_err(t.grad, num))
    return worst


@pytest.fixture(scope="session")
def small_blobs():
    return generate_blob_dataset(SyntheticConfig(n_samples=200, seed=3))


@pytest.fixture(scope="session")
def small_split(small_blobs):
    return split(small_blobs, 0.25, 0)


@pytest.fixture(scope="session")
def default_blobs():
    return generate_blob_dataset(SyntheticConfig())
