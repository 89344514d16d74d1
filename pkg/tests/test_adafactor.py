import numpy as np
import pytest
import torch

from beatquant.model.adafactor import Adafactor


def adafactor_oracle(w, grads, eps1=1e-30, eps2=1e-3, d=1.0):
    """Textbook factored update with row/column sums, no first moment."""
    w = w.copy()
    R = C = v = None
    for t, g in enumerate(grads, start=1):
        rho = min(1e-2, 1 / np.sqrt(t))
        alpha = max(eps2, np.sqrt(np.mean(w ** 2))) * rho
        beta2 = 1 - t ** -0.8
        g2 = g ** 2 + eps1
        if w.ndim == 2:
            R = g2.sum(1) * (1 - beta2) if R is None else beta2 * R + (1 - beta2) * g2.sum(1)
            C = g2.sum(0) * (1 - beta2) if C is None else beta2 * C + (1 - beta2) * g2.sum(0)
            vhat = np.outer(R, C) / R.sum()
        else:
            v = g2 * (1 - beta2) if v is None else beta2 * v + (1 - beta2) * g2
            vhat = v
        u = g / np.sqrt(vhat)
        u = u / max(1.0, np.sqrt(np.mean(u ** 2)) / d)
        w = w - alpha * u
    return w


@pytest.mark.parametrize("shape", [(5, 3), (7,)])
def test_matches_oracle(shape):
    rng = np.random.default_rng(0)
    w0 = rng.normal(size=shape)
    grads = [rng.normal(size=shape) * s for s in (1.0, 0.1, 3.0, 0.5)]
    p = torch.nn.Parameter(torch.tensor(w0))
    opt = Adafactor([p])
    for g in grads:
        p.grad = torch.tensor(g)
        opt.step()
    np.testing.assert_allclose(p.detach().numpy(), adafactor_oracle(w0, grads), rtol=1e-10, atol=1e-12)


def test_factored_state_is_small():
    p = torch.nn.Parameter(torch.ones(30, 20))
    opt = Adafactor([p])
    p.grad = torch.ones(30, 20)
    opt.step()
    state = opt.state[p]
    assert state["row"].shape == (30,) and state["col"].shape == (20,) and "sq" not in state


def test_update_clipped():
    p = torch.nn.Parameter(torch.zeros(4, 4))
    opt = Adafactor([p])
    p.grad = torch.randn(4, 4) * 1e6
    opt.step()
    # eps2 scale times 1e-2 relative step times RMS <= 1
    assert p.detach().pow(2).mean().sqrt().item() <= 1e-3 * 1e-2 + 1e-12


def test_step_size_schedule():
    group = dict(relative_step=True, warmup_init=False, scale_parameter=True, eps2=1e-3, lr=None)
    assert Adafactor.step_size(group, 1, 0.5) == pytest.approx(0.5 * 1e-2)
    assert Adafactor.step_size(group, 40_000, 0.5) == pytest.approx(0.5 / 200)
    assert Adafactor.step_size(group, 1, 0.0) == pytest.approx(1e-3 * 1e-2)


def test_argument_validation():
    p = [torch.nn.Parameter(torch.ones(2))]
    with pytest.raises(ValueError):
        Adafactor(p, lr=0.1)
    with pytest.raises(ValueError):
        Adafactor(p, relative_step=False)
    Adafactor(p, lr=0.1, relative_step=False)


def test_minimizes_quadratic():
    torch.manual_seed(0)
    target = torch.randn(8, 6)
    p = torch.nn.Parameter(torch.randn(8, 6))
    opt = Adafactor([p])
    start = (p - target).pow(2).mean().item()
    for _ in range(500):
        opt.zero_grad()
        loss = (p - target).pow(2).mean()
        loss.backward()
        opt.step()
    assert loss.item() < 0.05 * start
