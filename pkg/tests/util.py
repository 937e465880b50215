"""Shared test helpers: finite-difference gradients and relative errors."""

import numpy as np

from curioplan.nets import gaussian_nll_loss, mse_loss

LOSSES = {"mse": mse_loss, "gaussian-nll": gaussian_nll_loss}


def numeric_param_grads(net, x, targets, loss_name, h=1e-4):
    """Central finite differences of the mean batch loss w.r.t. every parameter."""
    loss_fn = LOSSES[loss_name]
    grads = []
    for p in net.parameters():
        g = np.zeros_like(p)
        flat, gf = p.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = loss_fn(np.atleast_2d(net.forward(x)), targets)
            flat[i] = orig - h
            down, _ = loss_fn(np.atleast_2d(net.forward(x)), targets)
            flat[i] = orig
            gf[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def analytic_param_grads(net, x, targets, loss_name):
    loss_fn = LOSSES[loss_name]
    pred, cache = net.forward_cached(x)
    _, grad_pred = loss_fn(pred, targets)
    grads, _ = net.backward(cache, grad_pred)
    return grads


def relative_grad_error(analytic, numeric):
    num = np.sqrt(sum(float(np.sum((a - n) ** 2)) for a, n in zip(analytic, numeric)))
    den = max(
        np.sqrt(sum(float(np.sum(a**2)) for a in analytic)),
        np.sqrt(sum(float(np.sum(n**2)) for n in numeric)),
        1e-12,
    )
    return num / den
