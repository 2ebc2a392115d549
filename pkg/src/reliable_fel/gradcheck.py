"""Central finite-difference checks for the autograd engine."""

from __future__ import annotations

import numpy as np

from .autograd import backward


def numerical_gradient(fn, tensor, step=1e-5):
    """d fn() / d tensor by central differences; ``fn`` returns a scalar Tensor."""
    tensor.data = np.ascontiguousarray(tensor.data)
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn().item()
        flat[i] = orig - step
        down = fn().item()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic, numeric):
    """||a - n|| / max(||a||, ||n||), with a floor so all-zero pairs compare as 0."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-10)
    return float(diff / scale)


def gradient_errors(fn, params, step=1e-5):
    """Relative analytic-vs-numeric error for each tensor in ``params``."""
    for p in params:
        p.grad = None
    grads = backward(fn())
    errors = {}
    for i, p in enumerate(params):
        analytic = grads.get(p, np.zeros_like(p.data))
        key = p.name or f"param{i}"
        errors[key] = relative_error(analytic, numerical_gradient(fn, p, step))
    return errors


def grouped_gradient_errors(fn, groups, step=1e-5):
    """Relative error per named group of tensors, measured on their concatenated gradients.

    Per-tensor errors are dominated by rounding when a tensor's gradient is
    near zero (a bias feeding batch normalization, attention logits at
    near-uniform attention); pooling a group's entries keeps the measure
    about the group as a whole.
    """
    params = [p for members in groups.values() for p in members]
    for p in params:
        p.grad = None
    grads = backward(fn())
    errors = {}
    for name, members in groups.items():
        analytic = [grads.get(p, np.zeros_like(p.data)).ravel() for p in members]
        numeric = [numerical_gradient(fn, p, step).ravel() for p in members]
        errors[name] = relative_error(np.concatenate(analytic), np.concatenate(numeric))
    return errors
