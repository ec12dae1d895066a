import numpy as np
import pytest

from gnnpurify.engine import ModelParams, loss_and_grads


def flatten_params(p: ModelParams) -> np.ndarray:
    parts = [w.ravel() for w in p.layer_weights]
    parts += [b.ravel() for b in p.layer_biases]
    parts += [p.cls_weight.ravel(), p.cls_bias.ravel()]
    return np.concatenate(parts)


def unflatten_params(vec: np.ndarray, like: ModelParams) -> ModelParams:
    k = 0
    weights = []
    for w in like.layer_weights:
        weights.append(vec[k:k + w.size].reshape(w.shape))
        k += w.size
    biases = []
    for b in like.layer_biases:
        biases.append(vec[k:k + b.size].reshape(b.shape))
        k += b.size
    cw = vec[k:k + like.cls_weight.size].reshape(like.cls_weight.shape)
    k += like.cls_weight.size
    cb = vec[k:k + like.cls_bias.size].reshape(like.cls_bias.shape)
    return ModelParams(tuple(weights), tuple(biases), cw, cb)


def finite_difference_max_rel_err(params, config, batch, spec, step=1e-4):
    """Central-difference check of loss_and_grads over every parameter."""
    _, grads = loss_and_grads(params, config, batch, spec)
    analytic = flatten_params(grads)
    x0 = flatten_params(params)
    numeric = np.zeros_like(x0)
    for i in range(len(x0)):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += step
        xm[i] -= step
        lp, _ = loss_and_grads(unflatten_params(xp, params), config, batch, spec)
        lm, _ = loss_and_grads(unflatten_params(xm, params), config, batch, spec)
        numeric[i] = (lp - lm) / (2 * step)
    mask = (np.abs(numeric) > 1e-10) | (np.abs(analytic) > 1e-10)
    if not mask.any():
        return 0.0
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
    return float(rel[mask].max())
