"""Sequence losses on probability tensors.

Both losses average over the unmasked time steps of each sequence and then
over the batch, so a (T, W) input and a (1, T, W) input give the same value.
"""
from __future__ import annotations

import numpy as np

from ..errors import ParameterError
from .tensor import Tensor, as_tensor, make_op

LOG_FLOOR = 1e-12


def _step_weights(lead_shape: tuple[int, ...], mask) -> np.ndarray:
    """Per-step weights: 1/n_unmasked inside a sequence, divided by batch size."""
    if mask is None:
        m = np.ones(lead_shape)
    else:
        m = np.asarray(mask, dtype=np.float64)
        if m.shape != lead_shape:
            raise ParameterError(f"mask shape {m.shape} does not match {lead_shape}")
    m2 = m.reshape(-1, lead_shape[-1])
    counts = np.maximum(m2.sum(axis=1, keepdims=True), 1.0)
    return (m2 / counts / m2.shape[0]).reshape(lead_shape)


def _target_indices(target, probs_shape) -> np.ndarray:
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    if target.shape == probs_shape:
        return target.argmax(axis=-1)
    if target.shape == probs_shape[:-1]:
        return target.astype(np.int64)
    raise ParameterError(f"target shape {target.shape} incompatible with probs {probs_shape}")


def cross_entropy(target, probs: Tensor, mask=None) -> Tensor:
    """Mean negative log-probability of the target token per unmasked step.

    ``target`` is either one-hot with the same shape as ``probs`` or an
    integer index array with the trailing class axis dropped.
    """
    probs = as_tensor(probs)
    if probs.ndim < 2:
        raise ParameterError("probs must have a time and a class axis")
    idx = _target_indices(target, probs.shape)
    if idx.size and (idx.min() < 0 or idx.max() >= probs.shape[-1]):
        raise ParameterError("target index outside the class axis")
    w = _step_weights(probs.shape[:-1], mask)
    p = np.take_along_axis(probs.data, idx[..., None], axis=-1)[..., 0]
    safe = np.maximum(p, LOG_FLOOR)
    value = -(w * np.log(safe)).sum()

    def _bw(g):
        coeff = np.where(p > LOG_FLOOR, -w / safe, 0.0) * g[0]
        full = np.zeros_like(probs.data)
        np.put_along_axis(full, idx[..., None], coeff[..., None], axis=-1)
        return (full,)

    return make_op(np.array([value]), (probs,), _bw)


def kl_divergence(p_teacher, q_student, mask=None) -> Tensor:
    """KL(p || q) per unmasked step, teacher distribution first.

    Probabilities are clamped at 1e-12 inside both logs, so identical inputs
    give exactly zero and zero-probability teacher entries contribute nothing.
    """
    p_t, q_t = as_tensor(p_teacher), as_tensor(q_student)
    if p_t.shape != q_t.shape:
        raise ParameterError(f"KL shapes differ: {p_t.shape} vs {q_t.shape}")
    if p_t.ndim < 2:
        raise ParameterError("distributions must have a time and a class axis")
    p, q = p_t.data, q_t.data
    w = _step_weights(p.shape[:-1], mask)[..., None]
    log_p = np.log(np.maximum(p, LOG_FLOOR))
    log_q = np.log(np.maximum(q, LOG_FLOOR))
    value = (w * p * (log_p - log_q)).sum()

    def _bw(g):
        s = g[0]
        gp = gq = None
        if p_t.requires_grad:
            gp = w * (log_p - log_q + (p > LOG_FLOOR)) * s
        if q_t.requires_grad:
            gq = np.where(q > LOG_FLOOR, -w * p / np.maximum(q, LOG_FLOOR), 0.0) * s
        return gp, gq

    return make_op(np.array([value]), (p_t, q_t), _bw)
