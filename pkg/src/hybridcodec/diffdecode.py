"""Reverse-mode differentiable replica of the inter-frame decode chain.

Motion vectors, residual rasters and deblocking masks are frozen constants
on the tape; only pixel values carry gradients. Forward kernels are the
codec's own functions, so with straight-through rounding the forward pass
reproduces the integer decoder up to the final output rounding.
"""

from __future__ import annotations

import numpy as np

from . import toycodec
from .errors import DimensionError, StructureError


class DiffTensor:
    __slots__ = ("values", "grad", "requires_grad", "tape")

    def __init__(self, values, requires_grad=False, tape=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.tape = tape

    @property
    def shape(self):
        return self.values.shape

    def item(self):
        return float(self.values)

    def __repr__(self):
        return f"DiffTensor(shape={self.shape}, requires_grad={self.requires_grad})"


class GradientTape:
    """Records ops in execution order and replays their adjoints backwards."""

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def watch(self, values):
        return DiffTensor(np.array(values, dtype=np.float64), requires_grad=True, tape=self)

    def constant(self, values):
        return DiffTensor(values, requires_grad=False, tape=self)

    def record(self, name, parents, values, backward):
        out = DiffTensor(values, requires_grad=any(p.requires_grad for p in parents), tape=self)
        if out.requires_grad:
            self._nodes.append((name, out, tuple(parents), backward))
        return out

    def backward(self, root, seed=None):
        root.grad = np.ones_like(root.values) if seed is None else np.asarray(seed, dtype=np.float64)
        for _name, out, parents, fn in reversed(self._nodes):
            if out.grad is None:
                continue
            grads = fn(out.grad)
            for p, g in zip(parents, grads):
                if p.requires_grad and g is not None:
                    p.grad = g if p.grad is None else p.grad + g

    def zero_grad(self):
        for _name, out, parents, _fn in self._nodes:
            out.grad = None
            for p in parents:
                p.grad = None


def _tape_of(*tensors):
    for t in tensors:
        if t.tape is not None:
            return t.tape
    return GradientTape()


def d_warp(x, mvs):
    out = toycodec.warp_array(x.values, mvs)
    return _tape_of(x).record("warp", (x,), out, lambda g: (toycodec.warp_adjoint(g, mvs),))


def d_add_residual(x, residual):
    r = np.asarray(residual, dtype=np.float64)
    if r.shape != x.shape:
        raise DimensionError(f"residual {r.shape} does not match {x.shape}")
    return _tape_of(x).record("add", (x,), x.values + r, lambda g: (g,))


def d_deblock(x, mask):
    out = toycodec.deblock_array(x.values, mask)
    return _tape_of(x).record("deblock", (x,), out, lambda g: (toycodec.deblock_adjoint(g, mask),))


def d_clip(x, lo, hi):
    """Clamp; the gradient is zeroed wherever the clamp is active."""
    out = np.clip(x.values, lo, hi)
    inside = (x.values > lo) & (x.values < hi)
    return _tape_of(x).record("clip", (x,), out, lambda g: (np.where(inside, g, 0.0),))


def d_round8(x):
    """Snap to the 8-bit grid; straight-through (identity) backward."""
    return _tape_of(x).record("round", (x,), np.round(x.values * 255.0) / 255.0, lambda g: (g,))


def d_mean2(a, b):
    out = (a.values + b.values) * 0.5
    return _tape_of(a, b).record("mean", (a, b), out, lambda g: (0.5 * g, 0.5 * g))


def d_mse(x, target):
    t = np.asarray(target, dtype=np.float64)
    diff = x.values - t
    n = diff.size
    return _tape_of(x).record("mse", (x,), np.mean(diff * diff), lambda g: (g * 2.0 * diff / n,))


def d_weighted_sum(terms, weights):
    terms = list(terms)
    weights = [float(w) for w in weights]
    total = sum(w * t.values for w, t in zip(weights, terms))
    return _tape_of(*terms).record(
        "sum", tuple(terms), np.asarray(total, dtype=np.float64), lambda g: tuple(w * g for w in weights)
    )


def _target_array(t):
    return t.data if hasattr(t, "data") else np.asarray(t, dtype=np.float64)


def gop_loss(recons, targets, weights=None):
    """Sum over frames of weight * MSE(recon, target)."""
    recons = list(recons)
    targets = list(targets)
    if len(recons) != len(targets):
        raise StructureError("reconstruction and target counts differ")
    if weights is None:
        weights = [1.0] * len(recons)
    terms = [d_mse(r, _target_array(t)) for r, t in zip(recons, targets)]
    return d_weighted_sum(terms, weights)


def reconstruct_gop_diff(i_frame, coded, cfg, ste_rounding=True):
    """Differentiable reconstruction of every frame of ``coded``.

    ``i_frame`` plays the injected reference. With ``ste_rounding`` every
    value the integer decoder rounds before reuse (the keyframe, each
    prediction, each reference) is rounded here too, with identity backward;
    outputs stay unrounded. With it off the chain is purely real-valued.
    Returns the frames in display order, the keyframe first.
    """
    h, w = i_frame.shape
    n = cfg.transform_block
    order = toycodec.coding_order(coded.n_frames, cfg.b_frames_enabled)
    if len(order) != len(coded.pb_units):
        raise StructureError("coded GOP does not match the configured layout")
    snap = d_round8 if ste_rounding else (lambda t: t)
    first = snap(i_frame)
    outputs = {0: first}
    refs_cache = {0: first}
    for unit, (t, ftype, refs) in zip(coded.pb_units, order):
        if unit.frame_type != ftype or unit.display_index != t:
            raise StructureError(f"unit for frame {t} does not match the GOP layout")
        if len(unit.motion) != len(refs):
            raise StructureError(f"frame {t} carries {len(unit.motion)} motion fields")
        warped = [d_warp(refs_cache[r], mv) for r, mv in zip(refs, unit.motion)]
        pred = warped[0] if len(warped) == 1 else d_mean2(warped[0], warped[1])
        pred = snap(pred)
        pre = d_clip(d_add_residual(pred, unit.residual.raster(h, w, n)), 0.0, 1.0)
        out = d_deblock(pre, unit.mask)
        outputs[t] = out
        refs_cache[t] = snap(out) if ftype == "P" else out
    return [outputs[t] for t in range(coded.n_frames)]
