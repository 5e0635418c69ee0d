"""A fixed, seeded generator that stands in for a pretrained image prior.

``G(z) = sigmoid(W2 @ tanh(W1 @ z + b1) + b2)`` produces a half-resolution
raster which a bilinear 2x upsampler lifts to the target size. Nothing is
trained: the weights are a pure function of the seed. ``W2`` is a random
orthogonal mix of the lowest-frequency 2-D DCT basis images, so generated
frames are spatially smooth.

Upsampling uses the align-corners convention: output sample ``i`` of ``N``
reads input position ``i * (n - 1) / (N - 1)`` of ``n``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .diffdecode import DiffTensor, GradientTape, d_clip, d_mse, _tape_of
from .errors import DimensionError, FormatError, OptimizationError, TruncationError
from .frameio import Frame

LATENT_HEADER = struct.Struct("<HQHHf")
_QMAX = 32767


@dataclass(frozen=True)
class GeneratorSpec:
    width: int
    height: int
    seed: int = 42
    d: int = 1024
    hidden: int = 256
    two_stage: bool = True
    output_gain: float = 3.0

    def __post_init__(self):
        if self.two_stage and (self.width % 2 or self.height % 2):
            raise DimensionError("two-stage generation needs even frame dimensions")
        lw, lh = self.lowres_dims
        if self.hidden > lw * lh:
            raise ValueError("hidden width exceeds the number of low-res samples")

    @property
    def lowres_dims(self):
        """(width, height) of the raster the generator itself produces."""
        if self.two_stage:
            return self.width // 2, self.height // 2
        return self.width, self.height

    def weights(self):
        return _generator_weights(self)


@dataclass(frozen=True)
class GeneratorWeights:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


def low_frequency_basis(h, w, count):
    """The ``count`` lowest-frequency orthonormal 2-D DCT-II basis images, as columns."""
    freqs = sorted(((u, v) for u in range(h) for v in range(w)), key=lambda p: (p[0] ** 2 + p[1] ** 2, p))
    freqs = freqs[:count]

    def axis(n, k):
        x = np.arange(n)
        c = np.cos(np.pi * (2 * x + 1) * k / (2 * n))
        return c * (math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n))

    cols = [np.outer(axis(h, u), axis(w, v)).reshape(-1) for u, v in freqs]
    return np.stack(cols, axis=1)


@lru_cache(maxsize=16)
def _generator_weights(spec):
    rng = np.random.default_rng(spec.seed)
    lw, lh = spec.lowres_dims
    w1 = rng.standard_normal((spec.hidden, spec.d)) / math.sqrt(spec.d)
    b1 = 0.1 * rng.standard_normal(spec.hidden)
    q, r = np.linalg.qr(rng.standard_normal((spec.hidden, spec.hidden)))
    q *= np.sign(np.diag(r))
    gain = spec.output_gain * math.sqrt(lw * lh / spec.hidden)
    w2 = gain * (low_frequency_basis(lh, lw, spec.hidden) @ q)
    b2 = np.zeros(lw * lh)
    for arr in (w1, b1, w2, b2):
        arr.setflags(write=False)
    return GeneratorWeights(w1, b1, w2, b2)


@dataclass(frozen=True, eq=False)
class LatentCode:
    z: np.ndarray
    generator_seed: int = 42
    width: int = 0
    height: int = 0

    def __post_init__(self):
        z = np.array(self.z, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(z)):
            raise ValueError("latent contains non-finite values")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def d(self):
        return self.z.size

    @classmethod
    def zeros(cls, spec):
        return cls(np.zeros(spec.d), spec.seed, spec.width, spec.height)

    def __eq__(self, other):
        return (
            isinstance(other, LatentCode)
            and (self.generator_seed, self.width, self.height)
            == (other.generator_seed, other.width, other.height)
            and np.array_equal(self.z, other.z)
        )


def _latent_values(z):
    return z.z if isinstance(z, LatentCode) else np.asarray(z, dtype=np.float64)


def generate_lowres(z, spec):
    """Low-resolution generator output; ``z`` may be a DiffTensor to track gradients."""
    if not isinstance(z, DiffTensor):
        z = DiffTensor(_latent_values(z))
    if z.values.shape != (spec.d,):
        raise DimensionError(f"latent has shape {z.values.shape}, generator expects ({spec.d},)")
    wt = spec.weights()
    lw, lh = spec.lowres_dims
    hid = np.tanh(wt.w1 @ z.values + wt.b1)
    img = 1.0 / (1.0 + np.exp(-(wt.w2 @ hid + wt.b2)))

    def backward(g):
        gu = g.reshape(-1) * img * (1.0 - img)
        gh = (wt.w2.T @ gu) * (1.0 - hid * hid)
        return (wt.w1.T @ gh,)

    return _tape_of(z).record("generator", (z,), img.reshape(lh, lw), backward)


@lru_cache(maxsize=32)
def upsample_matrix(n_in, n_out):
    """(n_out, n_in) align-corners linear interpolation matrix."""
    m = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    m[np.arange(n_out), lo] = 1.0 - frac
    m[np.arange(n_out), lo + 1] += frac
    m.setflags(write=False)
    return m


def upsample(x, factor=2):
    """Bilinear upsampling, linear in the input with an exact adjoint."""
    if not isinstance(x, DiffTensor):
        x = DiffTensor(x)
    h, w = x.shape
    uh = upsample_matrix(h, h * factor)
    uw = upsample_matrix(w, w * factor)
    out = uh @ x.values @ uw.T
    return _tape_of(x).record("upsample", (x,), out, lambda g: (uh.T @ g @ uw,))


def generate_iframe(z, spec):
    """Full-resolution keyframe in real form, as a DiffTensor on ``z``'s tape."""
    img = generate_lowres(z, spec)
    if spec.two_stage:
        img = upsample(img)
    return d_clip(img, 0.0, 1.0)


def render_keyframe(latent, spec):
    """The 8-bit keyframe a decoder reconstructs from ``latent``."""
    return Frame(generate_iframe(latent, spec).values).quantized()


def spec_for(latent, **kwargs):
    return GeneratorSpec(width=latent.width, height=latent.height, seed=latent.generator_seed, d=latent.d, **kwargs)


# -- optimisation -----------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    iters: int = 800
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class OptimizationTrace:
    losses: list = field(default_factory=list)
    best_loss: float = math.inf
    best_iter: int = -1
    restarts: int = 0

    def running_min(self):
        return list(np.minimum.accumulate(self.losses)) if self.losses else []


def optimize_latent(z0, objective, opt, guard=10.0):
    """Adam on ``objective(tape, z) -> (loss tensor, tracked loss)``; best-seen z wins.

    ``tracked loss`` is the value used for best-seen selection and the
    divergence guard; it may differ from the differentiated loss (e.g. when
    the latter skips a final rounding).
    """
    lr = opt.lr
    for attempt in range(2):
        trace = OptimizationTrace(restarts=attempt)
        adam = Adam(lr, opt.beta1, opt.beta2, opt.eps)
        z = np.array(z0, dtype=np.float64)
        best_z = z.copy()
        initial = None
        diverged = False
        for it in range(opt.iters + 1):
            tape = GradientTape()
            zt = tape.watch(z)
            loss, tracked = objective(tape, zt)
            if initial is None:
                initial = tracked
            if not math.isfinite(tracked) or tracked > guard * max(initial, 1e-12):
                diverged = True
                break
            trace.losses.append(tracked)
            if tracked < trace.best_loss:
                trace.best_loss, trace.best_iter, best_z = tracked, it, z.copy()
            if it == opt.iters:
                break
            tape.backward(loss)
            z = adam.step(z, zt.grad)
        if not diverged:
            return best_z, trace
        lr *= 0.5
    raise OptimizationError("latent optimisation diverged twice")


def invert(target, spec, opt=None, return_trace=False):
    """Fit z (starting from zero) so the generated keyframe matches ``target``."""
    opt = opt or OptimizerConfig()
    if target.shape != (spec.height, spec.width):
        raise DimensionError(
            f"target is {target.width}x{target.height}, generator makes {spec.width}x{spec.height}"
        )
    tgt = target.data

    def objective(tape, zt):
        loss = d_mse(generate_iframe(zt, spec), tgt)
        return loss, loss.item()

    z, trace = optimize_latent(np.zeros(spec.d), objective, opt)
    latent = LatentCode(z, spec.seed, spec.width, spec.height)
    return (latent, trace) if return_trace else latent


# -- neural-track serialisation ----------------------------------------------------


def serialize_latent(latent):
    """Header (u16 d, u64 seed, u16 w, u16 h, f32 scale) + d int16 samples."""
    z = latent.z
    peak = float(np.max(np.abs(z))) if z.size else 0.0
    scale = np.float32(peak)
    # bump only for a real shortfall, not float64 noise from a previous decode
    if float(scale) < peak * (1.0 - 1e-12):
        scale = np.nextafter(scale, np.float32(np.inf))
    if scale > 0:
        q = np.clip(np.round(z / float(scale) * _QMAX), -_QMAX, _QMAX)
    else:
        q = np.zeros_like(z)
    if not q.any():
        scale = np.float32(0.0)  # canonical form for an all-zero grid
    header = LATENT_HEADER.pack(z.size, latent.generator_seed, latent.width, latent.height, float(scale))
    return header + q.astype("<i2").tobytes()


def deserialize_latent(data):
    data = bytes(data)
    if len(data) < LATENT_HEADER.size:
        raise TruncationError(f"latent header truncated at byte {len(data)}", offset=len(data))
    d, seed, w, h, scale = LATENT_HEADER.unpack_from(data)
    need = LATENT_HEADER.size + 2 * d
    if len(data) < need:
        raise TruncationError(f"latent payload truncated at byte {len(data)}", offset=len(data))
    if len(data) > need:
        raise FormatError(f"latent record has {len(data) - need} trailing bytes")
    if not math.isfinite(scale) or scale < 0:
        raise FormatError("latent scale is not a finite non-negative number")
    q = np.frombuffer(data, dtype="<i2", count=d, offset=LATENT_HEADER.size).astype(np.float64)
    return LatentCode(q * float(scale) / _QMAX, seed, w, h)


def quantize_latent(latent):
    """The latent exactly as a decoder will see it after the neural track."""
    return deserialize_latent(serialize_latent(latent))
