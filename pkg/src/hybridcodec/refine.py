"""Joint refinement of the keyframe latent against the whole GOP.

Motion, residuals and deblocking masks from the rate-control pass stay
frozen; only z moves. The tracked objective is the loss of what a decoder
will actually output, so best-seen selection can never make the GOP worse.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import genprior
from .diffdecode import gop_loss, reconstruct_gop_diff
from .errors import StructureError
from .frameio import mse, psnr_from_mse
from .genprior import GeneratorSpec, LatentCode, OptimizerConfig
from .ratectl import allocate
from .toycodec import CodecConfig, decode_gop


@dataclass(frozen=True)
class RefineConfig:
    iters: int = 400
    lr: float = 5e-3
    i_frame_weight: float = 1.0
    pb_weight: float = 1.0
    outer_passes: int = 1
    ste_rounding: bool = True

    def __post_init__(self):
        if self.iters < 0 or self.outer_passes < 1:
            raise ValueError("iters must be >= 0 and outer_passes >= 1")
        if self.i_frame_weight < 0 or self.pb_weight < 0:
            raise ValueError("loss weights must be non-negative")

    def weights(self, n_frames):
        return [self.i_frame_weight] + [self.pb_weight] * (n_frames - 1)


@dataclass
class RefineReport:
    loss_trace: list = field(default_factory=list)
    psnr_before: list = field(default_factory=list)
    psnr_after: list = field(default_factory=list)
    loss_before: float = 0.0
    loss_after: float = 0.0
    z: np.ndarray | None = None
    wall_time: float = 0.0
    best_iter: int = 0


def decoded_gop(latent, coded, spec, cfg):
    """Frames a client decodes from (latent, legacy track)."""
    return decode_gop(coded, genprior.render_keyframe(latent, spec), cfg)


def _decoded_loss(frames, gop, weights):
    errors = [mse(a, b) for a, b in zip(frames, gop)]
    return float(sum(w * e for w, e in zip(weights, errors))), errors


def refine_latent(z0, gop, coded, cfg=None, rcfg=None, spec=None):
    cfg = cfg or CodecConfig()
    rcfg = rcfg or RefineConfig()
    gop = list(gop)
    spec = spec or genprior.spec_for(z0)
    if coded.n_frames != len(gop):
        raise StructureError(f"coded GOP has {coded.n_frames} frames, source has {len(gop)}")
    weights = rcfg.weights(len(gop))
    targets = [f.data for f in gop]
    start = time.perf_counter()

    before_frames = decoded_gop(z0, coded, spec, cfg)
    loss_before, err_before = _decoded_loss(before_frames, gop, weights)

    def objective(tape, zt):
        recons = reconstruct_gop_diff(genprior.generate_iframe(zt, spec), coded, cfg, rcfg.ste_rounding)
        loss = gop_loss(recons, targets, weights)
        tracked = 0.0
        for w, r, t in zip(weights, recons, targets):
            d = np.round(r.values * 255.0) / 255.0 - t
            tracked += w * float(np.mean(d * d))
        return loss, tracked

    opt = OptimizerConfig(iters=rcfg.iters, lr=rcfg.lr)
    z_best, trace = genprior.optimize_latent(z0.z, objective, opt)
    candidate = genprior.quantize_latent(LatentCode(z_best, z0.generator_seed, z0.width, z0.height))
    after_frames = decoded_gop(candidate, coded, spec, cfg)
    loss_after, err_after = _decoded_loss(after_frames, gop, weights)
    if loss_after > loss_before:
        # latent quantisation undid the gain; keep the starting point
        candidate, loss_after, err_after = z0, loss_before, err_before

    report = RefineReport(
        loss_trace=trace.losses,
        psnr_before=[psnr_from_mse(e) for e in err_before],
        psnr_after=[psnr_from_mse(e) for e in err_after],
        loss_before=loss_before,
        loss_after=loss_after,
        z=candidate.z,
        wall_time=time.perf_counter() - start,
        best_iter=trace.best_iter,
    )
    return candidate, report


@dataclass(frozen=True)
class TranscodeResult:
    latent: LatentCode
    coded: object
    report: RefineReport | None
    allocation: object
    initial_latent: LatentCode


def transcode_gop(gop, budget, cfg=None, spec=None, opt=None, rcfg=None, refine=True):
    """Invert the keyframe, allocate the legacy track, then refine z.

    Returns a :class:`TranscodeResult`; ``report`` is None when refinement
    is disabled.
    """
    gop = list(gop)
    cfg = cfg or CodecConfig()
    rcfg = rcfg or RefineConfig()
    spec = spec or GeneratorSpec(gop[0].width, gop[0].height)
    latent0 = genprior.quantize_latent(genprior.invert(gop[0], spec, opt))
    latent_bytes = len(genprior.serialize_latent(latent0))
    reference = genprior.render_keyframe(latent0, spec)
    coded, alloc = allocate(gop, reference, latent_bytes, budget, cfg)
    if not refine:
        return TranscodeResult(latent0, coded, None, alloc, latent0)
    latent, report = refine_latent(latent0, gop, coded, cfg, rcfg, spec)
    for _ in range(rcfg.outer_passes - 1):
        reference = genprior.render_keyframe(latent, spec)
        coded, alloc = allocate(gop, reference, latent_bytes, budget, cfg)
        latent, report = refine_latent(latent, gop, coded, cfg, rcfg, spec)
    return TranscodeResult(latent, coded, report, alloc, latent0)
