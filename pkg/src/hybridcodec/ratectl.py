"""Per-GOP bitrate allocation: pick the P/B qp that fills the byte budget."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .toycodec import encode_gop


@dataclass(frozen=True)
class RateBudget:
    target_bps: float
    fps: float = 30.0
    gop_length: int = 8

    def __post_init__(self):
        if self.target_bps <= 0 or self.fps <= 0 or self.gop_length < 1:
            raise ValueError("budget needs positive bitrate, fps and GOP length")

    @property
    def gop_bytes(self):
        return self.target_bps * self.gop_length / (8.0 * self.fps)

    def bytes_for(self, n_frames):
        """Byte budget of a GOP holding ``n_frames`` frames (short final GOPs)."""
        return self.target_bps * n_frames / (8.0 * self.fps)

    @classmethod
    def from_gop_bytes(cls, nbytes, fps=30.0, gop_length=8):
        return cls(nbytes * 8.0 * fps / gop_length, fps, gop_length)


@dataclass(frozen=True)
class AllocationResult:
    qp: int
    latent_bytes: int
    legacy_bytes: int
    total_bytes: int
    within_budget: bool
    probes: int
    budget_bytes: float = math.inf
    fallback: bool = False


def size_probe(gop, reference, qp, cfg):
    """Legacy-track bytes of ``gop`` coded at ``qp`` against ``reference``."""
    return encode_gop(gop, reference, qp, cfg, keep_i_unit=False).legacy_size


def _budget_bytes(budget, n_frames):
    if isinstance(budget, RateBudget):
        return budget.bytes_for(n_frames)
    if budget <= 0:
        raise ValueError("budget must be positive")
    return float(budget)


def allocate(gop, reference, latent_bytes, budget, cfg, encoder=encode_gop):
    """Smallest qp whose legacy bytes plus ``latent_bytes`` fit the budget.

    qp 0 is probed first and taken if it fits. Otherwise a binary search
    over [1, qp_max] runs on the assumption that size falls with qp; at most
    ``ceil(log2(qp_max + 1)) + 1`` probes are spent. If the probes contradict
    monotonicity, a linear sweep below the search result looks for a smaller
    feasible qp. An unreachable budget yields qp_max with ``within_budget``
    cleared.
    """
    if latent_bytes < 0:
        raise ValueError("latent_bytes must be >= 0")
    gop = list(gop)
    limit = _budget_bytes(budget, len(gop))
    cache = {}

    def probe(qp):
        if qp not in cache:
            cache[qp] = encoder(gop, reference, qp, cfg, keep_i_unit=False)
        return cache[qp]

    def fits(qp):
        return latent_bytes + probe(qp).legacy_size <= limit

    if fits(0):
        chosen = 0
    else:
        lo, hi = 1, cfg.qp_max + 1  # hi == qp_max + 1 means "nothing fits"
        while lo < hi:
            mid = (lo + hi) // 2
            if fits(mid):
                hi = mid
            else:
                lo = mid + 1
        chosen = min(hi, cfg.qp_max)

    fallback = False
    # qp 0 was settled by its own probe; only the searched range matters here
    probed = sorted(q for q in cache if q > 0)
    sizes = [cache[q].legacy_size for q in probed]
    if any(later > earlier for earlier, later in zip(sizes, sizes[1:])):
        fallback = True
        for qp in range(chosen - 1, 0, -1):
            if fits(qp):
                chosen = qp
        if not fits(chosen):
            chosen = cfg.qp_max

    coded = probe(chosen)
    legacy = coded.legacy_size
    total = latent_bytes + legacy
    result = AllocationResult(
        qp=chosen,
        latent_bytes=latent_bytes,
        legacy_bytes=legacy,
        total_bytes=total,
        within_budget=total <= limit,
        probes=len(cache),
        budget_bytes=limit,
        fallback=fallback,
    )
    return coded, result
