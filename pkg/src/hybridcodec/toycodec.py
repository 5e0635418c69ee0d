"""A small block-based predictive codec.

Motion vectors are stored in half-pel units and describe how content moved
from the reference to the target: a block with ``mv = (dx, dy)`` is predicted
from reference samples at ``(x - dx/2, y - dy/2)``. Fractional positions are
bilinear, positions outside the frame clamp to the nearest edge.

The reconstruction of one inter frame is::

    pred = quantize8(warp(ref))              # or mean of two warps for B
    pre  = clip(pred + dequant(coeffs), 0, 1)
    out  = deblock(pre, mask)
    recon = quantize8(out)

Residuals and transform coefficients live in 8-bit level units; pixels in
real units. Encoder and decoder share the helpers below, which is what makes
the closed loop bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .bitstream import BitReader, BitWriter
from .errors import DimensionError, EncodeError, FormatError, StructureError, TruncationError
from .frameio import Frame, quantize8

UNIT_HEADER = struct.Struct("<BBHI")
FRAME_TYPES = {0: "I", 1: "P", 2: "B"}
TYPE_CODES = {v: k for k, v in FRAME_TYPES.items()}
_INT16_MAX = 32767


@dataclass(frozen=True)
class CodecConfig:
    motion_block: int = 16
    transform_block: int = 8
    search_range: int = 8
    qp_max: int = 51
    gop_length: int = 8
    b_frames_enabled: bool = False
    deblock_threshold: float = 0.08

    def __post_init__(self):
        if self.transform_block < 4 or self.motion_block % self.transform_block:
            raise ValueError("transform block must be >= 4 and divide the motion block")
        if not 0 <= self.qp_max <= 255:
            raise ValueError("qp_max must fit in a byte")
        if self.gop_length < 1:
            raise ValueError("gop_length must be >= 1")
        if self.search_range < 0:
            raise ValueError("search_range must be >= 0")

    def check_dims(self, height, width):
        if height % self.motion_block or width % self.motion_block:
            raise DimensionError(
                f"{width}x{height} is not a multiple of the {self.motion_block}-pixel block grid"
            )

    def check_qp(self, qp):
        if not 0 <= qp <= self.qp_max:
            raise ValueError(f"qp {qp} outside [0, {self.qp_max}]")


def qstep(qp):
    """Quantiser step; doubles every 6 qp, equals 1 at qp 4."""
    return 2.0 ** ((qp - 4) / 6.0)


# -- motion ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MotionField:
    mv: np.ndarray  # (block_rows, block_cols, 2) int, (dx, dy) in half-pel units
    block_size: int = 16
    _plans: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        arr = np.asarray(self.mv, dtype=np.int64)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise ValueError("motion field must have shape (rows, cols, 2)")
        arr.setflags(write=False)
        object.__setattr__(self, "mv", arr)

    @classmethod
    def zeros(cls, height, width, block_size=16):
        return cls(np.zeros((height // block_size, width // block_size, 2), np.int64), block_size)

    def __eq__(self, other):
        return (
            isinstance(other, MotionField)
            and self.block_size == other.block_size
            and np.array_equal(self.mv, other.mv)
        )

    def per_pixel(self):
        b = self.block_size
        return np.repeat(np.repeat(self.mv, b, axis=0), b, axis=1)

    def plan(self, height, width):
        """Flat gather indices and bilinear weights, shape (4, h*w) each."""
        key = (height, width)
        if key not in self._plans:
            self._plans[key] = _sampling_plan(self, height, width)
        return self._plans[key]


def _sampling_plan(mvs, height, width):
    rows, cols = mvs.mv.shape[:2]
    if rows * mvs.block_size != height or cols * mvs.block_size != width:
        raise DimensionError("motion field grid does not cover the frame")
    pix = mvs.per_pixel()
    yy, xx = np.mgrid[0:height, 0:width]
    sx2 = 2 * xx - pix[..., 0]
    sy2 = 2 * yy - pix[..., 1]
    x0, y0 = sx2 >> 1, sy2 >> 1
    fx, fy = (sx2 & 1) * 0.5, (sy2 & 1) * 0.5
    x1 = np.clip(x0 + 1, 0, width - 1)
    y1 = np.clip(y0 + 1, 0, height - 1)
    x0 = np.clip(x0, 0, width - 1)
    y0 = np.clip(y0, 0, height - 1)
    idx = np.stack([y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1])
    weights = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy])
    return idx.reshape(4, -1), weights.reshape(4, -1)


def warp_array(reference, mvs):
    h, w = reference.shape
    idx, wts = mvs.plan(h, w)
    flat = np.asarray(reference, dtype=np.float64).reshape(-1)
    out = wts[0] * flat[idx[0]] + wts[1] * flat[idx[1]] + wts[2] * flat[idx[2]] + wts[3] * flat[idx[3]]
    return out.reshape(h, w)


def warp_adjoint(grad, mvs):
    """Transpose of :func:`warp_array`: scatter ``grad`` back to the sources."""
    h, w = grad.shape
    idx, wts = mvs.plan(h, w)
    g = grad.reshape(-1)
    out = np.zeros(h * w)
    for k in range(4):
        out += np.bincount(idx[k], weights=wts[k] * g, minlength=h * w)
    return out.reshape(h, w)


def warp(reference, mvs):
    """Motion-compensated prediction in real arithmetic (no rounding)."""
    return Frame(warp_array(reference.data, mvs))


def _best_index(sad, dx, dy):
    # ties: smallest |dx|+|dy|, then smallest dy, then smallest dx
    order = np.lexsort((dx, dy, np.abs(dx) + np.abs(dy), sad))
    return order[0]


def motion_estimate(target, reference, cfg):
    """Full integer search followed by a half-pel refinement, per block."""
    if target.shape != reference.shape:
        raise DimensionError("target and reference differ in size")
    h, w = target.shape
    cfg.check_dims(h, w)
    b, r = cfg.motion_block, cfg.search_range
    tgt = target.pixels.astype(np.int64)
    ref = reference.pixels.astype(np.int64)
    pad = np.pad(ref, r, mode="edge")
    offs = np.arange(-r, r + 1)
    # window (i, j) starts at offset (i - r, j - r), i.e. motion (r - j, r - i)
    cand_dx = np.tile(-offs, 2 * r + 1)
    cand_dy = np.repeat(-offs, 2 * r + 1)
    yy, xx = np.mgrid[0:b, 0:b]
    mv = np.zeros((h // b, w // b, 2), np.int64)
    for by in range(h // b):
        for bx in range(w // b):
            y, x = by * b, bx * b
            block = tgt[y:y + b, x:x + b]
            region = pad[y:y + b + 2 * r, x:x + b + 2 * r]
            wins = sliding_window_view(region, (b, b))
            sad = np.abs(wins - block).sum(axis=(2, 3)).reshape(-1)
            best = _best_index(sad, cand_dx, cand_dy)
            cx, cy = 2 * cand_dx[best], 2 * cand_dy[best]
            # half-pel refinement, compared in 4x level units so ties are exact
            hx = np.array([cx + ox for oy in (-1, 0, 1) for ox in (-1, 0, 1)])
            hy = np.array([cy + oy for oy in (-1, 0, 1) for ox in (-1, 0, 1)])
            ok = (np.abs(hx) <= 2 * r) & (np.abs(hy) <= 2 * r)
            hx, hy = hx[ok], hy[ok]
            sads = np.empty(len(hx), np.int64)
            for k in range(len(hx)):
                sx2 = 2 * (x + xx) - hx[k]
                sy2 = 2 * (y + yy) - hy[k]
                x0, y0 = sx2 >> 1, sy2 >> 1
                fx, fy = sx2 & 1, sy2 & 1
                x1 = np.clip(x0 + 1, 0, w - 1)
                y1 = np.clip(y0 + 1, 0, h - 1)
                x0 = np.clip(x0, 0, w - 1)
                y0 = np.clip(y0, 0, h - 1)
                pred4 = (
                    (2 - fx) * (2 - fy) * ref[y0, x0]
                    + fx * (2 - fy) * ref[y0, x1]
                    + (2 - fx) * fy * ref[y1, x0]
                    + fx * fy * ref[y1, x1]
                )
                sads[k] = np.abs(pred4 - 4 * block).sum()
            k = _best_index(sads, hx, hy)
            mv[by, bx] = (hx[k], hy[k])
    return MotionField(mv, b)


# -- transform ------------------------------------------------------------------


@lru_cache(maxsize=None)
def dct_matrix(n):
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    c = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    c[0, :] = np.sqrt(1.0 / n)
    return c


@lru_cache(maxsize=None)
def zigzag_order(n):
    """Raster indices of an n x n block in zigzag scan order."""
    order = sorted(
        ((y, x) for y in range(n) for x in range(n)),
        key=lambda p: (p[0] + p[1], p[1] if (p[0] + p[1]) % 2 == 0 else p[0]),
    )
    arr = np.array([y * n + x for y, x in order], dtype=np.int64)
    arr.setflags(write=False)
    return arr


def _check_int16(coeffs):
    if coeffs.size and np.abs(coeffs).max() > _INT16_MAX:
        raise EncodeError("transform coefficient exceeds 16-bit range")


def transform_blocks(blocks, qp):
    """(nb, n, n) residual levels -> (nb, n*n) integer symbols."""
    blocks = np.asarray(blocks, dtype=np.float64)
    nb, n = blocks.shape[0], blocks.shape[1]
    if qp == 0:
        ints = np.round(blocks)
        if not np.array_equal(ints, blocks):
            raise EncodeError("lossless residuals must be integers")
        out = ints.astype(np.int64).reshape(nb, n * n)
    else:
        c = dct_matrix(n)
        coef = c @ blocks @ c.T
        out = np.round(coef.reshape(nb, n * n)[:, zigzag_order(n)] / qstep(qp)).astype(np.int64)
    _check_int16(out)
    return out


def inverse_blocks(symbols, qp, n):
    symbols = np.asarray(symbols, dtype=np.int64)
    nb = symbols.shape[0]
    if qp == 0:
        return symbols.reshape(nb, n, n).astype(np.float64)
    coef = np.zeros((nb, n * n))
    coef[:, zigzag_order(n)] = symbols * qstep(qp)
    c = dct_matrix(n)
    return c.T @ coef.reshape(nb, n, n) @ c


def transform_quant(residual, qp):
    """One n x n block of residual levels -> its coded symbols."""
    block = np.asarray(residual, dtype=np.float64)
    return transform_blocks(block[None], qp)[0]


def dequant_itransform(coeffs, qp, n=8):
    return inverse_blocks(np.asarray(coeffs)[None], qp, n)[0]


def to_blocks(arr, n):
    h, w = arr.shape
    return arr.reshape(h // n, n, w // n, n).swapaxes(1, 2).reshape(-1, n, n)


def from_blocks(blocks, height, width):
    n = blocks.shape[-1]
    return blocks.reshape(height // n, width // n, n, n).swapaxes(1, 2).reshape(height, width)


# -- deblocking -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundaryMask:
    """One flag per n-sample boundary segment between adjacent transform blocks.

    ``vertical[r, k]`` gates the boundary left of block column ``k + 1`` in
    block row ``r``; ``horizontal[k, c]`` the boundary above block row
    ``k + 1`` in block column ``c``.
    """

    vertical: np.ndarray
    horizontal: np.ndarray
    block: int = 8

    def __post_init__(self):
        for name in ("vertical", "horizontal"):
            arr = np.asarray(getattr(self, name), dtype=bool)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def clear(cls, height, width, block=8):
        return cls(
            np.zeros((height // block, width // block - 1), bool),
            np.zeros((height // block - 1, width // block), bool),
            block,
        )

    def __eq__(self, other):
        return (
            isinstance(other, BoundaryMask)
            and np.array_equal(self.vertical, other.vertical)
            and np.array_equal(self.horizontal, other.horizontal)
        )

    def flags(self):
        return np.concatenate([self.vertical.reshape(-1), self.horizontal.reshape(-1)])


def compute_boundary_mask(frame, threshold, block=8, coded=None):
    """Set a flag where the boundary is smooth (max step < threshold).

    ``coded``, if given, is a (rows, cols) bool grid of transform blocks that
    carry non-zero residual; boundaries between two residual-free blocks are
    left alone, as in HEVC's boundary-strength rule.
    """
    arr = frame.data if isinstance(frame, Frame) else np.asarray(frame, dtype=np.float64)
    h, w = arr.shape
    n = block
    v_step = np.abs(arr[:, n - 1:w - 1:n] - arr[:, n:w:n])  # (h, w/n - 1)
    h_step = np.abs(arr[n - 1:h - 1:n, :] - arr[n:h:n, :])  # (h/n - 1, w)
    vertical = v_step.reshape(h // n, n, -1).max(axis=1) < threshold
    horizontal = h_step.reshape(-1, w // n, n).max(axis=2) < threshold
    if coded is not None:
        vertical &= coded[:, :-1] | coded[:, 1:]
        horizontal &= coded[:-1, :] | coded[1:, :]
    return BoundaryMask(vertical, horizontal, n)


def _deblock_pass(arr, flags, n):
    """Filter the columns straddling every vertical boundary; flags (h, nb)."""
    out = arr.copy()
    if flags.size == 0 or not flags.any():
        return out
    b = np.arange(n, arr.shape[1], n)
    p1, p0, q0, q1 = arr[:, b - 2], arr[:, b - 1], arr[:, b], arr[:, b + 1]
    out[:, b - 1] = np.where(flags, (p1 + 2.0 * p0 + q0) * 0.25, p0)
    out[:, b] = np.where(flags, (p0 + 2.0 * q0 + q1) * 0.25, q0)
    return out


def _deblock_pass_adjoint(grad, flags, n):
    out = grad.copy()
    if flags.size == 0 or not flags.any():
        return out
    b = np.arange(n, grad.shape[1], n)
    gp, gq = grad[:, b - 1], grad[:, b]
    f = flags.astype(np.float64)
    out[:, b - 2] += f * 0.25 * gp
    out[:, b + 1] += f * 0.25 * gq
    out[:, b - 1] = np.where(flags, 0.5 * gp + 0.25 * gq, gp)
    out[:, b] = np.where(flags, 0.25 * gp + 0.5 * gq, gq)
    return out


def _expand(mask):
    n = mask.block
    v = np.repeat(mask.vertical, n, axis=0)  # (h, w/n - 1)
    hz = np.repeat(mask.horizontal, n, axis=1).T  # (w, h/n - 1)
    return v, hz


def deblock_array(arr, mask):
    v, hz = _expand(mask)
    n = mask.block
    out = _deblock_pass(np.asarray(arr, dtype=np.float64), v, n)
    return _deblock_pass(out.T, hz, n).T


def deblock_adjoint(grad, mask):
    v, hz = _expand(mask)
    n = mask.block
    g = _deblock_pass_adjoint(np.asarray(grad, dtype=np.float64).T, hz, n).T
    return _deblock_pass_adjoint(g, v, n)


def deblock(frame, mask):
    """[1,2,1]/4 smoothing of the two samples straddling each flagged boundary."""
    return Frame(deblock_array(frame.data, mask))


# -- GOP structure --------------------------------------------------------------


def coding_order(n_frames, b_frames_enabled):
    """[(display_index, frame_type, reference display indices)] after the I-frame."""
    order = []
    last_ref = 0
    t = 1
    while t < n_frames:
        if b_frames_enabled and t % 2 == 1 and t + 1 < n_frames:
            order.append((t + 1, "P", (last_ref,)))
            order.append((t, "B", (t - 1, t + 1)))
            last_ref = t + 1
            t += 2
        else:
            order.append((t, "P", (last_ref,)))
            last_ref = t
            t += 1
    return order


@dataclass(frozen=True, eq=False)
class ResidualUnit:
    frame_type: str
    qp: int
    symbols: np.ndarray  # (n_blocks, n*n); zigzag coefficients, raster levels at qp 0
    refs: tuple

    def raster(self, height, width, n):
        """Decoded residual in real pixel units."""
        return from_blocks(inverse_blocks(self.symbols, self.qp, n), height, width) / 255.0


@dataclass(frozen=True, eq=False)
class InterUnit:
    display_index: int
    residual: ResidualUnit
    motion: tuple
    mask: BoundaryMask
    data: bytes = b""

    @property
    def frame_type(self):
        return self.residual.frame_type

    @property
    def qp(self):
        return self.residual.qp

    def to_bytes(self):
        return self.data


def _pack_unit(type_code, qp, payload):
    return UNIT_HEADER.pack(type_code, qp, 0, len(payload)) + payload


def _mask_runs(flags):
    """Alternating run lengths, first run counts set flags (may be 0)."""
    runs = []
    current = True
    count = 0
    for f in flags:
        if bool(f) == current:
            count += 1
        else:
            runs.append(count)
            current = not current
            count = 1
    runs.append(count)
    return runs


def _coeff_symbols(symbols):
    """Interleave [count, run, level, run, level, ...] per block as ue() values."""
    nb = symbols.shape[0]
    blk, pos = np.nonzero(symbols)
    levels = symbols[blk, pos]
    counts = np.bincount(blk, minlength=nb)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    k = np.arange(len(blk))
    first = k == starts[blk]
    prev = np.where(first, -1, np.concatenate([[0], pos[:-1]]))
    runs = pos - prev - 1
    out = np.empty(nb + 2 * len(blk), np.int64)
    out[np.arange(nb) + 2 * starts] = counts
    out[blk + 1 + 2 * k] = runs
    out[blk + 2 + 2 * k] = np.where(levels > 0, 2 * levels - 1, -2 * levels)
    return out


def serialize_inter(unit):
    w = BitWriter()
    mv = np.concatenate([m.mv.reshape(-1) for m in unit.motion])
    w.write_se_array(mv)
    w.write_ue_array(_mask_runs(unit.mask.flags()))
    w.write_ue_array(_coeff_symbols(unit.residual.symbols))
    return _pack_unit(TYPE_CODES[unit.frame_type], unit.qp, w.to_bytes())


def _parse_inter(frame_type, qp, payload, base_offset, display_index, refs, height, width, cfg):
    r = BitReader(payload, base_offset)
    b, n = cfg.motion_block, cfg.transform_block
    rows, cols = height // b, width // b
    motion = []
    for _ in refs:
        mv = np.array(r.read_se_array(rows * cols * 2), np.int64).reshape(rows, cols, 2)
        if np.abs(mv).max(initial=0) > 2 * cfg.search_range:
            raise FormatError(f"motion vector out of range near byte {r.byte_offset}")
        motion.append(MotionField(mv, b))
    n_v = (height // n) * (width // n - 1)
    n_flags = n_v + (height // n - 1) * (width // n)
    flags = np.zeros(n_flags, bool)
    pos, value = 0, True
    while pos < n_flags:
        run = r.read_ue()
        if pos + run > n_flags:
            raise FormatError(f"boundary mask overruns near byte {r.byte_offset}")
        flags[pos:pos + run] = value
        pos += run
        value = not value
    mask = BoundaryMask(
        flags[:n_v].reshape(height // n, width // n - 1),
        flags[n_v:].reshape(height // n - 1, width // n),
        n,
    )
    nb = (height // n) * (width // n)
    symbols = np.zeros((nb, n * n), np.int64)
    for blk in range(nb):
        count = r.read_ue()
        idx = -1
        for _ in range(count):
            idx += r.read_ue() + 1
            level = r.read_se()
            if idx >= n * n:
                raise FormatError(f"coefficient run overflows block near byte {r.byte_offset}")
            symbols[blk, idx] = level
    residual = ResidualUnit(frame_type, qp, symbols, tuple(refs))
    data = _pack_unit(TYPE_CODES[frame_type], qp, payload)
    return InterUnit(display_index, residual, tuple(motion), mask, data)


# -- lossless intra -------------------------------------------------------------


def encode_intra_unit(frame):
    """Lossless I unit: left-neighbour DPCM (top for column 0), se() coded."""
    px = frame.pixels.astype(np.int64)
    h, w = px.shape
    pred = np.empty_like(px)
    pred[:, 1:] = px[:, :-1]
    pred[1:, 0] = px[:-1, 0]
    pred[0, 0] = 128
    bw = BitWriter()
    bw.write_ue_array([w, h])
    bw.write_se_array((px - pred).reshape(-1))
    return _pack_unit(TYPE_CODES["I"], 0, bw.to_bytes())


def _decode_intra_payload(payload, base_offset):
    r = BitReader(payload, base_offset)
    w, h = r.read_ue(), r.read_ue()
    if w == 0 or h == 0 or w * h > (1 << 26):
        raise FormatError(f"bad intra dimensions {w}x{h}")
    res = np.array(r.read_se_array(w * h), np.int64).reshape(h, w)
    first_col = 128 + np.cumsum(res[:, 0])
    px = first_col[:, None] + np.concatenate([np.zeros((h, 1), np.int64), np.cumsum(res[:, 1:], axis=1)], axis=1)
    if px.min() < 0 or px.max() > 255:
        raise FormatError("intra unit decodes outside the 8-bit range")
    return Frame.from_pixels(px.astype(np.uint8))


def decode_intra_unit(data):
    units = split_units(data)
    if len(units) != 1 or units[0][0] != "I":
        raise FormatError("expected a single I unit")
    _, _, payload, offset = units[0]
    return _decode_intra_payload(payload, offset)


def split_units(data):
    """[(frame_type, qp, payload, payload_offset)] for a concatenation of units."""
    out = []
    offset = 0
    data = bytes(data)
    while offset < len(data):
        if offset + UNIT_HEADER.size > len(data):
            raise TruncationError(f"unit header truncated at byte {offset}", offset=offset)
        code, qp, _reserved, length = UNIT_HEADER.unpack_from(data, offset)
        if code not in FRAME_TYPES:
            raise FormatError(f"unknown frame type {code} at byte {offset}")
        start = offset + UNIT_HEADER.size
        if start + length > len(data):
            raise TruncationError(f"unit payload truncated at byte {len(data)}", offset=len(data))
        out.append((FRAME_TYPES[code], qp, data[start:start + length], start))
        offset = start + length
    return out


# -- GOP encode / decode --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CodedGop:
    i_frame_unit: bytes | None
    pb_units: tuple
    qp: int
    reconstructions: tuple | None = field(default=None, repr=False)

    @property
    def n_frames(self):
        return len(self.pb_units) + 1

    @property
    def legacy_bytes(self):
        return b"".join(u.to_bytes() for u in self.pb_units)

    @property
    def sizes(self):
        return [len(u.to_bytes()) for u in self.pb_units]

    @property
    def legacy_size(self):
        return sum(self.sizes)

    def stream_bytes(self):
        return (self.i_frame_unit or b"") + self.legacy_bytes


def predict(motion, ref_arrays):
    """Rounded motion-compensated prediction for one unit."""
    if len(motion) == 1:
        pred = warp_array(ref_arrays[0], motion[0])
    else:
        pred = (warp_array(ref_arrays[0], motion[0]) + warp_array(ref_arrays[1], motion[1])) * 0.5
    return quantize8(pred)


def assemble(pred, residual, mask):
    """Residual add, clip, deblock; returns (pre-deblock, output), unrounded."""
    pre = np.clip(pred + residual, 0.0, 1.0)
    return pre, deblock_array(pre, mask)


def encode_gop(frames, injected_reference, qp, cfg, keep_i_unit=True):
    frames = list(frames)
    if not frames:
        raise ValueError("empty GOP")
    cfg.check_qp(qp)
    h, w = frames[0].shape
    cfg.check_dims(h, w)
    for f in frames:
        if f.shape != (h, w):
            raise DimensionError("GOP frames differ in size")
    if injected_reference.shape != (h, w):
        raise DimensionError(
            f"reference is {injected_reference.width}x{injected_reference.height}, GOP is {w}x{h}"
        )
    n = cfg.transform_block
    recons = {0: injected_reference.quantized()}
    units = []
    for t, ftype, refs in coding_order(len(frames), cfg.b_frames_enabled):
        target = frames[t]
        motion = tuple(motion_estimate(target, recons[r], cfg) for r in refs)
        pred = predict(motion, [recons[r].data for r in refs])
        levels = target.pixels.astype(np.float64) - np.round(pred * 255.0)
        symbols = transform_blocks(to_blocks(levels, n), qp)
        residual = ResidualUnit(ftype, qp, symbols, refs)
        res = residual.raster(h, w, n)
        if qp == 0:
            # lossless mode bypasses the loop filter
            mask = BoundaryMask.clear(h, w, n)
        else:
            coded = symbols.any(axis=1).reshape(h // n, w // n)
            mask = compute_boundary_mask(np.clip(pred + res, 0.0, 1.0), cfg.deblock_threshold, n, coded)
        _, out = assemble(pred, res, mask)
        recons[t] = Frame(out).quantized()
        unit = InterUnit(t, residual, motion, mask)
        units.append(InterUnit(t, residual, motion, mask, serialize_inter(unit)))
    return CodedGop(
        i_frame_unit=encode_intra_unit(recons[0]) if keep_i_unit else None,
        pb_units=tuple(units),
        qp=qp,
        reconstructions=tuple(recons[t] for t in range(len(frames))),
    )


def parse_gop(data, cfg, width=None, height=None):
    """Parse a legacy track (optionally led by an I unit) into a CodedGop."""
    raw = split_units(data)
    i_unit = None
    if raw and raw[0][0] == "I":
        _, _, payload, offset = raw[0]
        i_unit = bytes(data[offset - UNIT_HEADER.size:offset + len(payload)])
        first = _decode_intra_payload(payload, offset)
        width, height = first.width, first.height
        raw = raw[1:]
    if raw and (width is None or height is None):
        raise StructureError("frame dimensions unknown for a legacy track without an I unit")
    order = coding_order(len(raw) + 1, cfg.b_frames_enabled)
    units = []
    for (ftype, qp, payload, offset), (t, want, refs) in zip(raw, order):
        if ftype != want:
            raise StructureError(f"unit for frame {t} is {ftype}, GOP layout expects {want}")
        if qp > cfg.qp_max:
            raise FormatError(f"qp {qp} exceeds qp_max at byte {offset}")
        units.append(_parse_inter(ftype, qp, payload, offset, t, refs, height, width, cfg))
    qp = units[0].qp if units else 0
    return CodedGop(i_unit, tuple(units), qp)


def decode_gop(coded, injected_reference=None, cfg=None):
    cfg = cfg or CodecConfig()
    if isinstance(coded, (bytes, bytearray)):
        w = injected_reference.width if injected_reference is not None else None
        h = injected_reference.height if injected_reference is not None else None
        coded = parse_gop(coded, cfg, w, h)
    has_i = coded.i_frame_unit is not None
    if has_i == (injected_reference is not None):
        raise StructureError("exactly one of the I unit or an injected reference must supply the I-frame")
    first = decode_intra_unit(coded.i_frame_unit) if has_i else injected_reference.quantized()
    h, w = first.shape
    n = cfg.transform_block
    order = coding_order(coded.n_frames, cfg.b_frames_enabled)
    recons = {0: first}
    for unit, (t, ftype, refs) in zip(coded.pb_units, order):
        if unit.frame_type != ftype or unit.display_index != t:
            raise StructureError(f"unit for frame {t} does not match the GOP layout")
        pred = predict(unit.motion, [recons[r].data for r in refs])
        _, out = assemble(pred, unit.residual.raster(h, w, n), unit.mask)
        recons[t] = Frame(out).quantized()
    return [recons[t] for t in range(coded.n_frames)]
