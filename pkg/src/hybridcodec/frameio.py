"""Grayscale frames, raw video files, synthetic sequences and PSNR."""

from __future__ import annotations

import csv
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, TruncationError

RAWV_MAGIC = b"RAWV"
_RAWV_HEADER = struct.Struct("<4sIIII")
SYNTH_KINDS = ("translate", "rotate-gradient", "noise", "checker-pan")


def to_levels(values):
    """Real samples in [0, 1] -> nearest 8-bit levels (as float array)."""
    return np.round(np.asarray(values, dtype=np.float64) * 255.0)


def quantize8(values):
    """Snap real samples onto the 8-bit grid, staying in real form."""
    return to_levels(values) / 255.0


class Frame:
    """One luma plane.

    ``data`` is the real-valued working form, shape ``(height, width)``,
    values nominally in [0, 1]. ``pixels`` is the paired 8-bit form,
    ``round(data * 255)``. Frames are immutable.
    """

    __slots__ = ("data", "_pixels")

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError(f"frame data must be 2-D, got shape {arr.shape}")
        arr.setflags(write=False)
        self.data = arr
        self._pixels = None

    @classmethod
    def from_pixels(cls, pixels):
        px = np.asarray(pixels)
        if px.ndim != 2:
            raise DimensionError(f"pixel raster must be 2-D, got shape {px.shape}")
        frame = cls(px.astype(np.float64) / 255.0)
        stored = np.clip(px, 0, 255).astype(np.uint8)
        stored.setflags(write=False)
        frame._pixels = stored
        return frame

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape

    @property
    def pixels(self):
        if self._pixels is None:
            px = np.clip(to_levels(self.data), 0, 255).astype(np.uint8)
            px.setflags(write=False)
            self._pixels = px
        return self._pixels

    def quantized(self):
        """The frame as an 8-bit decoder would store it."""
        return Frame.from_pixels(self.pixels)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"Frame({self.width}x{self.height})"


@dataclass(frozen=True)
class VideoSequence:
    frames: tuple
    fps: float = 30.0
    name: str = "sequence"

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.frames:
            shape = self.frames[0].shape
            for i, f in enumerate(self.frames):
                if f.shape != shape:
                    raise DimensionError(
                        f"frame {i} is {f.width}x{f.height}, expected {shape[1]}x{shape[0]}"
                    )

    @property
    def width(self):
        return self.frames[0].width

    @property
    def height(self):
        return self.frames[0].height

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, idx):
        return self.frames[idx]

    def __iter__(self):
        return iter(self.frames)


@dataclass
class QualityReport:
    per_frame_mse: list
    per_frame_psnr: list
    mean_psnr: float
    bytes_per_frame: list = field(default_factory=list)

    def rows(self):
        for i, (mse_val, psnr_val) in enumerate(zip(self.per_frame_mse, self.per_frame_psnr)):
            nbytes = self.bytes_per_frame[i] if i < len(self.bytes_per_frame) else 0
            yield {
                "frame_index": i,
                "bytes": nbytes,
                "mse": f"{mse_val:.10g}",
                "psnr": format_psnr(psnr_val),
            }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["frame_index", "bytes", "mse", "psnr"])
            writer.writeheader()
            writer.writerows(self.rows())


def format_psnr(value):
    # infinity never reaches a CSV as a float special value
    return "inf" if math.isinf(value) else f"{value:.6f}"


def mse(a, b):
    a_data = a.data if isinstance(a, Frame) else np.asarray(a, dtype=np.float64)
    b_data = b.data if isinstance(b, Frame) else np.asarray(b, dtype=np.float64)
    if a_data.shape != b_data.shape:
        raise DimensionError(f"shape mismatch: {a_data.shape} vs {b_data.shape}")
    diff = a_data - b_data
    return float(np.mean(diff * diff))


def psnr_from_mse(value):
    if value <= 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / value)


def psnr(a, b):
    """PSNR in dB on the real-valued form; ``inf`` for identical frames."""
    return psnr_from_mse(mse(a, b))


def pooled_psnr(refs, tests):
    """PSNR of the MSE pooled over all frames of a group."""
    errors = [mse(r, t) for r, t in zip(refs, tests)]
    return psnr_from_mse(float(np.mean(errors)))


def quality_report(reference, decoded, bytes_per_frame=None):
    if len(reference) != len(decoded):
        raise DimensionError("sequences differ in length")
    errors = [mse(r, d) for r, d in zip(reference, decoded)]
    psnrs = [psnr_from_mse(e) for e in errors]
    return QualityReport(
        per_frame_mse=errors,
        per_frame_psnr=psnrs,
        mean_psnr=float(np.mean(psnrs)) if psnrs else math.nan,
        bytes_per_frame=list(bytes_per_frame or []),
    )


# -- file I/O -----------------------------------------------------------------


def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in ("rawv", "y4m-luma"):
            raise ValueError(f"unknown format {fmt!r}")
        return fmt
    return "y4m-luma" if str(path).lower().endswith(".y4m") else "rawv"


def read_sequence(path, format=None):
    fmt = _infer_format(path, format)
    with open(path, "rb") as fh:
        blob = fh.read()
    name = os.path.splitext(os.path.basename(str(path)))[0]
    if fmt == "rawv":
        return parse_rawv(blob, name)
    return parse_y4m(blob, name)


def write_sequence(seq, path, format=None):
    """Write ``seq`` and return the number of bytes written."""
    if len(seq) == 0:
        raise ValueError("cannot write an empty sequence")
    fmt = _infer_format(path, format)
    blob = encode_rawv(seq) if fmt == "rawv" else encode_y4m(seq)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def encode_rawv(seq):
    header = _RAWV_HEADER.pack(RAWV_MAGIC, seq.width, seq.height, len(seq), int(round(seq.fps)))
    return header + b"".join(f.pixels.tobytes() for f in seq)


def parse_rawv(blob, name="sequence"):
    if len(blob) < _RAWV_HEADER.size:
        raise FormatError(f"rawv header needs {_RAWV_HEADER.size} bytes, got {len(blob)}")
    magic, width, height, count, fps = _RAWV_HEADER.unpack_from(blob)
    if magic != RAWV_MAGIC:
        raise FormatError(f"bad rawv magic {magic!r}")
    if width == 0 or height == 0 or fps == 0:
        raise FormatError("rawv header has zero width, height or fps")
    plane = width * height
    frames = []
    offset = _RAWV_HEADER.size
    for i in range(count):
        if offset + plane > len(blob):
            raise TruncationError(f"rawv payload truncated in frame {i}", offset=offset, frame_index=i)
        px = np.frombuffer(blob, dtype=np.uint8, count=plane, offset=offset).reshape(height, width)
        frames.append(Frame.from_pixels(px))
        offset += plane
    return VideoSequence(frames, fps=float(fps), name=name)


def _parse_y4m_rate(token):
    num, _, den = token.partition(":")
    try:
        rate = float(num) / float(den or 1)
    except (ValueError, ZeroDivisionError) as exc:
        raise FormatError(f"bad y4m frame rate {token!r}") from exc
    if rate <= 0:
        raise FormatError(f"bad y4m frame rate {token!r}")
    return rate


def parse_y4m(blob, name="sequence"):
    end = blob.find(b"\n")
    if end < 0 or not blob.startswith(b"YUV4MPEG2"):
        raise FormatError("missing YUV4MPEG2 header")
    width = height = None
    fps = 30.0
    chroma = "420jpeg"
    for token in blob[:end].decode("ascii", "replace").split()[1:]:
        key, val = token[0], token[1:]
        if key == "W":
            width = int(val)
        elif key == "H":
            height = int(val)
        elif key == "F":
            fps = _parse_y4m_rate(val)
        elif key == "C":
            chroma = val
    if not width or not height:
        raise FormatError("y4m header lacks W/H")
    if chroma.startswith("420"):
        chroma_size = 2 * ((width + 1) // 2) * ((height + 1) // 2)
    elif chroma in ("400", "mono"):
        chroma_size = 0
    else:
        raise FormatError(f"unsupported y4m chroma mode C{chroma}")
    plane = width * height
    frames = []
    offset = end + 1
    while offset < len(blob):
        line_end = blob.find(b"\n", offset)
        if line_end < 0 or not blob.startswith(b"FRAME", offset):
            raise FormatError(f"bad y4m frame marker at byte {offset}")
        offset = line_end + 1
        if offset + plane + chroma_size > len(blob):
            raise TruncationError(
                f"y4m payload truncated in frame {len(frames)}", offset=offset, frame_index=len(frames)
            )
        px = np.frombuffer(blob, dtype=np.uint8, count=plane, offset=offset).reshape(height, width)
        frames.append(Frame.from_pixels(px))
        offset += plane + chroma_size
    return VideoSequence(frames, fps=fps, name=name)


def encode_y4m(seq):
    rate = seq.fps
    if float(rate).is_integer():
        rate_token = f"{int(rate)}:1"
    else:
        rate_token = f"{int(round(rate * 1000))}:1000"
    header = f"YUV4MPEG2 W{seq.width} H{seq.height} F{rate_token} Ip A1:1 C420jpeg\n".encode("ascii")
    chroma = bytes([128]) * (2 * ((seq.width + 1) // 2) * ((seq.height + 1) // 2))
    parts = [header]
    for f in seq:
        parts += [b"FRAME\n", f.pixels.tobytes(), chroma]
    return b"".join(parts)


# -- synthetic content ----------------------------------------------------------


def smooth_texture(w, h, rng, n_waves=24, max_freq=6):
    """Sum of random periodic plane waves, wraps seamlessly in both axes."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    tex = np.zeros((h, w))
    for _ in range(n_waves):
        kx, ky = 0, 0
        while kx == 0 and ky == 0:
            kx, ky = rng.integers(-max_freq, max_freq + 1, size=2)
        amp = 1.0 / math.hypot(kx, ky)
        phase = rng.uniform(0, 2 * math.pi)
        tex += amp * np.cos(2 * math.pi * (kx * xx / w + ky * yy / h) + phase)
    tex -= tex.min()
    tex /= max(tex.max(), 1e-12)
    return 0.1 + 0.8 * tex


def synth_sequence(kind, w, h, n_frames, seed=0, fps=30.0):
    if w < 16 or h < 16:
        raise ValueError("synthetic frames need w, h >= 16")
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(seed)
    frames = []
    if kind == "translate":
        base = np.round(smooth_texture(w, h, rng) * 255.0)
        for t in range(n_frames):
            frames.append(np.roll(base, t, axis=1))
    elif kind == "rotate-gradient":
        theta0 = rng.uniform(0, 2 * math.pi)
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        radius = math.hypot(cx, cy)
        for t in range(n_frames):
            theta = theta0 + t * math.pi / 36.0
            proj = ((xx - cx) * math.cos(theta) + (yy - cy) * math.sin(theta)) / radius
            frames.append(np.round((0.5 + 0.4 * proj) * 255.0))
    elif kind == "noise":
        for _ in range(n_frames):
            frames.append(rng.integers(0, 256, size=(h, w)).astype(np.float64))
    elif kind == "checker-pan":
        square = max(4, min(w, h) // 8)
        ox, oy = rng.integers(0, 2 * square, size=2)
        overlay = smooth_texture(w, h, rng)
        yy, xx = np.mgrid[0:h, 0:w]
        for t in range(n_frames):
            cells = (((xx - t + ox) // square) + ((yy - t + oy) // square)) % 2
            tex = np.roll(overlay, (t, t), axis=(0, 1))
            frames.append(np.round((0.25 + 0.5 * cells + 0.2 * (tex - 0.5)) * 255.0))
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {SYNTH_KINDS}")
    return VideoSequence(
        [Frame.from_pixels(np.clip(f, 0, 255).astype(np.uint8)) for f in frames],
        fps=fps,
        name=f"{kind}-{w}x{h}-s{seed}",
    )


def pad_frame(frame, multiple):
    """Edge-replicate so both dimensions become multiples of ``multiple``."""
    h, w = frame.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if not ph and not pw:
        return frame
    return Frame.from_pixels(np.pad(frame.pixels, ((0, ph), (0, pw)), mode="edge"))


def crop_frame(frame, width, height):
    if frame.shape == (height, width):
        return frame
    return Frame.from_pixels(frame.pixels[:height, :width])
