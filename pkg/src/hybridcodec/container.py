"""HYBP container: a neural track of keyframe latents plus a legacy track.

Layout (all integers little-endian)::

    "HYBP" u16 version  u16 width  u16 height  u32 fps  u32 gop_count
    u16 config_len  config block (see ``_CONFIG``)
    per GOP:  u32 n  neural[n]   u32 m  legacy[m]   u32 crc32(neural + legacy)

A GOP with an empty neural payload carries a complete toy-codec stream
(lossless I unit first) in its legacy payload.
"""

from __future__ import annotations

import queue
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field

from . import genprior
from .errors import ChecksumError, DimensionError, FormatError, TruncationError, UnsupportedVersionError
from .frameio import Frame, VideoSequence, crop_frame
from .toycodec import CodecConfig, decode_gop, encode_intra_unit, parse_gop

MAGIC = b"HYBP"
VERSION = 1
_HEADER = struct.Struct("<4sHHHII")
_CONFIG = struct.Struct("<BBBBHBBHffI")
_U32 = struct.Struct("<I")

MODE_HYBRID = 0
MODE_TRADITIONAL = 1
MODE_PROMPT_ONLY = 2


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    fps: int = 30
    codec: CodecConfig = field(default_factory=CodecConfig)
    hidden: int = 256
    two_stage: bool = True
    output_gain: float = 3.0
    mode: int = MODE_HYBRID
    n_frames: int = 0
    gop_count: int = 0
    version: int = VERSION

    @property
    def coded_width(self):
        b = self.codec.motion_block
        return -(-self.width // b) * b

    @property
    def coded_height(self):
        b = self.codec.motion_block
        return -(-self.height // b) * b

    def generator_spec(self, latent):
        return genprior.GeneratorSpec(
            width=latent.width,
            height=latent.height,
            seed=latent.generator_seed,
            d=latent.d,
            hidden=self.hidden,
            two_stage=self.two_stage,
            output_gain=self.output_gain,
        )


def _pack_header(h, gop_count):
    c = h.codec
    flags = int(c.b_frames_enabled) | (int(h.two_stage) << 1)
    config = _CONFIG.pack(
        c.motion_block, c.transform_block, c.search_range, c.qp_max, c.gop_length,
        flags, h.mode, h.hidden, c.deblock_threshold, h.output_gain, h.n_frames,
    )
    return _HEADER.pack(MAGIC, h.version, h.width, h.height, h.fps, gop_count) + struct.pack("<H", len(config)) + config


def mux(records, header):
    """Serialise [(neural bytes, legacy bytes)] behind ``header``."""
    parts = [_pack_header(header, len(records))]
    for neural, legacy in records:
        neural, legacy = bytes(neural), bytes(legacy)
        parts += [_U32.pack(len(neural)), neural, _U32.pack(len(legacy)), legacy]
        parts.append(_U32.pack(zlib.crc32(neural + legacy) & 0xFFFFFFFF))
    return b"".join(parts)


def _need(data, offset, count):
    if offset + count > len(data):
        raise TruncationError(f"stream truncated at byte {len(data)} (needed {offset + count})", offset=len(data))


def parse_header(data):
    """Returns (StreamHeader, offset of the first GOP record)."""
    _need(data, 0, _HEADER.size)
    magic, version, width, height, fps, gop_count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad stream magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported HYBP version {version}")
    offset = _HEADER.size
    _need(data, offset, 2)
    (config_len,) = struct.unpack_from("<H", data, offset)
    offset += 2
    if config_len != _CONFIG.size:
        raise FormatError(f"config block is {config_len} bytes, expected {_CONFIG.size}")
    _need(data, offset, config_len)
    (mb, tb, sr, qp_max, gop_length, flags, mode, hidden, thr, gain, n_frames) = _CONFIG.unpack_from(data, offset)
    try:
        codec = CodecConfig(mb, tb, sr, qp_max, gop_length, bool(flags & 1), thr)
    except ValueError as exc:
        raise FormatError(f"invalid codec config: {exc}") from exc
    if width == 0 or height == 0 or fps == 0:
        raise FormatError("stream header has zero width, height or fps")
    header = StreamHeader(
        width, height, fps, codec, hidden, bool(flags & 2), gain, mode, n_frames, gop_count, version
    )
    return header, offset + config_len


def demux(data):
    """Returns (StreamHeader, [(neural bytes, legacy bytes)]), verifying checksums."""
    data = bytes(data)
    header, offset = parse_header(data)
    records = []
    for g in range(header.gop_count):
        payloads = []
        for _track in range(2):
            _need(data, offset, 4)
            (length,) = _U32.unpack_from(data, offset)
            offset += 4
            _need(data, offset, length)
            payloads.append(data[offset:offset + length])
            offset += length
        _need(data, offset, 4)
        (crc,) = _U32.unpack_from(data, offset)
        offset += 4
        if zlib.crc32(payloads[0] + payloads[1]) & 0xFFFFFFFF != crc:
            raise ChecksumError(f"checksum mismatch in GOP {g}", gop_index=g)
        records.append((payloads[0], payloads[1]))
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after GOP {header.gop_count - 1}")
    return header, records


# -- stitching ------------------------------------------------------------------


@dataclass(frozen=True)
class StitchedStream:
    data: bytes
    i_unit_size: int

    def __len__(self):
        return len(self.data)


def stitch(i_frame, legacy, cfg=None, width=None, height=None):
    """Prepend a lossless I unit of ``i_frame`` to a GOP's legacy units."""
    if width is not None and height is not None and i_frame.shape != (height, width):
        raise DimensionError(f"keyframe is {i_frame.width}x{i_frame.height}, stream is {width}x{height}")
    i_unit = encode_intra_unit(i_frame)
    return StitchedStream(i_unit + bytes(legacy), len(i_unit))


# -- pipelined decode -------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    pipelined: bool = True
    queue_depth: int = 1


@dataclass
class TimingReport:
    generate: list = field(default_factory=list)
    decode: list = field(default_factory=list)
    stitch: list = field(default_factory=list)
    wall: float = 0.0

    def rows(self):
        for i in range(len(self.decode)):
            yield {
                "gop": i,
                "generate_s": self.generate[i] if i < len(self.generate) else 0.0,
                "stitch_s": self.stitch[i] if i < len(self.stitch) else 0.0,
                "decode_s": self.decode[i],
            }


_DONE = object()


def run_pipeline(n_items, produce, consume, pipelined=True, depth=1):
    """Run ``consume(i, produce(i))`` for i in order.

    When pipelined, ``produce`` runs on a worker thread and hands results
    over a queue of ``depth`` slots, so item i+1 is produced while item i is
    consumed. Results come back in index order; an exception from either
    stage stops the other and is re-raised.
    """
    if not pipelined or n_items <= 1:
        return [consume(i, produce(i)) for i in range(n_items)]

    handoff = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def offer(msg):
        while not stop.is_set():
            try:
                handoff.put(msg, timeout=0.05)
                return True
            except queue.Full:
                continue
        return False

    def producer():
        for i in range(n_items):
            if stop.is_set():
                return
            try:
                item = produce(i)
            except BaseException as exc:  # forwarded to the consumer
                offer((i, None, exc))
                return
            if not offer((i, item, None)):
                return
        offer((n_items, _DONE, None))

    worker = threading.Thread(target=producer, name="keyframe-generator", daemon=True)
    worker.start()
    results = []
    try:
        for expected in range(n_items):
            i, item, err = handoff.get()
            if err is not None:
                raise err
            if i != expected:
                raise RuntimeError(f"pipeline delivered item {i}, expected {expected}")
            results.append(consume(i, item))
    finally:
        stop.set()
        while True:
            try:
                handoff.get_nowait()
            except queue.Empty:
                break
        worker.join()
    return results


def decode_stream(data, mode="direct", pipeline=None):
    """Decode a HYBP stream; returns (VideoSequence, TimingReport).

    ``direct`` injects each generated keyframe straight into the inter
    decoder; ``stitched`` first re-encodes it as a lossless I unit and
    decodes the resulting plain toy-codec stream. Both give identical
    pixels.
    """
    if mode not in ("direct", "stitched"):
        raise ValueError(f"unknown decode mode {mode!r}")
    pipeline = pipeline or PipelineConfig()
    header, records = demux(data)
    cfg = header.codec
    cw, ch = header.coded_width, header.coded_height
    timing = TimingReport()
    timing.generate = [0.0] * len(records)
    timing.stitch = [0.0] * len(records)
    timing.decode = [0.0] * len(records)

    def produce(i):
        neural = records[i][0]
        if not neural:
            return None
        t0 = time.perf_counter()
        latent = genprior.deserialize_latent(neural)
        if (latent.width, latent.height) != (cw, ch):
            raise DimensionError(f"GOP {i} latent targets {latent.width}x{latent.height}, stream is {cw}x{ch}")
        key = genprior.render_keyframe(latent, header.generator_spec(latent))
        timing.generate[i] = time.perf_counter() - t0
        return key

    def consume(i, keyframe):
        legacy = records[i][1]
        t0 = time.perf_counter()
        if keyframe is None:
            frames = decode_gop(parse_gop(legacy, cfg), None, cfg)
        elif mode == "stitched":
            stitched = stitch(keyframe, legacy, cfg, cw, ch)
            timing.stitch[i] = time.perf_counter() - t0
            frames = decode_gop(parse_gop(stitched.data, cfg), None, cfg)
        else:
            frames = decode_gop(parse_gop(legacy, cfg, cw, ch), keyframe, cfg)
        timing.decode[i] = time.perf_counter() - t0 - timing.stitch[i]
        return frames

    start = time.perf_counter()
    gops = run_pipeline(len(records), produce, consume, pipeline.pipelined, pipeline.queue_depth)
    timing.wall = time.perf_counter() - start
    frames = [crop_frame(f, header.width, header.height) for gop in gops for f in gop]
    if header.n_frames:
        frames = frames[: header.n_frames]
    return VideoSequence(frames, fps=float(header.fps), name="decoded"), timing
