import struct
import threading
import time
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridcodec import container, genprior
from hybridcodec.container import (
    PipelineConfig,
    StreamHeader,
    decode_stream,
    demux,
    mux,
    run_pipeline,
    stitch,
)
from hybridcodec.errors import ChecksumError, DimensionError, FormatError, TruncationError, UnsupportedVersionError
from hybridcodec.frameio import Frame, synth_sequence
from hybridcodec.toycodec import CodecConfig, decode_gop, encode_gop, encode_intra_unit, parse_gop

HEADER = StreamHeader(width=32, height=32, fps=30)
records_st = st.lists(st.tuples(st.binary(max_size=64), st.binary(max_size=64)), max_size=6)


def test_header_only_stream():
    data = mux([], HEADER)
    hdr, recs = demux(data)
    assert recs == [] and hdr.gop_count == 0
    assert (hdr.width, hdr.height, hdr.fps) == (32, 32, 30)
    assert data[:4] == b"HYBP"
    assert struct.unpack_from("<H", data, 4)[0] == 1


@given(records_st)
def test_mux_demux_roundtrip(records):
    data = mux(records, HEADER)
    hdr, back = demux(data)
    assert back == [(bytes(a), bytes(b)) for a, b in records]
    header_size = len(mux([], HEADER))
    assert len(data) == header_size + sum(12 + len(a) + len(b) for a, b in records)


def test_header_fields_roundtrip():
    cfg = CodecConfig(search_range=4, qp_max=40, gop_length=5, b_frames_enabled=True, deblock_threshold=0.125)
    h = StreamHeader(48, 16, 25, cfg, hidden=128, two_stage=False, output_gain=2.5,
                     mode=container.MODE_TRADITIONAL, n_frames=9)
    back, _ = demux(mux([], h))
    assert back.codec == cfg
    assert (back.hidden, back.two_stage, back.output_gain, back.mode, back.n_frames) == (128, False, 2.5, 1, 9)


def test_checksum_names_gop():
    data = bytearray(mux([(b"abc", b"defg"), (b"xyz", b"123")], HEADER))
    data[-6] ^= 0xFF  # inside GOP 1's legacy payload
    with pytest.raises(ChecksumError) as info:
        demux(bytes(data))
    assert info.value.gop_index == 1


def test_version_and_magic():
    data = bytearray(mux([], HEADER))
    bad = bytearray(data)
    struct.pack_into("<H", bad, 4, 2)
    with pytest.raises(UnsupportedVersionError):
        demux(bytes(bad))
    bad = bytearray(data)
    bad[0:4] = b"HYBX"
    with pytest.raises(FormatError):
        demux(bytes(bad))


def test_truncation_offset():
    data = mux([(b"a" * 10, b"b" * 10)], HEADER)
    with pytest.raises(TruncationError) as info:
        demux(data[:-7])
    assert info.value.offset == len(data) - 7
    with pytest.raises(FormatError):
        demux(data + b"\0")


def test_every_payload_byte_corruption_detected():
    data = mux([(bytes(range(20)), bytes(range(40, 70)))], HEADER)
    start = len(mux([], HEADER))
    payload_positions = list(range(start + 4, start + 24)) + list(range(start + 28, start + 58))
    for pos in payload_positions:
        bad = bytearray(data)
        bad[pos] ^= 0x5A
        with pytest.raises(ChecksumError):
            demux(bytes(bad))


def test_stitch_layout_and_equivalence(translate64):
    cfg = CodecConfig()
    key = Frame(np.clip(translate64[0].data + 0.02, 0, 1)).quantized()
    coded = encode_gop(translate64, key, 18, cfg, keep_i_unit=False)
    s = stitch(key, coded.legacy_bytes, cfg)
    assert len(s) == len(encode_intra_unit(key)) + coded.legacy_size
    assert s.i_unit_size == len(encode_intra_unit(key))
    direct = decode_gop(coded.legacy_bytes, key, cfg)
    stitched = decode_gop(parse_gop(s.data, cfg), None, cfg)
    assert direct == stitched


def test_stitch_single_frame_is_just_i_unit():
    f = synth_sequence("noise", 16, 16, 1)[0]
    assert stitch(f, b"").data == encode_intra_unit(f)
    with pytest.raises(DimensionError):
        stitch(f, b"", width=32, height=16)


def _hybrid_stream(n_gops=2, gop=3, size=32):
    spec = genprior.GeneratorSpec(size, size, seed=3, d=64, hidden=64)
    cfg = CodecConfig(gop_length=gop)
    seq = synth_sequence("translate", size, size, n_gops * gop, seed=1)
    records = []
    for g in range(n_gops):
        frames = list(seq)[g * gop:(g + 1) * gop]
        latent = genprior.quantize_latent(genprior.LatentCode(np.full(64, 0.1 * g), 3, size, size))
        key = genprior.render_keyframe(latent, spec)
        coded = encode_gop(frames, key, 20, cfg, keep_i_unit=False)
        records.append((genprior.serialize_latent(latent), coded.legacy_bytes))
    header = StreamHeader(size, size, 30, cfg, hidden=64, n_frames=n_gops * gop)
    return mux(records, header)


@pytest.mark.parametrize("pipelined", [True, False])
def test_decode_modes_identical(pipelined):
    data = _hybrid_stream()
    a, _ = decode_stream(data, "direct", PipelineConfig(pipelined=pipelined))
    b, timing = decode_stream(data, "stitched", PipelineConfig(pipelined=pipelined))
    assert list(a) == list(b) and len(a) == 6
    assert len(timing.stitch) == 2 and all(t > 0 for t in timing.stitch)
    assert [r["gop"] for r in timing.rows()] == [0, 1]


def test_traditional_gop_in_container():
    cfg = CodecConfig(gop_length=3)
    frames = list(synth_sequence("checker-pan", 32, 32, 3, seed=2))
    coded = encode_gop(frames, frames[0], 0, cfg)
    data = mux([(b"", coded.stream_bytes())], StreamHeader(32, 32, 30, cfg, n_frames=3))
    out, _ = decode_stream(data)
    assert list(out) == frames


def test_latent_dimension_mismatch():
    data = _hybrid_stream(1, 2, 32)
    hdr, recs = demux(data)
    bad_latent = genprior.serialize_latent(genprior.LatentCode(np.zeros(64), 3, 16, 16))
    bad = mux([(bad_latent, recs[0][1])], hdr)
    with pytest.raises(DimensionError):
        decode_stream(bad)


def test_pipeline_orders_results_and_overlaps():
    seen = []

    def produce(i):
        time.sleep(0.02)
        return i * 10

    def consume(i, item):
        seen.append(threading.current_thread().name)
        time.sleep(0.02)
        return item

    t0 = time.perf_counter()
    out = run_pipeline(6, produce, consume, pipelined=True)
    wall = time.perf_counter() - t0
    assert out == [0, 10, 20, 30, 40, 50]
    assert wall < 6 * 0.04
    assert run_pipeline(6, produce, consume, pipelined=False) == out


def test_pipeline_single_item_and_empty():
    assert run_pipeline(1, lambda i: "x", lambda i, v: v + "y") == ["xy"]
    assert run_pipeline(0, lambda i: 1, lambda i, v: v) == []


def test_pipeline_producer_error_shuts_down():
    def produce(i):
        if i == 2:
            raise ValueError("boom")
        return i

    with pytest.raises(ValueError, match="boom"):
        run_pipeline(5, produce, lambda i, v: v)
    assert not [t for t in threading.enumerate() if t.name == "keyframe-generator"]


def test_pipeline_consumer_error_stops_producer():
    produced = []

    def produce(i):
        produced.append(i)
        return i

    def consume(i, v):
        if i == 1:
            raise RuntimeError("decoder failed")
        return v

    with pytest.raises(RuntimeError):
        run_pipeline(50, produce, consume, depth=1)
    assert len(produced) < 50
    assert not [t for t in threading.enumerate() if t.name == "keyframe-generator"]


def test_crc_is_zlib_crc32():
    data = mux([(b"n", b"l")], HEADER)
    assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(b"nl")
