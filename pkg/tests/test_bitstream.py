import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridcodec.bitstream import (
    BitReader,
    BitWriter,
    entropy_decode,
    entropy_encode,
    se_bits,
    signed_to_unsigned,
    ue_bits,
    unsigned_to_signed,
)
from hybridcodec.errors import TruncationError


@pytest.mark.parametrize(
    "v,bits", [(0, "1"), (1, "010"), (2, "011"), (3, "00100"), (6, "00111"), (7, "0001000")]
)
def test_ue_codewords(v, bits):
    assert ue_bits(v) == bits


@pytest.mark.parametrize("v,bits", [(0, "1"), (1, "010"), (-1, "011"), (2, "00100"), (-2, "00101")])
def test_se_codewords(v, bits):
    assert se_bits(v) == bits


def test_signed_mapping():
    assert [signed_to_unsigned(v) for v in (0, 1, -1, 2, -2)] == [0, 1, 2, 3, 4]
    assert [unsigned_to_signed(m) for m in range(5)] == [0, 1, -1, 2, -2]


def test_writer_matches_reference_strings():
    w = BitWriter()
    vals = [0, 5, -3, 100, -1]
    for v in vals:
        w.write_se(v)
    bits = "".join(se_bits(v) for v in vals)
    bits += "0" * (-len(bits) % 8)
    assert w.to_bytes() == int(bits, 2).to_bytes(len(bits) // 8, "big")


@given(st.lists(st.integers(-(2**20), 2**20), max_size=200))
def test_se_roundtrip(values):
    w = BitWriter()
    w.write_se_array(np.array(values, dtype=np.int64))
    r = BitReader(w.to_bytes())
    assert list(r.read_se_array(len(values))) == values


@given(st.lists(st.tuples(st.integers(0, 2**31 - 1), st.integers(31, 31)), max_size=20))
def test_fixed_width_roundtrip(items):
    w = BitWriter()
    for v, n in items:
        w.write_bits(v, n)
    r = BitReader(w.to_bytes())
    assert [r.read_bits(n) for _, n in items] == [v for v, _ in items]


def test_entropy_roundtrip():
    syms = [0, 3, -7, 12, 0, 0, 1]
    assert list(entropy_decode(entropy_encode(syms), len(syms))) == syms


def test_truncation_reports_offset():
    data = entropy_encode([1000])[:1]
    with pytest.raises(TruncationError) as info:
        BitReader(data, base_offset=40).read_se()
    assert info.value.offset is not None and info.value.offset >= 40
