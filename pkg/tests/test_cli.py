import csv

import pytest

from hybridcodec.container import mux, parse_header
from hybridcodec.cli import EXIT_BUDGET, EXIT_CHECKSUM, EXIT_FORMAT, EXIT_IO, main

FAST = ["--invert-iters", "30", "--refine-iters", "5", "--latent-dim", "64", "--hidden", "64", "--gop", "4"]


@pytest.fixture
def clip(tmp_path):
    path = tmp_path / "in.rawv"
    assert main(["synth", "translate", "-o", str(path), "--frames", "5", "--width", "32", "--height", "32", "--seed", "1"]) == 0
    return path


def test_encode_decode_roundtrip(tmp_path, clip):
    out = tmp_path / "s.hybp"
    csv_path = tmp_path / "alloc.csv"
    rc = main(["encode", str(clip), "-o", str(out), "--csv", str(csv_path), "--bitrate", "200", *FAST])
    assert rc == 0
    with open(csv_path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["gop", "qp", "latent_bytes", "legacy_bytes", "total_bytes", "within_budget"]
    assert len(rows) == 3
    d1, d2 = tmp_path / "a.rawv", tmp_path / "b.rawv"
    timing = tmp_path / "t.csv"
    assert main(["decode", str(out), "-o", str(d1), "--timing-csv", str(timing)]) == 0
    assert main(["decode", str(out), "-o", str(d2), "--stitched", "--no-pipeline"]) == 0
    assert d1.read_bytes() == d2.read_bytes()
    assert timing.read_text().splitlines()[0] == "gop,generate_s,stitch_s,decode_s"


def test_encode_is_deterministic(tmp_path, clip):
    a, b = tmp_path / "a.hybp", tmp_path / "b.hybp"
    main(["encode", str(clip), "-o", str(a), "--bitrate", "200", *FAST])
    main(["encode", str(clip), "-o", str(b), "--bitrate", "200", *FAST])
    assert a.read_bytes() == b.read_bytes()


def test_gop_one_has_no_legacy(tmp_path, clip):
    csv_path = tmp_path / "c.csv"
    main(["encode", str(clip), "-o", str(tmp_path / "p.hybp"), "--csv", str(csv_path), "--prompt-only", "--bitrate", "900", *FAST])
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5 and all(r["legacy_bytes"] == "0" for r in rows)


def test_conflicting_flags_usage_error(tmp_path, clip):
    with pytest.raises(SystemExit) as info:
        main(["encode", str(clip), "-o", str(tmp_path / "x"), "--no-refine", "--traditional-only"])
    assert info.value.code == 2


def test_infeasible_budget_exit_code(tmp_path, clip):
    out = tmp_path / "x.hybp"
    assert main(["encode", str(clip), "-o", str(out), "--bitrate", "1", *FAST]) == EXIT_BUDGET
    assert out.exists()


def test_error_exit_codes(tmp_path, clip):
    out = tmp_path / "s.hybp"
    main(["encode", str(clip), "-o", str(out), "--bitrate", "200", *FAST])
    data = bytearray(out.read_bytes())
    data[len(mux([], parse_header(bytes(data))[0])) + 4 + 10] ^= 1  # inside GOP 0's latent
    bad = tmp_path / "bad.hybp"
    bad.write_bytes(bytes(data))
    assert main(["decode", str(bad), "-o", str(tmp_path / "o.rawv")]) == EXIT_CHECKSUM
    junk = tmp_path / "junk.hybp"
    junk.write_bytes(b"NOPE" + bytes(40))
    assert main(["decode", str(junk), "-o", str(tmp_path / "o.rawv")]) == EXIT_FORMAT
    assert main(["decode", str(tmp_path / "missing"), "-o", str(tmp_path / "o.rawv")]) == EXIT_IO


def test_eval_and_ablate(tmp_path, clip):
    out = tmp_path / "eval.csv"
    assert main(["eval", str(clip), "-o", str(out), "--bitrates", "150", *FAST]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert {r["method"] for r in rows} == {"hybrid", "traditional", "prompt-only", "no-refine"}
    out = tmp_path / "ablate.csv"
    assert main(["ablate", str(clip), "-o", str(out), "--bitrate", "150", *FAST]) == 0
    with open(out) as fh:
        assert [r["method"] for r in csv.DictReader(fh)] == ["hybrid", "no-refine", "no-two-stage", "prompt-only"]


def test_synth_uses_env_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("HYBP_SEED", "5")
    a, b = tmp_path / "a.rawv", tmp_path / "b.rawv"
    main(["synth", "noise", "-o", str(a)])
    main(["synth", "noise", "-o", str(b), "--seed", "5"])
    assert a.read_bytes() == b.read_bytes()
