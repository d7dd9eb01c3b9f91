import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxanon.errors import DataError, FormatError, IoError, SchemaError
from voxanon.io_formats import (
    Embedding,
    FeatureSequence,
    Transcript,
    Trial,
    TrialScore,
    decode_npy,
    encode_npy,
    read_embedding,
    read_feature_file,
    read_label_file,
    read_score_file,
    read_speaker_map,
    read_token_file,
    read_transcripts,
    read_trial_list,
    write_embedding,
    write_feature_file,
    write_label_file,
    write_score_file,
    write_speaker_map,
    write_token_file,
    write_npy,
    write_transcripts,
    write_trial_list,
)


def _write_raw(path, header: str, payload: bytes, version=b"\x01\x00"):
    hdr = header.encode("latin1")
    pad = 64 - (10 + len(hdr) + 1) % 64
    hdr = hdr + b" " * pad + b"\n"
    path.write_bytes(b"\x93NUMPY" + version + struct.pack("<H", len(hdr)) + hdr + payload)


def test_read_small_matrix(tmp_path):
    p = tmp_path / "utt1.npy"
    np.save(p, np.array([[1.0, 2.0], [3.0, 4.0]], dtype="<f4"))
    seq = read_feature_file(p)
    assert seq.utterance_id == "utt1"
    assert (seq.T, seq.D) == (2, 2)
    assert seq.frames.tolist() == [[1.0, 2.0], [3.0, 4.0]]


def test_minimal_one_by_one(tmp_path):
    p = tmp_path / "x.npy"
    np.save(p, np.zeros((1, 1), dtype="<f4"))
    seq = read_feature_file(p)
    assert seq.frames.shape == (1, 1) and seq.frames[0, 0] == 0.0


def test_write_payload_is_le_float32(tmp_path):
    p = tmp_path / "five.npy"
    write_feature_file(FeatureSequence(np.array([[5.0]]), "five"), p)
    raw = p.read_bytes()
    assert raw[:8] == b"\x93NUMPY\x01\x00"
    assert raw[-4:] == bytes.fromhex("0000a040")
    assert len(raw) % 64 == 4  # header padded to a 64-byte boundary
    assert np.load(p).tolist() == [[5.0]]


def test_write_into_missing_directory(tmp_path):
    with pytest.raises(IoError):
        write_feature_file(FeatureSequence(np.ones((1, 1)), "u"), tmp_path / "nope" / "u.npy")


def test_round_trip_100_random_matrices(tmp_path):
    rng = np.random.default_rng(1234)
    for i in range(100):
        shape = (int(rng.integers(1, 40)), int(rng.integers(1, 20)))
        x = (rng.standard_normal(shape) * 10 ** rng.uniform(-3, 3)).astype(np.float32)
        p = tmp_path / f"u{i}.npy"
        write_feature_file(FeatureSequence(x, f"u{i}"), p)
        back = read_feature_file(p).frames
        assert back.tobytes() == x.tobytes()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(width=32, allow_nan=False, allow_infinity=False), min_size=1, max_size=60),
       st.integers(1, 6))
def test_encode_decode_bitwise(values, d):
    rows = max(1, len(values) // d)
    arr = np.resize(np.array(values, dtype=np.float32), (rows, d))
    back = decode_npy(encode_npy(arr), ndim=2)
    assert back.tobytes() == arr.tobytes()


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.npy"
    p.write_bytes(b"NOTNUMPY" + b"\x00" * 120)
    with pytest.raises(FormatError):
        read_feature_file(p)


def test_version_two_rejected(tmp_path):
    p = tmp_path / "v2.npy"
    np.lib.format.write_array(open(p, "wb"), np.ones((2, 2), dtype="<f4"), version=(2, 0))
    with pytest.raises(FormatError):
        read_feature_file(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "t.npy"
    np.save(p, np.ones((3, 3), dtype="<f4"))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(FormatError):
        read_feature_file(p)


@pytest.mark.parametrize(
    "arr",
    [
        np.ones((2, 2), dtype="<f8"),
        np.ones((2, 2), dtype=">f4"),
        np.ones((2, 2), dtype="<i4"),
        np.ones(4, dtype="<f4"),
        np.ones((2, 2, 2), dtype="<f4"),
    ],
)
def test_wrong_dtype_or_rank(tmp_path, arr):
    p = tmp_path / "w.npy"
    np.save(p, arr)
    with pytest.raises(SchemaError):
        read_feature_file(p)


def test_fortran_order_rejected(tmp_path):
    p = tmp_path / "f.npy"
    _write_raw(p, "{'descr': '<f4', 'fortran_order': True, 'shape': (2, 2), }", np.ones(4, "<f4").tobytes())
    with pytest.raises(SchemaError):
        read_feature_file(p)


def test_non_finite_rejected(tmp_path):
    p = tmp_path / "n.npy"
    np.save(p, np.array([[1.0, np.nan]], dtype="<f4"))
    with pytest.raises(DataError):
        read_feature_file(p)


def test_embedding_round_trip_with_speaker_map(tmp_path):
    vec = np.array([0.5, -1.25, 3.0], dtype=np.float32)
    write_embedding(Embedding(vec, "utt7", "spk2"), tmp_path / "utt7.npy")
    write_speaker_map({"utt7": "spk2"}, tmp_path / "spk.json")
    emb = read_embedding(tmp_path / "utt7.npy", read_speaker_map(tmp_path / "spk.json"))
    assert emb.vector.tobytes() == vec.tobytes()
    assert emb.speaker_id == "spk2"


def test_zero_embedding_rejected():
    with pytest.raises(DataError):
        Embedding(np.zeros(4), "u")


def test_trial_list_parse(tmp_path):
    p = tmp_path / "trials"
    p.write_text("spk1 utt9 target\nspk1 utt3 nontarget\n")
    tl = read_trial_list(p)
    assert tl.entries[0] == Trial("spk1", "utt9", True)
    assert tl.entries[1].is_target is False


def test_trial_list_errors(tmp_path):
    p = tmp_path / "trials"
    p.write_text("spk1 utt9 maybe\n")
    with pytest.raises(SchemaError):
        read_trial_list(p)
    p.write_text("spk1 utt9\n")
    with pytest.raises(FormatError):
        read_trial_list(p)
    p.write_text("spk1 utt9 target\nspk1 utt9 nontarget\n")
    with pytest.raises(DataError):
        read_trial_list(p)


def test_trial_list_generated_50_lines(tmp_path):
    rng = np.random.default_rng(5)
    expected = [
        (f"spk{rng.integers(10)}", f"utt{i:03d}", bool(rng.integers(2)))
        for i in range(50)
    ]
    p = tmp_path / "trials"
    p.write_text("".join(f"{a} {b} {'target' if c else 'nontarget'}\n" for a, b, c in expected))
    tl = read_trial_list(p)
    assert [(t.enroll_speaker_id, t.test_utterance_id, t.is_target) for t in tl] == expected
    write_trial_list(tl, tmp_path / "again")
    assert read_trial_list(tmp_path / "again").entries == tl.entries


def test_score_file_round_trip_exact(tmp_path):
    rng = np.random.default_rng(9)
    scores = [
        TrialScore(float(rng.uniform(-1, 1)), bool(rng.integers(2)), f"s{i % 4}", f"u{i}")
        for i in range(200)
    ]
    write_score_file(scores, tmp_path / "scores")
    assert read_score_file(tmp_path / "scores") == scores


def test_score_file_decimal_point(tmp_path):
    write_score_file([TrialScore(0.5, True, "a", "b")], tmp_path / "s")
    assert (tmp_path / "s").read_text() == "a b 0.5 target\n"


def test_transcripts_round_trip(tmp_path):
    ts = [Transcript("u1", ["hello", "World"]), Transcript("u2", []), Transcript("u3", ["ça", "va"])]
    write_transcripts(ts, tmp_path / "t.txt")
    back = read_transcripts(tmp_path / "t.txt")
    assert list(back) == ["u1", "u2", "u3"]
    assert [back[t.utterance_id].words for t in ts] == [t.words for t in ts]


def test_transcript_word_validation():
    with pytest.raises(DataError):
        Transcript("u", ["two words"])


def test_token_and_label_files(tmp_path):
    tokens = {"a": [5, 2, 7], "b": []}
    write_token_file(tokens, tmp_path / "tok")
    assert read_token_file(tmp_path / "tok") == tokens
    labels = {"u1": "happy", "u2": "sad"}
    write_label_file(labels, tmp_path / "lab")
    assert read_label_file(tmp_path / "lab") == labels


def test_no_partial_file_on_failed_write(tmp_path):
    p = tmp_path / "keep.npy"
    write_feature_file(FeatureSequence(np.ones((2, 2)), "keep"), p)
    before = p.read_bytes()
    with pytest.raises(SchemaError):
        write_npy(p, np.ones((2, 2), dtype=np.float64))
    assert p.read_bytes() == before
    assert sorted(x.name for x in tmp_path.iterdir()) == ["keep.npy"]


def test_speaker_map_schema(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"u": 3}))
    with pytest.raises(SchemaError):
        read_speaker_map(tmp_path / "m.json")
