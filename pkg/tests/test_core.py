import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from softvc import core
from softvc.errors import DataError, FormatError, ParseError


class TestTensorFile:
    def test_single_one_exact_bytes(self, tmp_path):
        path = tmp_path / "one.vcft"
        core.write_tensor("VCFT", np.array([[1.0]]), path)
        assert path.read_bytes() == bytes.fromhex("56434654" "01000000" "01000000" "01000000" "0000803f")

    def test_zero_matrix_payload(self, tmp_path):
        path = tmp_path / "z.vcml"
        core.write_tensor("VCML", np.zeros((2, 2)), path)
        data = path.read_bytes()
        assert len(data) == 16 + 16
        assert data[16:] == bytes(16)

    def test_round_trip_random(self, tmp_path):
        m = np.random.default_rng(0).normal(size=(7, 3)).astype(np.float32)
        path = tmp_path / "r.vcem"
        core.write_tensor("VCEM", m, path)
        kind, back = core.read_tensor(path)
        assert kind == "VCEM"
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, m)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(b"XXXX" + struct.pack("<III", 1, 1, 1) + bytes(4))
        with pytest.raises(FormatError):
            core.read_tensor(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short"
        path.write_bytes(b"VCFT" + struct.pack("<III", 1, 2, 2) + bytes(12))
        with pytest.raises(FormatError):
            core.read_tensor(path)

    def test_nan_payload(self, tmp_path):
        path = tmp_path / "nan"
        path.write_bytes(b"VCFT" + struct.pack("<III", 1, 1, 1) + struct.pack("<f", float("nan")))
        with pytest.raises(DataError):
            core.read_tensor(path)

    def test_write_rejects_nonfinite_and_empty(self, tmp_path):
        with pytest.raises(DataError):
            core.write_tensor("VCFT", np.array([[np.inf]]), tmp_path / "x")
        with pytest.raises(DataError):
            core.write_tensor("VCFT", np.zeros((0, 3)), tmp_path / "x")

    def test_unknown_kind_on_write(self, tmp_path):
        with pytest.raises(FormatError):
            core.write_tensor("ABCD", np.ones((1, 1)), tmp_path / "x")

    def test_io_error_mentions_path(self, tmp_path):
        missing = tmp_path / "nope" / "x.vcft"
        with pytest.raises(OSError, match="nope"):
            core.write_tensor("VCFT", np.ones((1, 1)), missing)

    @settings(max_examples=60, deadline=None)
    @given(
        hnp.arrays(
            np.float32,
            hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=64),
            elements=st.floats(width=32, allow_nan=False, allow_infinity=False),
        )
    )
    def test_round_trip_is_bit_exact(self, matrix):
        data = core.tensor_to_bytes("VCFT", matrix)
        _, back = core.tensor_from_bytes(data)
        assert back.tobytes() == matrix.astype("<f4").tobytes()
        # byte-stable regardless of host order: re-encoding yields the same bytes
        assert core.tensor_to_bytes("VCFT", back) == data


class TestUnitFile:
    def test_round_trip(self, tmp_path):
        seq = core.UnitSequence("u", np.array([0, 5, 99, 3]), 100)
        path = tmp_path / "u.vcun"
        core.write_units(seq, path)
        data = path.read_bytes()
        assert data[:4] == b"VCUN"
        assert struct.unpack("<II", data[4:12]) == (1, 4)
        back = core.read_units(path, K=100)
        np.testing.assert_array_equal(back.units, seq.units)

    def test_truncated(self, tmp_path):
        path = tmp_path / "u.vcun"
        path.write_bytes(b"VCUN" + struct.pack("<II", 1, 3) + bytes(4))
        with pytest.raises(FormatError):
            core.read_units(path)

    def test_ids_must_be_below_k(self):
        with pytest.raises(DataError):
            core.UnitSequence("u", np.array([0, 4]), 4)


class TestContainer:
    def test_round_trip_and_sidecar(self, tmp_path):
        rng = np.random.default_rng(1)
        tensors = {"W": rng.normal(size=(3, 2)), "b": rng.normal(size=3)}
        path = tmp_path / "c.ckpt"
        core.write_container("VCSE", tensors, {"step": 3}, path)
        kind, back, meta = core.read_container(path, "VCSE")
        assert kind == "VCSE" and meta == {"step": 3}
        np.testing.assert_array_equal(back["W"], tensors["W"].astype(np.float32))
        np.testing.assert_array_equal(back["b"], tensors["b"].astype(np.float32)[None, :])
        assert json.loads((tmp_path / "c.ckpt.json").read_text()) == {"step": 3}

    def test_wrong_kind(self, tmp_path):
        path = tmp_path / "c.ckpt"
        core.write_container("VCAC", {"x": np.ones((1, 1))}, {}, path)
        with pytest.raises(FormatError):
            core.read_container(path, "VCSE")

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "c.ckpt"
        core.write_container("VCAC", {"x": np.ones((1, 1))}, {}, path)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(FormatError):
            core.read_container(path)


class TestManifest:
    def _write(self, tmp_path, lines):
        path = tmp_path / "m.jsonl"
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_two_records_in_order(self, tmp_path):
        path = self._write(tmp_path, [
            json.dumps({"id": "a", "speaker": "s1", "feature_path": "a.vcft"}),
            json.dumps({"id": "b", "speaker": "s2", "feature_path": "b.vcft", "transcript_words": "hi"}),
        ])
        m = core.parse_manifest(path)
        assert [r.id for r in m] == ["a", "b"]
        assert m.records[1].transcript_words == "hi"
        assert m.records[0].resolve("feature_path") == tmp_path / "a.vcft"

    def test_duplicate_id(self, tmp_path):
        rec = json.dumps({"id": "a", "speaker": "s", "feature_path": "a"})
        with pytest.raises(DataError):
            core.parse_manifest(self._write(tmp_path, [rec, rec]))

    def test_missing_speaker(self, tmp_path):
        path = self._write(tmp_path, [json.dumps({"id": "a", "feature_path": "a"})])
        with pytest.raises(ParseError, match="speaker"):
            core.parse_manifest(path)

    def test_malformed_line_number(self, tmp_path):
        path = self._write(tmp_path, [json.dumps({"id": "a", "speaker": "s", "feature_path": "a"}), "{oops"])
        with pytest.raises(ParseError, match="line 2"):
            core.parse_manifest(path)


def test_feature_sequence_rejects_nan():
    with pytest.raises(DataError):
        core.FeatureSequence("u", "s", np.array([[np.nan]]))
