import json

import numpy as np
import pytest

from mvcl.autodiff import ParameterStore
from mvcl.encoder import CLS, DEL, PAD, UNK, Encoder, EncoderConfig, Vocabulary, load_fixture
from mvcl.errors import ConfigError, FixtureMiss, FormatError


def _encoder(kind="lookup", d=8, fixture=None, buckets=0, seed=0):
    vocab = Vocabulary(["a", "b", "c", "x", "."], buckets=buckets)
    cfg = EncoderConfig(kind=kind, d=d, hidden=4, buckets=buckets,
                        fixture_path="unused" if kind == "fixture" else None)
    return Encoder(cfg, vocab, ParameterStore(), np.random.default_rng(seed), fixture=fixture)


def test_reserved_ids_distinct_and_stable():
    v1, v2 = Vocabulary(["z", "a"]), Vocabulary.build([["q", "r"]])
    for v in (v1, v2):
        assert [v.id(t) for t in (PAD, UNK, CLS, DEL)] == [0, 1, 2, 3]
    assert v1.id("never-seen") == v1.id(UNK)


def test_hash_buckets_stable():
    v = Vocabulary(["a"], buckets=7)
    first = v.id("unseen-token")
    assert 5 <= first < 12
    assert Vocabulary.from_dict(v.to_dict()).id("unseen-token") == first


def test_lookup_shape_and_context_free():
    enc = _encoder()
    h = enc.encode(["a", "b", "a", "c", "x"]).data
    assert h.shape == (5, 8)
    np.testing.assert_array_equal(h[0], h[2])


def test_cls_framing_adds_one_row():
    enc = _encoder("lookup_recurrent")
    assert enc.encode(["a", "b"], cls=True).shape == (3, 8)
    assert enc.encode(["a", "b"]).shape == (2, 8)


def test_recurrent_is_context_sensitive():
    enc = _encoder("lookup_recurrent", seed=3)
    h = enc.encode(["a", "b", "a", "c"]).data
    assert not np.allclose(h[0], h[2])


def test_padding_does_not_leak_into_rows():
    enc = _encoder("lookup_recurrent")
    alone = enc.encode(["a", "b"]).data
    h, mask = enc.encode_batch([["a", "b"], ["c", "x", ".", "a", "b"]])
    np.testing.assert_allclose(h.data[0, :2], alone, atol=1e-14)
    np.testing.assert_array_equal(mask[0], [True, True, False, False, False])


def test_del_masking_changes_encoding():
    enc = _encoder("lookup_recurrent")
    plain = enc.encode(["a", ".", "b", "c"]).data
    masked = enc.encode(["a", ".", DEL, DEL]).data
    assert not np.allclose(plain, masked)
    np.testing.assert_array_equal(enc.encode([DEL, DEL]).data, enc.encode([DEL, DEL]).data)


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(kind="transformer").validate()
    with pytest.raises(ConfigError):
        EncoderConfig(d=1).validate()
    with pytest.raises(ConfigError):
        EncoderConfig(kind="fixture").validate()


def _write_fixture(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def test_fixture_roundtrip(tmp_path):
    vecs = [[0.1, 0.2, 0.3, 0.4], [1, 2, 3, 4], [-1, 0, 1, 0]]
    fixture = load_fixture(_write_fixture(tmp_path / "e.jsonl", [{"id": "A", "vectors": vecs}]))
    enc = _encoder("fixture", d=4, fixture=fixture)
    h = enc.encode(["a", "b", "c"], case_id="A").data
    assert h.shape == (3, 4)
    np.testing.assert_array_equal(h, np.asarray(vecs, dtype=float))


def test_fixture_errors(tmp_path):
    with pytest.raises(FormatError):
        load_fixture(_write_fixture(tmp_path / "r.jsonl",
                                    [{"id": "A", "vectors": [[1, 2], [1, 2, 3]]}]))
    with pytest.raises(FormatError):
        load_fixture(_write_fixture(tmp_path / "m.jsonl", [{"id": "A", "vectors": [[1, 2]]},
                                                           {"id": "B", "vectors": [[1, 2, 3]]}]))
    fixture = {"A": np.ones((2, 4))}
    enc = _encoder("fixture", d=4, fixture=fixture)
    with pytest.raises(FixtureMiss):
        enc.encode(["a"], case_id="Z")
    with pytest.raises(FormatError):
        _encoder("fixture", d=6, fixture=fixture)


def test_fixture_del_uses_trainable_row():
    enc = _encoder("fixture", d=4, fixture={"A": np.arange(12.0).reshape(3, 4)})
    h = enc.encode(["a", DEL, "c"], case_id="A").data
    np.testing.assert_array_equal(h[1], enc.del_vec.data)
    np.testing.assert_array_equal(h[0], [0, 1, 2, 3])
