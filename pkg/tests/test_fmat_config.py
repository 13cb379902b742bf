import json

import numpy as np
import pytest

from voxmerge.config import default_config, digest, load_config, mlp_config, synth_config
from voxmerge.errors import FormatError
from voxmerge.fmat import FeatureMatrix, hstack


def _fm(rng, rows=7, blocks=(("a", 3), ("b", 2)), ds="d1"):
    return FeatureMatrix(rng.normal(size=(rows, sum(k for _, k in blocks))), list(blocks), ds, "c1")


def test_fmat_roundtrip(tmp_path, rng):
    fm = _fm(rng)
    fm.save(tmp_path / "x.fmat")
    back = FeatureMatrix.load(tmp_path / "x.fmat")
    assert back.blocks == fm.blocks
    assert back.dataset_hash == "d1" and back.config_hash == "c1"
    np.testing.assert_array_equal(back.values, fm.values)
    assert back.values.dtype == np.float32


def test_fmat_format_errors(tmp_path, rng):
    fm = _fm(rng)
    p = tmp_path / "x.fmat"
    fm.save(p)
    raw = p.read_bytes()
    (tmp_path / "short.fmat").write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        FeatureMatrix.load(tmp_path / "short.fmat")
    (tmp_path / "magic.fmat").write_bytes(raw.replace(b"FMAT1", b"VOL1", 1))
    with pytest.raises(FormatError):
        FeatureMatrix.load(tmp_path / "magic.fmat")
    (tmp_path / "junk.fmat").write_bytes(b"not json\n" + raw)
    with pytest.raises(FormatError):
        FeatureMatrix.load(tmp_path / "junk.fmat")


def test_fmat_validation(rng):
    with pytest.raises(ValueError):
        FeatureMatrix(np.zeros((2, 4)), [("a", 3)])
    with pytest.raises(ValueError):
        FeatureMatrix(np.zeros((2, 4)), [("a", 2), ("a", 2)])


def test_fmat_select_and_offsets(rng):
    fm = _fm(rng, blocks=(("a", 3), ("b", 2), ("c", 4)))
    assert fm.offsets() == {"a": (0, 3), "b": (3, 5), "c": (5, 9)}
    sel = fm.select(["c", "a"])
    assert sel.blocks == [("c", 4), ("a", 3)]
    np.testing.assert_array_equal(sel.values, np.hstack([fm.values[:, 5:9], fm.values[:, 0:3]]))
    with pytest.raises(KeyError):
        fm.select(["zzz"])


def test_hstack(rng):
    a = _fm(rng, blocks=(("a", 3),))
    b = _fm(rng, blocks=(("b", 2),))
    s = hstack([a, b], "cfg")
    assert s.blocks == [("a", 3), ("b", 2)] and s.config_hash == "cfg"
    np.testing.assert_array_equal(s.block("b"), b.values)
    with pytest.raises(ValueError):
        hstack([a, _fm(rng, blocks=(("b", 2),), ds="other")])
    with pytest.raises(ValueError):
        hstack([a, _fm(rng, rows=3, blocks=(("b", 2),))])
    with pytest.raises(ValueError):
        hstack([])


def test_config_merge(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"learn": {"K": 16}, "sets": {"mine": ["size"]},
                             "experiments": {"x": {"set": "mine", "model": "boost", "augment": []}}}))
    cfg = load_config(p)
    assert cfg["learn"]["K"] == 16 and cfg["learn"]["alpha"] == default_config()["learn"]["alpha"]
    assert cfg["sets"]["mine"] == ["size"]
    assert "x" in cfg["experiments"] and "baseline" in cfg["experiments"]


@pytest.mark.parametrize("doc", [{"learn": {"KK": 1}}, {"nope": 1},
                                 {"experiments": {"x": {"set": "missing", "model": "mlp", "augment": []}}}])
def test_config_rejects(tmp_path, doc):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(KeyError):
        load_config(p)


def test_digest_stable():
    assert digest({"a": 1, "b": [1, 2]}) == digest({"b": [1, 2], "a": 1})
    assert digest({"a": 1}) != digest({"a": 2})
    assert len(digest(default_config())) == 16


def test_typed_views():
    cfg = default_config()
    s = synth_config(cfg)
    assert tuple(cfg["synth"]["dims"]) == tuple(s.dims)
    m = mlp_config(cfg, "mlp2")
    assert list(m.hidden) == [200, 200]
