import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from shoutcomp.compensation import (CompensationModel, MemlinBiasTable, RatzBiasTable,
                                    SpliceBiasTable, Technique)
from shoutcomp.data import Gender
from shoutcomp.detector import LogisticModel
from shoutcomp.errors import ModelFormatError
from shoutcomp.gmm import DiagonalGmm
from shoutcomp.serialization import dumps, load_model, loads, save_model, to_dict


def random_gmm(rng, k, d):
    w = rng.random(k) + 0.1
    return DiagonalGmm(rng.standard_normal((k, d)) * 10, rng.random((k, d)) + 1e-3, w / w.sum())


def test_one_component_round_trip(tmp_path):
    g = DiagonalGmm([[0.1, -2.0]], [[1.0, 0.3]], [1.0])
    save_model(g, tmp_path / "g.json")
    assert load_model(tmp_path / "g.json") == g


def test_large_gmm_round_trip(tmp_path):
    g = random_gmm(np.random.default_rng(1), 8, 512)
    save_model(g, tmp_path / "g.json")
    back = load_model(tmp_path / "g.json", "gmm")
    assert back == g
    assert back.means.tobytes() == g.means.tobytes()


def test_version_mismatch():
    doc = to_dict(DiagonalGmm([[0.0]], [[1.0]], [1.0]))
    doc["format_version"] = 99
    with pytest.raises(ModelFormatError, match="version"):
        loads(json.dumps(doc))


def test_kind_mismatch():
    text = dumps(DiagonalGmm([[0.0]], [[1.0]], [1.0]))
    with pytest.raises(ModelFormatError, match="logistic_detector"):
        loads(text, "logistic_detector")


def test_files_are_self_describing():
    doc = json.loads(dumps(LogisticModel(0.5, [1.0, 2.0])))
    assert doc["format_version"] == 1 and doc["kind"] == "logistic_detector" and doc["dim"] == 2


def test_compensation_bundle_round_trip():
    rng = np.random.default_rng(0)
    gx, gy = random_gmm(rng, 2, 3), random_gmm(rng, 3, 3)
    cross = rng.random((3, 2))
    table = MemlinBiasTable(rng.standard_normal((2, 3, 3)), cross / cross.sum(1, keepdims=True))
    sub = CompensationModel(Technique.SPLICE, SpliceBiasTable(rng.standard_normal((3, 3))),
                            None, gy)
    m = CompensationModel(Technique.MEMLIN, table, gx, gy, {Gender.FEMALE: CompensationModel(
        Technique.MEMLIN, table, gx, gy)}, "posterior")
    back = loads(dumps(m))
    assert back.table == m.table and back.normal_gmm == gx and back.shouted_gmm == gy
    assert back.memlin_cross.value == "posterior"
    assert back.gender_partition[Gender.FEMALE].table == table
    assert loads(dumps(sub)).table == sub.table


finite = st.floats(-1e300, 1e300, allow_nan=False, allow_infinity=False)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_gmm_round_trip_property(k, d, seed):
    g = random_gmm(np.random.default_rng(seed), k, d)
    assert loads(dumps(g)) == g


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 6), elements=finite), finite)
def test_detector_round_trip_property(w, b):
    m = LogisticModel(b, w)
    assert loads(dumps(m)) == m


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=finite))
def test_table_round_trip_property(b):
    for cls in (RatzBiasTable, SpliceBiasTable):
        t = cls(b)
        assert loads(dumps(t)) == t
