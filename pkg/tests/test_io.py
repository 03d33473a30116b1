from __future__ import annotations

import json
import math

import numpy as np

from treecast import io
from treecast.model import derive_from_omega
from treecast.posterior import atom_recursion


def test_fmt():
    assert io.fmt(0.1) == "0.10000000000000001"
    assert io.fmt(np.float64(1 / 3)) == "0.33333333333333331"
    assert io.fmt(3) == "3"
    assert io.fmt(True) == "true"
    assert io.fmt(None) == ""
    assert float(io.fmt(math.pi)) == math.pi


def test_csv_layout():
    text = io.to_csv(("a", "b"), [(1, 0.5), (2, 0.25)])
    assert text == "a,b\n1,0.5\n2,0.25\n"
    assert "\r" not in text


def test_json_schema_and_nonfinite():
    doc = json.loads(io.to_json({"x": math.inf, "y": [math.nan, 1.0], "z": np.int64(3)}))
    assert doc["schema_version"] == "1"
    assert doc["x"] == "inf" and doc["y"] == ["nan", 1.0] and doc["z"] == 3


def test_atoms_round_trip():
    params = derive_from_omega(2, 1.0)
    laws = atom_recursion(params, 2, "paper")
    recs = io.read_atoms_csv(io.atoms_csv(laws.all()))
    assert {r["quantity"] for r in recs} == {"Q", "X"}
    q1 = sorted((r["value"], r["prob"]) for r in recs if r["quantity"] == "Q" and r["condition"] == "1")
    assert q1 == sorted((float(v), float(p)) for v, p in laws.q1.rows())
