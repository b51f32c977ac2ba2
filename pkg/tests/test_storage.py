import asyncio
import json

import numpy as np
import pytest

from errors import ValidationError
from storage import ArtifactStore
from utils import SEED_RULE


def test_resolve_stays_inside_out_dir(tmp_path):
    store = ArtifactStore(str(tmp_path / "run"))
    assert store.resolve("a/b.csv").startswith(str(tmp_path / "run"))
    with pytest.raises(ValidationError):
        store.resolve("../escape.csv")
    with pytest.raises(ValidationError):
        store.resolve("")


def test_csv_formatting(tmp_path):
    store = ArtifactStore(str(tmp_path))
    rows = [[1, 0.5, True, np.float64(0.25), np.int64(3), float("nan"), "note"]]
    path = asyncio.run(store.save_csv("table.csv", ["i", "x", "flag", "y", "n", "z", "s"], rows))
    with open(path, "rb") as f:
        assert f.read() == b"i,x,flag,y,n,z,s\n1,0.5,1,0.25,3,nan,note\n"


def test_json_round_trip_and_manifest(tmp_path):
    store = ArtifactStore(str(tmp_path / "out"))
    data = {"kind": "lds", "values": [1.0, 2.5]}

    async def scenario():
        await store.save_json("nested/report.json", data)
        loaded = await store.load_json("nested/report.json")
        await store.save_csv("rows.csv", ["a"], [[1]])
        await store.save_manifest("simulate", {"T": 5}, 42, "1.0.0")
        return loaded

    assert asyncio.run(scenario()) == data
    with open(tmp_path / "out" / "manifest.json", encoding="utf-8") as f:
        manifest = json.load(f)
    assert manifest["outputs"] == ["nested/report.json", "rows.csv"]
    assert manifest["master_seed"] == 42
    assert manifest["seed_rule"] == SEED_RULE
    assert manifest["config"] == {"T": 5}
    assert "created_at" in manifest
