from __future__ import annotations

import json
import struct

import numpy as np
import pytest

from biaslens import ingest, synth
from biaslens.errors import DimensionMismatch, DuplicateId, ParseError, SchemaMismatch, UnknownModel

SCHEMA = {"factors": [
    {"name": "bmi", "kind": "continuous", "unit": "kg/m2", "cutpoints": [18.5, 25]},
    {"name": "device", "kind": "categorical", "categories": ["A", "B"]},
]}


def write(tmp_path, rows, schema=SCHEMA, header="id,y_true_g,pred_dl_g,bmi,device"):
    (tmp_path / "schema.json").write_text(json.dumps(schema))
    (tmp_path / "records.csv").write_text(header + "\n" + "\n".join(rows) + "\n")
    return tmp_path / "records.csv", tmp_path / "schema.json"


def test_three_row_csv(tmp_path):
    rec, sch = write(tmp_path, ["a,3000,3100,22.5,A", "b,3200,3000,,B", "c,2800,2900,30,"])
    ds = ingest.load_dataset(rec, sch)
    assert len(ds) == 3
    assert ds.model_names == ["dl"]
    assert ds.y_true.tolist() == [3000, 3200, 2800]
    assert np.isnan(ds.factor("bmi")[1])
    assert ds.factor("device")[2] is None
    assert ds.embeddings is None


def test_negative_truth_names_row(tmp_path):
    rec, sch = write(tmp_path, ["a,3000,3100,22.5,A", "b,-5,3000,20,B"])
    with pytest.raises(ParseError, match="line 3"):
        ingest.load_dataset(rec, sch)


def test_nonpositive_prediction_rejected(tmp_path):
    rec, sch = write(tmp_path, ["a,3000,0,22.5,A"])
    with pytest.raises(ParseError, match="line 2"):
        ingest.load_dataset(rec, sch)


def test_duplicate_id(tmp_path):
    rec, sch = write(tmp_path, ["a,3000,3100,22.5,A", "a,3000,3100,22.5,A"])
    with pytest.raises(DuplicateId):
        ingest.load_dataset(rec, sch)


@pytest.mark.parametrize("rows, header", [
    (["a,3000,3100,fat,A"], None),
    (["a,3000,3100,22,C"], None),
    (["a,3000,3100,22,A,1"], "id,y_true_g,pred_dl_g,bmi,device,extra"),
])
def test_schema_mismatch(tmp_path, rows, header):
    rec, sch = write(tmp_path, rows, header=header or "id,y_true_g,pred_dl_g,bmi,device")
    with pytest.raises(SchemaMismatch):
        ingest.load_dataset(rec, sch)


def test_ragged_row_is_parse_error(tmp_path):
    rec, sch = write(tmp_path, ["a,3000,3100,22"])
    with pytest.raises(ParseError):
        ingest.load_dataset(rec, sch)


def test_schema_rejects_bad_cutpoints_and_duplicates():
    with pytest.raises(SchemaMismatch):
        ingest.FactorSpec("x", "continuous", cutpoints=(2.0, 1.0))
    with pytest.raises(SchemaMismatch):
        ingest.FactorSchema((ingest.FactorSpec("x", "continuous"), ingest.FactorSpec("x", "categorical")))


def test_embedding_dimension_mismatch_csv(tmp_path):
    rec, sch = write(tmp_path, ["a,3000,3100,22.5,A", "b,3200,3000,20,B"])
    emb = tmp_path / "emb.csv"
    header = "id," + ",".join(f"e{i}" for i in range(388))
    emb.write_text(header + "\n" + "a," + ",".join(["0.5"] * 388) + "\n" + "b," + ",".join(["0.5"] * 387) + "\n")
    with pytest.raises(DimensionMismatch):
        ingest.load_dataset(rec, sch, emb)


def _blns(records, dim):
    out = bytearray(b"BLNS" + struct.pack("<II", len(records), dim))
    for rid, vec in records:
        b = rid.encode()
        out += struct.pack("<I", len(b)) + b + np.asarray(vec, dtype="<f4").tobytes()
    return bytes(out)


def test_blns_reader_and_missing_embedding_flagged(tmp_path):
    rec, sch = write(tmp_path, ["a,3000,3100,22.5,A", "b,3200,3000,20,B"])
    path = tmp_path / "emb.bin"
    path.write_bytes(_blns([("a", [1.0, 2.0, 3.0])], 3))
    ds = ingest.load_dataset(rec, sch, path)
    assert ds.embedding_dim == 3
    assert ds.has_embedding.tolist() == [True, False]
    assert ds.embeddings[0].tolist() == [1.0, 2.0, 3.0]


def test_blns_trailing_and_truncated(tmp_path):
    good = _blns([("a", [1.0, 2.0])], 2)
    (tmp_path / "t.bin").write_bytes(good + b"\x00")
    with pytest.raises(ParseError):
        ingest.read_embeddings(tmp_path / "t.bin")
    (tmp_path / "u.bin").write_bytes(good[:-2])
    with pytest.raises(ParseError):
        ingest.read_embeddings(tmp_path / "u.bin")


def test_validate_examples():
    cfg = synth.planted_slices(n=10, seed=0)
    for f in cfg.factors:
        f.missing_rate = 0.0
    ds, _ = synth.generate(cfg)
    rep = ingest.validate(ds)
    assert all(v == 0.0 for v in rep.missingness.values())
    assert rep.embedding_coverage == 1.0

    bmi = ds.factors["bmi"].copy()
    bmi[[2, 7]] = np.nan
    ds2 = ingest.Dataset(ds.ids, ds.y_true, ds.predictions, {**ds.factors, "bmi": bmi}, ds.schema, None)
    rep2 = ingest.validate(ds2)
    assert rep2.missingness["bmi"] == pytest.approx(0.2)
    assert rep2.embedding_coverage == 0.0
    assert any("slice discovery is unavailable" in w for w in rep2.warnings)
    assert ingest.validate(ds2) == rep2


@pytest.mark.parametrize("fmt", ["bin", "csv"])
def test_round_trip(tmp_path, fmt):
    ds, _ = synth.generate(synth.mixed(n=200, seed=3, embedding_dim=4))
    # the binary sidecar stores float32; round-trip equality holds for float32-representable values
    emb = ds.embeddings.astype(np.float32).astype(float)
    ds = ingest.Dataset(ds.ids, ds.y_true, ds.predictions, ds.factors, ds.schema, emb)
    paths = ingest.save_dataset(ds, tmp_path, fmt)
    back = ingest.load_dataset(paths["records"], paths["schema"], paths["embeddings"])
    assert back.equals(ds)
    paths2 = ingest.save_dataset(back, tmp_path / "again", fmt)
    assert ingest.file_digest(paths["records"]) == ingest.file_digest(paths2["records"])


def test_unknown_model():
    ds, _ = synth.generate(synth.mixed(n=20, seed=0))
    with pytest.raises(UnknownModel):
        ds.prediction("nope")


def test_dataset_arrays_read_only():
    ds, _ = synth.generate(synth.mixed(n=20, seed=0))
    with pytest.raises(ValueError):
        ds.y_true[0] = 1.0
