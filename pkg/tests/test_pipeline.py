import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from procident.alphabet import EventString, build_default_config
from procident.exceptions import (
    ConfigMismatchError,
    DegenerateInputError,
    ModelCorruptionError,
    ModelVersionError,
    TrainingError,
)
from procident.knn import Hyperparameters
from procident.pipeline import (
    ProcessClassifier,
    classify_strings,
    classify_traces,
    holdout_evaluation,
    load_strings,
    model_to_dict,
    persist_model,
    projection_from_model,
    projection_from_strings,
    restore_model,
    train_from_strings,
    train_model,
    write_projection,
    write_strings,
)

from conftest import record, write_log

GOLDEN = Path(__file__).parent / "golden"
HYPER = Hyperparameters(k=1, voting="distance_weighted", p=1, m=10)


@pytest.fixture(scope="module")
def model(small_corpus, config):
    return train_from_strings(small_corpus.strings, config, HYPER, seed=0)


def schema(obj):
    if isinstance(obj, dict):
        return {k: schema(v) for k, v in sorted(obj.items())}
    if isinstance(obj, list):
        # distinct element shapes in first-seen order
        seen = {}
        for item in obj:
            shape = schema(item)
            seen.setdefault(json.dumps(shape, sort_keys=True), shape)
        return list(seen.values())
    return type(obj).__name__


def test_model_shape(model):
    assert model.labels == [f"prog0{i}.exe" for i in range(4)]
    assert model.index.dim == model.basis.m == 10
    assert model.provenance["n_strings"] == 120
    assert model.provenance["created"] is None


def test_round_trip(model, tmp_path):
    path = tmp_path / "m.json"
    persist_model(model, path)
    again = restore_model(path)
    assert again == model
    np.testing.assert_array_equal(again.index.points, model.index.points)
    np.testing.assert_array_equal(again.basis.directions.toarray(), model.basis.directions.toarray())


def test_model_file_schema_golden(model):
    want = json.loads((GOLDEN / "model_schema.json").read_text(encoding="utf-8"))
    assert schema(model_to_dict(model)) == want


def test_byte_identical_model_files(small_corpus, config, tmp_path):
    for name in ("a.json", "b.json"):
        persist_model(train_from_strings(small_corpus.strings, config, HYPER, seed=0), tmp_path / name)
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_corrupt_files(model, tmp_path):
    path = tmp_path / "m.json"
    persist_model(model, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ModelCorruptionError):
        restore_model(path)

    doc = json.loads(text)
    doc["format_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelVersionError):
        restore_model(path)

    doc = json.loads(text)
    doc["payload"]["index"]["labels"][0] = "evil.exe"
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelCorruptionError, match="digest"):
        restore_model(path)


def test_single_class_is_training_error(config):
    strings = [EventString(str(i), "only.exe", "ABCDABCD") for i in range(5)]
    with pytest.raises(TrainingError):
        train_from_strings(strings, config, HYPER)


def test_short_trace_skipped_and_unseen_trace_low_confidence(model, small_corpus):
    known = small_corpus.strings[0]
    unseen = EventString("u1", "mystery.exe", "\u01c2" * 8)
    short = EventString("s1", "prog00.exe", known.chars[:5])
    run = classify_strings(model, [known, short, unseen])
    assert run.skipped == [("s1", "below min length 6")]
    by_id = {r.string.trace_id: r for r in run.results}
    assert by_id[known.trace_id].prediction.label == "prog00.exe"
    assert not by_id[known.trace_id].verdict.low_confidence
    odd = by_id["u1"]
    assert odd.verdict.low_confidence and odd.verdict.is_anomaly
    assert odd.prediction.label in model.labels


def _program_log(path, programs, n_traces=4, n_events=12):
    recs = []
    pid = 1
    for image, kinds in programs.items():
        for t in range(n_traces):
            for e in range(n_events):
                etype, value = kinds[e % len(kinds)]
                recs.append(record(type=etype, value=value, subtype=e % 2, ts=1000 * e,
                                   pid=pid, pstart=t, image=image))
            pid += 1
    return write_log(path, recs)


PROGRAMS = {
    "C:\\Tools\\alpha.exe": [("file", "C:\\Tools\\a.txt"), ("network", 50), ("file", "C:\\Windows\\x.dll")],
    "C:\\Tools\\beta.exe": [("registry", "HKLM\\SOFTWARE\\b"), ("image_load", "C:\\Windows\\System32\\user32.dll")],
}


def test_train_and_classify_event_logs(tmp_path, config):
    log = _program_log(tmp_path / "events.jsonl", PROGRAMS)
    m = train_model([log], config, Hyperparameters(m=3), seed=1)
    assert m.labels == ["alpha.exe", "beta.exe"]
    run = classify_traces(m, [log])
    assert len(run.results) == 8 and not any(v.is_anomaly for v in run.verdicts)
    other = build_default_config(dll_groups={"ui": ["user32.dll"]})
    with pytest.raises(ConfigMismatchError):
        classify_traces(m, [log], config=other)


def test_load_strings_mixes_formats(tmp_path, config, small_corpus):
    log = _program_log(tmp_path / "events.jsonl", PROGRAMS, n_traces=1)
    sfile = tmp_path / "strings.jsonl"
    with sfile.open("w", encoding="utf-8") as fh:
        write_strings(small_corpus.strings[:3], fh)
    got = load_strings([sfile, log], config)
    assert got[:3] == small_corpus.strings[:3]
    assert [s.program_name for s in got[3:]] == ["alpha.exe", "beta.exe"]


def test_projection_shared_columns(small_corpus, config, tmp_path):
    data = projection_from_strings(small_corpus.strings, config, seed=0)
    paths = write_projection(data, tmp_path)
    cols = {}
    for p in paths:
        rows = list(csv.reader(p.open(encoding="utf-8")))
        assert rows[0] == ["x", "y", "label"]
        cols[p.stem] = list(zip(*rows[1:]))
    assert cols["projection_1_2"][0] == cols["projection_1_3"][0]
    assert cols["projection_1_3"][1] == cols["projection_2_3"][1]
    assert cols["projection_1_2"][2] == tuple(s.program_name for s in small_corpus.strings)


def test_projection_from_model_and_svg(model, tmp_path):
    data = projection_from_model(model)
    np.testing.assert_array_equal(data.coords, model.index.points[:, :3])
    written = write_projection(data, tmp_path, svg=True)
    svgs = [p for p in written if p.suffix == ".svg"]
    assert len(svgs) == 3 and svgs[0].read_text().lstrip().startswith("<?xml")


def test_projection_single_program_and_rank_errors(small_corpus, config):
    one = [s for s in small_corpus.strings if s.program_name == "prog01.exe"]
    assert set(projection_from_strings(one, config).labels) == {"prog01.exe"}
    flat = [EventString(str(i), "a.exe", "AB" * 4) for i in range(5)]
    with pytest.raises(DegenerateInputError):
        projection_from_strings(flat, config)


def test_holdout_and_estimator(small_corpus, config):
    report = holdout_evaluation(small_corpus.strings, config, HYPER, seed=0)
    assert report.n == 4 * 8
    assert report.micro["accuracy"] >= 0.9
    clf = ProcessClassifier(alphabet=config, n_components=10).fit(small_corpus.strings)
    pred = clf.predict(small_corpus.strings[:10])
    assert list(pred) == [s.program_name for s in small_corpus.strings[:10]]
    assert clf.transform(small_corpus.strings[:2]).shape == (2, 10)
    assert set(clf.get_params()) == {"alphabet", "n_components", "n_neighbors", "weights", "p",
                                     "random_state", "svd_tol"}
