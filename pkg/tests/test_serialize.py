"""Model files: bitwise save/load round trips and malformed-file handling."""

import json
import os

import numpy as np
import pytest

from flowtopo.bases import ClassPrior
from flowtopo.config import build_model, make_config
from flowtopo.errors import InvalidInputError, ModelFormatError
from flowtopo.rng import RngStream
from flowtopo.serialize import (
    FORMAT_TAG,
    atomic_write_text,
    base_spec,
    flow_spec,
    load_model,
    model_to_dict,
    save_model,
)


def _model(flow_kind="realnvp", base_kind="crsb", seed=0):
    cfg = make_config({
        "flow": {"kind": flow_kind, "hidden": [8]},
        "base": {"kind": base_kind, "hidden": [8], "truncation": 5},
    })
    model = build_model(cfg, seed)
    # perturb every parameter so the round trip is tested on non-init values
    rng = RngStream(seed, 77)
    for p in model.parameters():
        p.data = p.data + 0.1 * rng.standard_normal(p.data.shape)
    return model


def _probe_points(n=100):
    return RngStream(123, 88).standard_normal((n, 2)) * 1.5


class TestRoundTrip:
    @pytest.mark.parametrize("flow_kind,base_kind", [
        ("realnvp", "crsb"),
        ("realnvp", "gaussian"),
        ("nsf", "mog"),
        ("nsf", "rsb"),
    ])
    def test_logprob_is_bitwise_identical_after_reload(self, tmp_path,
                                                       flow_kind, base_kind):
        model = _model(flow_kind, base_kind)
        if hasattr(model.base, "freeze_z"):
            model.base.freeze_z(512, RngStream(0, 6))
        path = str(tmp_path / "m.json")
        save_model(model, path)
        again = load_model(path)
        pts = _probe_points()
        assert np.array_equal(model.score(pts), again.score(pts))
        labels = np.zeros(pts.shape[0], dtype=np.int64)
        with_y = model.logprob(pts, labels).data
        assert np.array_equal(with_y, again.logprob(pts, labels).data)

    def test_every_parameter_survives_exactly(self, tmp_path):
        model = _model("nsf", "crsb")
        path = str(tmp_path / "m.json")
        save_model(model, path)
        again = load_model(path)
        ours = model.parameters()
        theirs = again.parameters()
        assert len(ours) == len(theirs)
        for a, b in zip(ours, theirs):
            assert np.array_equal(a.data, b.data)

    def test_frozen_z_state_survives_exactly(self, tmp_path):
        model = _model("realnvp", "crsb")
        model.base.freeze_z(777, RngStream(4, 6))
        path = str(tmp_path / "m.json")
        save_model(model, path)
        again = load_model(path)
        assert np.array_equal(model.base.z_value, again.base.z_value)
        assert again.base.z_samples == 777
        assert again.base.truncation == 5

    def test_unfrozen_base_reloads_unfrozen(self, tmp_path):
        model = _model("realnvp", "rsb")
        path = str(tmp_path / "m.json")
        save_model(model, path)
        assert load_model(path).base.z_value is None

    def test_non_uniform_prior_survives(self, tmp_path):
        model = _model("realnvp", "mog")
        model.prior = ClassPrior.from_labels(np.array([0, 0, 0, 1]), 2)
        path = str(tmp_path / "m.json")
        save_model(model, path)
        again = load_model(path)
        assert np.array_equal(model.prior.probs, again.prior.probs)

    def test_provenance_and_meta_survive(self, tmp_path):
        model = _model()
        path = str(tmp_path / "m.json")
        save_model(model, path, provenance={"steps": 42, "note": "hello"})
        again = load_model(path)
        assert again.meta["steps"] == 42
        assert again.meta["note"] == "hello"
        assert again.meta["seed"] == model.meta["seed"]
        assert again.meta["config_hash"] == model.meta["config_hash"]
        assert again.meta["flow"]["kind"] == "realnvp"

    def test_saved_twice_identical_bytes(self, tmp_path):
        model = _model()
        a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        save_model(model, a)
        save_model(model, b)
        assert open(a, "rb").read() == open(b, "rb").read()


class TestSpecs:
    def test_flow_spec_reads_live_object(self):
        model = _model("nsf", "gaussian")
        spec = flow_spec(model.flow)
        assert spec["kind"] == "nsf"
        assert spec["layers"] == 5
        assert spec["hidden"] == [8]
        assert spec["bins"] == 8
        assert spec["bound"] == 4.0

    def test_base_spec_reads_live_object(self):
        model = _model("realnvp", "crsb")
        spec = base_spec(model.base)
        assert spec == {"kind": "crsb", "truncation": 5, "hidden": [8],
                        "accept_floor": 1e-3, "ema_decay": 0.99}
        assert base_spec(_model("realnvp", "gaussian").base) == {"kind": "gaussian"}

    def test_document_shape(self):
        doc = model_to_dict(_model(), provenance={"steps": 1})
        assert doc["format"] == FORMAT_TAG
        assert doc["d"] == 2 and doc["n_classes"] == 2
        assert set(doc["flow"]) == {"kind", "layers", "hidden", "bins", "bound",
                                    "params"}
        assert doc["provenance"]["steps"] == 1
        json.dumps(doc)  # must already be JSON-ready


class TestAtomicWrites:
    def test_no_temp_files_left_behind(self, tmp_path):
        save_model(_model(), str(tmp_path / "m.json"))
        assert sorted(os.listdir(tmp_path)) == ["m.json"]

    def test_overwrite_replaces_content(self, tmp_path):
        path = str(tmp_path / "f.txt")
        atomic_write_text(path, "one")
        atomic_write_text(path, "two")
        assert open(path).read() == "two"

    def test_failed_write_cleans_up_temp(self, tmp_path):
        from flowtopo.serialize import atomic_write_bytes

        with pytest.raises(TypeError):
            atomic_write_bytes(str(tmp_path / "f.txt"), "not bytes")
        assert os.listdir(tmp_path) == []


class TestMalformedFiles:
    def test_truncated_json_names_byte_offset(self, tmp_path):
        path = tmp_path / "m.json"
        text = '{"format": "%s", "d": ' % FORMAT_TAG
        path.write_text(text)
        with pytest.raises(ModelFormatError) as exc:
            load_model(str(path))
        assert f"byte offset {len(text)}" in str(exc.value)

    def test_unknown_format_tag_names_both_tags(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"format": "flowtopo-model-v0"}))
        with pytest.raises(ModelFormatError) as exc:
            load_model(str(path))
        msg = str(exc.value)
        assert "flowtopo-model-v1" in msg and "flowtopo-model-v0" in msg

    def test_missing_format_tag(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"d": 2}))
        with pytest.raises(ModelFormatError):
            load_model(str(path))

    def test_top_level_must_be_object(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("[1, 2, 3]")
        with pytest.raises(ModelFormatError):
            load_model(str(path))

    def test_missing_section_names_the_field(self, tmp_path):
        model = _model()
        path = str(tmp_path / "m.json")
        save_model(model, path)
        doc = json.load(open(path))
        del doc["flow"]
        path2 = str(tmp_path / "b.json")
        open(path2, "w").write(json.dumps(doc))
        with pytest.raises(ModelFormatError) as exc:
            load_model(path2)
        assert "'flow'" in str(exc.value)

    def test_wrong_param_shapes_are_a_format_error(self, tmp_path):
        model = _model()
        path = str(tmp_path / "m.json")
        save_model(model, path)
        doc = json.load(open(path))
        doc["base"]["params"]["net"]["weights"][0] = [[1.0, 2.0]]
        open(path, "w").write(json.dumps(doc))
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_non_utf8_file(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_bytes(b"\xff\xfe\x00garbage")
        with pytest.raises(ModelFormatError):
            load_model(str(path))

    def test_missing_file_is_an_os_error(self, tmp_path):
        with pytest.raises(OSError):
            load_model(str(tmp_path / "absent.json"))

    def test_unserializable_model_rejected(self):
        model = _model()
        model.meta = {}
        model.flow.layers = []
        with pytest.raises(InvalidInputError):
            model_to_dict(model)
