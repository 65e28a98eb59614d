import json

import pytest

from hmavd.config import RunConfig, from_dict, load_config, merge, parse_assignment, parse_toggle
from hmavd.exceptions import InvalidConfig


def test_defaults():
    cfg = from_dict({})
    assert isinstance(cfg, RunConfig)
    assert cfg.train.epochs == 200 and cfg.eval.w_text == 0.5 and cfg.eval.k == [1, 5]


def test_unknown_keys_named():
    with pytest.raises(InvalidConfig, match="train.epocs"):
        from_dict({"train": {"epocs": 3}})
    with pytest.raises(InvalidConfig, match="trian"):
        from_dict({"trian": {}})


def test_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"epochs": 7, "lr": 0.01}}))
    cfg = load_config(str(path), merge(parse_assignment("train.epochs=3"), parse_toggle("mcdb=off")))
    assert cfg.train.epochs == 3 and cfg.train.lr == 0.01 and cfg.train.mcdb is False


def test_parse_assignment_values():
    assert parse_assignment("data.snr.text=10") == {"data": {"snr": {"text": 10}}}
    assert parse_assignment("balance.mode=per_row_literal") == {"balance": {"mode": "per_row_literal"}}
    with pytest.raises(InvalidConfig):
        parse_assignment("train.epochs")


def test_parse_toggle():
    assert parse_toggle("text=on") == {"train": {"text_modality": True}}
    assert parse_toggle("SPR=off") == {"train": {"spr": False}}
    with pytest.raises(InvalidConfig):
        parse_toggle("mcdb=maybe")
    with pytest.raises(InvalidConfig):
        parse_toggle("dropout=on")


def test_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{nope")
    with pytest.raises(InvalidConfig):
        load_config(str(path))


def test_resolve_output(monkeypatch):
    monkeypatch.setenv("HMAVD_OUTPUT_ROOT", "/tmp/x")
    assert from_dict({}).resolve_output("train") == "/tmp/x/train"
    assert from_dict({"output_dir": "o"}).resolve_output("train") == "o"
    assert json.dumps(from_dict({}).to_dict())
