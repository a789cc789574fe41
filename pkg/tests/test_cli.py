import json

import pytest

from multiact.cli import main
from multiact.data import DialogueState, TurnRecord, parse_frames, save_dataset, serialize_state
from multiact.train import load_checkpoint

MOVIE_ANNOTATION = ("inform(moviename={The Witch, The Other Side of the Door, The Boy}; genre=thriller) "
                    "multiple_choice(moviename)")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_convert_prints_split_counts(msr_dir, tmp_path, capsys):
    out_path = tmp_path / "movie.jsonl"
    code, out, _ = run(capsys, "convert", "--in", msr_dir, "--domain", "movie", "--out", out_path)
    assert code == 0
    assert out.strip() == "dialogues: total 20, train 10, valid 3, test 7"
    first = out_path.read_bytes()
    assert run(capsys, "convert", "--in", msr_dir, "--domain", "movie", "--out", out_path)[0] == 0
    assert out_path.read_bytes() == first


def test_convert_empty_directory(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    out_path = tmp_path / "x.jsonl"
    code, _, err = run(capsys, "convert", "--in", tmp_path / "empty", "--domain", "movie", "--out", out_path)
    assert code == 2 and not out_path.exists()
    assert "movie_all.tsv" in err


def test_unknown_flag_and_domain_rejected(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["stats", "--data", "x", "--bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["convert", "--in", str(tmp_path), "--domain", "hotel", "--out", "x"])
    assert exc.value.code == 2


def test_mutually_exclusive_output_flags(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["stats", "--data", "x", "--json", "--table"])
    assert exc.value.code == 2


def test_stats_json_and_table(msr_dir, tmp_path, capsys, monkeypatch):
    data = tmp_path / "movie.jsonl"
    run(capsys, "convert", "--in", msr_dir, "--domain", "movie", "--out", data)
    code, out, _ = run(capsys, "stats", "--data", data, "--json")
    assert code == 0
    stats = json.loads(out)
    assert stats["dialogues"]["total"] == 20
    code, table, _ = run(capsys, "stats", "--data", data)
    assert table.startswith("dialogues: total 20, train 10, valid 3, test 7")
    # default data directory from the environment
    monkeypatch.setenv("MULTIACT_DATA_DIR", str(tmp_path))
    assert run(capsys, "stats")[1] == table
    assert run(capsys, "stats", "--data", "movie.jsonl")[1] == table


def test_stats_missing_file(tmp_path, capsys):
    code, _, err = run(capsys, "stats", "--data", tmp_path / "nope.jsonl")
    assert code == 2 and "nope.jsonl" in err


def test_malformed_dataset_is_bad_input(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    code, _, err = run(capsys, "stats", "--data", bad)
    assert code == 2 and ":1:" in err


def _single_example(tmp_path):
    state = DialogueState(user_acts=tuple(parse_frames("request(moviename; genre=thriller)")),
                          user_inform_slots=("genre",), turn=1, kb_result_count=3)
    rec = TurnRecord("d0", 1, "agent", state, tuple(parse_frames(MOVIE_ANNOTATION)), "train")
    data = tmp_path / "one.jsonl"
    save_dataset(data, [rec])
    return data, state


def test_train_predict_overfit_single_example(tmp_path, capsys):
    data, state = _single_example(tmp_path)
    ckpt = tmp_path / "g.ckpt"
    code, out, _ = run(capsys, "train", "--data", data, "--out", ckpt, "--model", "gcas", "--hidden-size", 16,
                       "--epochs", 300, "--batch-size", 1, "--patience", 300, "--lr", 0.01, "--json")
    assert code == 0 and json.loads(out)["valid_frame_f1"] == 1.0
    state_file = tmp_path / "state.json"
    state_file.write_text(json.dumps(state.to_json() | {"kb_result_count": 3}))
    code, out, _ = run(capsys, "predict", "--checkpoint", ckpt, "--state", state_file)
    assert code == 0 and out.strip() == "inform(moviename;genre) multiple_choice(moviename)"
    # the same state as a serialized-token file
    vocab = load_checkpoint(ckpt).vocab
    tokens = [vocab.state_tokens.itos[i] for i in serialize_state(state, vocab)]
    tok_file = tmp_path / "state.tok"
    tok_file.write_text(" ".join(tokens))
    code, out, _ = run(capsys, "predict", "--checkpoint", ckpt, "--state", tok_file, "--turn", 1, "--kb-results", 3)
    assert code == 0 and out.strip() == "inform(moviename;genre) multiple_choice(moviename)"


def test_train_with_config_file(tmp_path, capsys):
    data, _ = _single_example(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "classification", "class_width": 8, "max_epochs": 2}))
    code, out, _ = run(capsys, "train", "--config", cfg, "--data", data, "--out", tmp_path / "c.ckpt", "--json")
    assert code == 0 and json.loads(out)["model"] == "classification"
    cfg.write_text(json.dumps({"unknown_field": 1}))
    assert run(capsys, "train", "--config", cfg, "--data", data, "--out", tmp_path / "d.ckpt")[0] == 2


def test_evaluate_report_and_fingerprint_guard(msr_dir, tmp_path, capsys):
    data = tmp_path / "movie.jsonl"
    run(capsys, "convert", "--in", msr_dir, "--domain", "movie", "--out", data)
    ckpt = tmp_path / "m.ckpt"
    assert run(capsys, "train", "--data", data, "--out", ckpt, "--model", "cas", "--hidden-size", 8,
               "--epochs", 2)[0] == 0
    code, out, _ = run(capsys, "evaluate", "--checkpoint", ckpt, "--data", data, "--split", "test", "--json")
    assert code == 0
    report = json.loads(out)
    for key in ("act", "frame", "entity_f1", "success_f1", "inform_all", "inform_critical", "inform_non_critical"):
        assert 0.0 <= report[key]["f1"] <= 1.0
    code, table, _ = run(capsys, "evaluate", "--checkpoint", ckpt, "--data", data, "--split", "test")
    assert code == 0 and "Entity F1" in table
    # a dataset whose training split yields a different vocabulary is refused
    other, _ = _single_example(tmp_path)
    code, _, err = run(capsys, "evaluate", "--checkpoint", ckpt, "--data", other)
    assert code == 2 and "fingerprint" in err


def test_predict_missing_checkpoint(tmp_path, capsys):
    state = tmp_path / "s.json"
    state.write_text("{}")
    assert run(capsys, "predict", "--checkpoint", tmp_path / "none", "--state", state)[0] == 2


def test_gradcheck_command(capsys):
    code, out, _ = run(capsys, "gradcheck", "--model", "gcas", "--seed", 0, "--json")
    report = json.loads(out)
    assert code == 0 and report["passed"] and {g["model"] for g in report["groups"]} == {"gcas"}
