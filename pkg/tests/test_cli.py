import json

import pytest

from data.result_store import RESULT_COLUMNS
from main import EXIT_CONFIG, EXIT_OK, build_parser, main

TINY_FLAGS = ["--example", "smooth1d", "--M", "10", "--N", "8", "--fine-M", "20", "--fine-N", "16"]


def test_parser_knows_every_subcommand():
    parser = build_parser()
    for command in ("solve-forward", "invert", "table", "rate-study", "selftest"):
        assert parser.parse_args([command]).command == command
    args = parser.parse_args(["rate-study", "--alphas", "0.25,0.5", "--eps-list", "1e-3,1e-2"])
    assert args.alphas == [0.25, 0.5] and args.eps_list == [1e-3, 1e-2]


def test_invert_writes_result_csv(tmp_path):
    assert main(["invert", *TINY_FLAGS, "--eps", "1e-2", "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "result.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(RESULT_COLUMNS)
    assert len(lines) == 2
    assert (tmp_path / "debug.log").exists()
    assert (tmp_path / "iterations.jsonl").exists()
    assert (tmp_path / "observations" / "meta.json").exists()
    saved = json.loads((tmp_path / "config.json").read_text(encoding="utf-8"))
    assert saved["M"] == 10 and saved["eps"] == 1e-2


def test_solve_forward_exports_trajectory(tmp_path):
    assert main(["solve-forward", *TINY_FLAGS, "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "trajectory.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1 + 9
    assert json.loads((tmp_path / "mesh.json").read_text(encoding="utf-8")) == {"dim": 1, "M": 10}


def test_config_errors_exit_with_code_2(tmp_path):
    assert main(["invert", *TINY_FLAGS, "--alpha", "2", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["invert", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["table", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_config_file_and_flag_override(tmp_path):
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps({"example": "smooth1d", "M": 10, "N": 8, "fine_M": 20, "fine_N": 16,
                                       "alpha": 0.75, "max_iters": 3}), encoding="utf-8")
    out = tmp_path / "out"
    assert main(["invert", "--config", str(config_path), "--alpha", "0.25", "--out", str(out)]) == EXIT_OK
    payload = json.loads((out / "result.json").read_text(encoding="utf-8"))
    assert payload["config"]["alpha"] == 0.25
    assert payload["config"]["max_iters"] == 3


def test_table_output_is_byte_identical(tmp_path):
    table_path = tmp_path / "small.json"
    table_path.write_text(json.dumps({
        "axis": "eps", "values": [0.0, 1e-2], "gammas": [1e-10, 1e-9], "alphas": [0.5],
        "base": {"example": "smooth1d", "M": 10, "N": 8, "fine_M": 20, "fine_N": 16, "max_iters": 5},
    }), encoding="utf-8")
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["table", "--config", str(table_path), "--out", str(out)]) == EXIT_OK
        outputs.append((out / "small.csv").read_bytes())
    assert outputs[0] == outputs[1]
    assert outputs[0].decode("utf-8").count("\n") == 3
