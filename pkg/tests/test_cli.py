import json

import pytest

from wonder_sim.cli import EXIT_FAIL, EXIT_INVALID, EXIT_OK, main


def test_run_prints_table(capsys):
    assert main(["run", "path_same_edc"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "scenario path_same_edc" in out and "2.200" in out


def test_run_json_metrics_with_digests(capsys):
    assert main(["run", "mer_handover", "--json-metrics"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["ho_interruption_ms"] == ["11.000"]
    assert set(doc["digests"]) == {"signaling", "traces", "workloads", "metrics"}


def test_trace_dir_outputs(tmp_path):
    out = tmp_path / "t"
    assert main(["run", "restoration", "--trace-dir", str(out), "--dump-paths"]) == EXIT_OK
    names = {p.name for p in out.iterdir()}
    assert {"signaling.jsonl", "traces.tsv", "workloads.jsonl", "metrics.json", "paths.json",
            "rtt_by_class.png", "packet_outcomes.png"} <= names
    assert (out / "rtt_by_class.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert json.loads((out / "paths.json").read_text())
    assert (out / "traces.tsv").read_text().startswith("# packet ")


def test_handover_figure_and_no_figures_flag(tmp_path):
    main(["run", "mer_handover", "--trace-dir", str(tmp_path / "a")])
    assert (tmp_path / "a" / "handover_interruption.png").exists()
    main(["run", "mer_handover", "--trace-dir", str(tmp_path / "b"), "--no-figures"])
    assert not list((tmp_path / "b").glob("*.png"))


def test_dump_paths_without_trace_dir_goes_to_stderr(capsys):
    main(["run", "path_same_edc", "--dump-paths"])
    assert json.loads(capsys.readouterr().err)


def test_run_failure_exit_code(tmp_path, capsys):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({
        "format_version": 1, "topology": "builtin:mecd5",
        "events": [{"kind": "Attach", "t_ms": 0, "ue": "u", "cu": "cu-3", "bearers": [{"qfi": 5}]}],
    }))
    assert main(["run", str(p)]) == EXIT_FAIL
    assert "FAIL" in capsys.readouterr().err


def test_validate(tmp_path, capsys):
    assert main(["validate", "awi"]) == EXIT_OK
    assert "ok: awi" in capsys.readouterr().out
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"format_version": 3, "topology": 5, "events": [{"kind": "Nope", "t_ms": 0}]}))
    assert main(["validate", str(bad)]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "format_version" in err and "topology" in err and "events[0].kind" in err
    garbage = tmp_path / "g.json"
    garbage.write_text("{")
    assert main(["run", str(garbage)]) == EXIT_INVALID


def test_lax_flag(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"format_version": 1, "topology": "builtin:mecd5", "events": [], "note": "x"}))
    assert main(["validate", str(p)]) == EXIT_INVALID
    assert main(["validate", str(p), "--lax"]) == EXIT_OK


def test_oracle_command(capsys):
    assert main(["oracle", "oer_basic", "--random", "5", "--seed", "3", "-v"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "random seed 3:" in out and "6 topologies" in out and "0 diff(s)" in out
    assert main(["oracle"]) == EXIT_INVALID


def test_seed_override_changes_jittered_trace(tmp_path, capsys):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({
        "format_version": 1, "topology": "builtin:mecd5", "defaults": {"jitter_ms": 2},
        "events": [
            {"kind": "Attach", "t_ms": 0, "ue": "u", "cu": "cu-1", "bearers": [{"qfi": 9}]},
            *({"kind": "SendPacket", "t_ms": 50 + i, "ue": "u", "bearer": 1, "direction": "UL"} for i in range(5)),
        ],
    }))
    digests = []
    for seed in ("1", "1", "2"):
        main(["run", str(p), "--json-metrics", "--seed", seed])
        digests.append(json.loads(capsys.readouterr().out)["digests"]["traces"])
    assert digests[0] == digests[1] != digests[2]


def test_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])
