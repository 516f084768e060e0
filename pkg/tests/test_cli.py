"""Command-line surface: exit codes, JSON payloads against the shipped
schemas, and report bundles on disk."""

import json
import shutil
from importlib import resources
from pathlib import Path

import jsonschema
import pytest

from streamkit.cli import BAD_INPUT, CHECK_FAILED, OK, REMOTE_FAILURE, main

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def schema(name):
    text = resources.files("streamkit.schemas").joinpath(name).read_text(encoding="utf-8")
    return json.loads(text)


def check(instance, schema_name):
    jsonschema.validate(instance=instance, schema=schema(schema_name))


@pytest.fixture
def demo_session(tmp_path):
    raw = resources.files("streamkit.replay").joinpath("demo_session.jsonl").read_bytes()
    path = tmp_path / "demo.jsonl"
    path.write_bytes(raw)
    return str(path)


class TestExitCodes:
    def test_no_command_prints_help(self, capsys):
        code, out = run_cli(capsys)
        assert code == BAD_INPUT
        assert "usage: streamkit" in out

    def test_missing_session_file(self, capsys):
        code, _ = run_cli(capsys, "score", "--session", "does_not_exist.jsonl")
        assert code == BAD_INPUT

    def test_segment_mode_needs_session(self, capsys):
        code, _ = run_cli(capsys, "mask", "dump", "--mode", "segment")
        assert code == BAD_INPUT

    def test_literal_mode_needs_span(self, capsys):
        code, _ = run_cli(capsys, "mask", "dump", "--mode", "literal")
        assert code == BAD_INPUT

    def test_argparse_rejects_unknown_choice(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["mask", "dump", "--mode", "diagonal"])
        assert e.value.code == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["--version"])
        assert e.value.code == 0
        assert "streamkit" in capsys.readouterr().out


class TestMaskDump:
    def test_causal_grid(self, capsys):
        code, out = run_cli(capsys, "mask", "dump", "--mode", "causal", "--T", "3")
        assert code == OK
        assert out.splitlines() == [".##", "..#", "..."]

    def test_literal_grid_frozen_band_row(self, capsys):
        code, out = run_cli(capsys, "mask", "dump", "--mode", "literal",
                            "--T", "4", "--L", "3")
        assert code == OK
        assert out.splitlines()[4] == "..#..##"

    def test_literal_json_matches_schema(self, capsys):
        code, out = run_cli(capsys, "mask", "dump", "--mode", "literal",
                            "--T", "4", "--L", "3", "--json")
        assert code == OK
        payload = json.loads(out)
        check(payload, "mask_dump.schema.json")
        assert payload["n"] == 7
        assert len(payload["matrix"]) == 7

    def test_segment_json_matches_schema(self, capsys, demo_session):
        code, out = run_cli(capsys, "mask", "dump", "--mode", "segment",
                            "--session", demo_session, "--json")
        assert code == OK
        check(json.loads(out), "mask_dump.schema.json")

    def test_figure_written(self, capsys, tmp_path):
        fig = tmp_path / "mask.png"
        code, _ = run_cli(capsys, "mask", "dump", "--mode", "literal",
                          "--T", "4", "--L", "3", "--fig", str(fig))
        assert code == OK
        assert fig.stat().st_size > 0


class TestRopeCheckCli:
    def test_passes_at_default_tolerance(self, capsys):
        code, out = run_cli(capsys, "rope", "check", "--trials", "50", "--json")
        assert code == OK
        payload = json.loads(out)
        check(payload, "rope_check.schema.json")
        assert payload["ok"] is True

    def test_fails_at_absurd_tolerance(self, capsys):
        code, out = run_cli(capsys, "rope", "check", "--trials", "50",
                            "--tolerance", "1e-18")
        assert code == CHECK_FAILED
        assert "FAILED" in out

    def test_rejects_zero_trials(self, capsys):
        code, _ = run_cli(capsys, "rope", "check", "--trials", "0")
        assert code == BAD_INPUT


class TestEquivalenceCli:
    def test_clean_run_matches_schema(self, capsys):
        code, out = run_cli(capsys, "equivalence", "--seeds", "3", "--json")
        assert code == OK
        payload = json.loads(out)
        check(payload, "equivalence_report.schema.json")
        assert payload["ok"] is True
        assert len(payload["trials"]) == 3

    def test_injected_fault_is_caught(self, capsys):
        code, out = run_cli(capsys, "equivalence", "--seeds", "2",
                            "--fault-slice-offset", "1", "--json")
        assert code == CHECK_FAILED
        assert json.loads(out)["ok"] is False


class TestSimulateCli:
    def test_replay_streaming_delay(self, capsys):
        code, out = run_cli(capsys, "simulate", "--replay", "gsm-symbolic",
                            "--paradigm", "streaming", "--depth", "d3", "--json")
        assert code == OK
        payload = json.loads(out)
        check(payload, "latency_report.schema.json")
        assert payload["first_answer_delay_s"] == pytest.approx(9.768, rel=1e-4)

    def test_session_bundle_written(self, capsys, tmp_path, demo_session):
        out_dir = tmp_path / "sim"
        code, _ = run_cli(capsys, "simulate", "--session", demo_session,
                          "--out-dir", str(out_dir))
        assert code == OK
        report = json.loads((out_dir / "report.json").read_text(encoding="utf-8"))
        check(report, "latency_report.schema.json")
        assert (out_dir / "timeline.png").stat().st_size > 0

    def test_all_is_not_a_single_dataset(self, capsys):
        code, _ = run_cli(capsys, "simulate", "--replay", "all")
        assert code == BAD_INPUT

    def test_unknown_replay_name(self, capsys):
        code, _ = run_cli(capsys, "simulate", "--replay", "mystery-set")
        assert code == BAD_INPUT


class TestCompareCli:
    def test_single_dataset_json(self, capsys):
        code, out = run_cli(capsys, "compare", "--replay", "gsm-symbolic", "--json")
        assert code == OK
        tables = json.loads(out)
        assert len(tables) == 1
        check(tables[0], "comparison.schema.json")
        streaming_d3 = [r for r in tables[0]["rows"]
                        if r["paradigm"] == "streaming" and r["depth"] == "d3"]
        assert streaming_d3[0]["ttft_reduction_pct"] == pytest.approx(78.1, abs=0.1)

    def test_all_datasets_json(self, capsys):
        code, out = run_cli(capsys, "compare", "--replay", "all", "--json")
        assert code == OK
        tables = json.loads(out)
        assert len(tables) == 6
        for t in tables:
            check(t, "comparison.schema.json")

    def test_markdown_table_on_stdout(self, capsys):
        code, out = run_cli(capsys, "compare", "--replay", "gsm-symbolic")
        assert code == OK
        assert "| streaming | d3 |" in out

    def test_bundle_written(self, capsys, tmp_path):
        out_dir = tmp_path / "cmp"
        code, _ = run_cli(capsys, "compare", "--replay", "gsm-symbolic",
                          "--out-dir", str(out_dir))
        assert code == OK
        for suffix in (".json", ".csv", ".md", ".png"):
            assert (out_dir / f"gsm-symbolic{suffix}").stat().st_size > 0


class TestScoreCli:
    def test_demo_session_passes(self, capsys, demo_session):
        code, out = run_cli(capsys, "score", "--session", demo_session, "--json")
        assert code == OK
        payload = json.loads(out)
        check(payload, "quality_report.schema.json")
        assert payload["passed"] is True
        assert payload["granularity"] == 1.0

    def test_strict_threshold_fails(self, capsys, demo_session):
        code, out = run_cli(capsys, "score", "--session", demo_session,
                            "--consistency-min", "0.99")
        assert code == CHECK_FAILED
        assert "FAIL" in out

    def test_structurally_invalid_session(self, capsys, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("\n".join([
            json.dumps({"markers": {"EOS": 1, "EOQ": 2, "EOT": 3, "EOR": 4, "SKIP": 5}}),
            json.dumps({"stream": "context", "index": 1, "text": "only fact",
                        "terminator": "EOS"}),
            json.dumps({"stream": "reasoning", "index": 1, "text": "wrong marker",
                        "terminator": "EOS"}),
        ]) + "\n", encoding="utf-8")
        code, _ = run_cli(capsys, "score", "--session", str(bad))
        assert code == BAD_INPUT

    def test_report_bundle_written(self, capsys, tmp_path, demo_session):
        out_dir = tmp_path / "score"
        code, _ = run_cli(capsys, "score", "--session", demo_session,
                          "--out-dir", str(out_dir))
        assert code == OK
        payload = json.loads((out_dir / "quality_report.json").read_text(encoding="utf-8"))
        check(payload, "quality_report.schema.json")
        csv_lines = (out_dir / "pair_scores.csv").read_text(encoding="utf-8").splitlines()
        assert csv_lines[0] == "input_unit,score,is_skip,is_question"
        assert len(csv_lines) == 1 + len(payload["pair_scores"])
        assert (out_dir / "similarity_map.png").stat().st_size > 0

    def test_remote_provider_unreachable(self, capsys, demo_session):
        code, _ = run_cli(capsys, "score", "--session", demo_session,
                          "--provider", "remote", "--endpoint", "http://127.0.0.1:9/")
        assert code == REMOTE_FAILURE

    def test_remote_provider_needs_url(self, capsys, demo_session, monkeypatch):
        monkeypatch.delenv("STREAMKIT_EMBED_URL", raising=False)
        code, _ = run_cli(capsys, "score", "--session", demo_session,
                          "--provider", "remote")
        assert code == BAD_INPUT


class TestPipelineCli:
    def test_retry_then_accept(self, capsys, demo_session):
        code, out = run_cli(capsys, "pipeline", "run", "--session", demo_session,
                            "--stub-responses", str(FIXTURES / "canned"), "--json")
        assert code == OK
        payload = json.loads(out)
        check(payload, "pipeline_outcome.schema.json")
        assert payload["accepted"] is True
        assert payload["attempts"] == 2
        assert any("attempt 1" in e for e in payload["errors"])

    def test_bundle_written_and_accepted_trace_scores(self, capsys, tmp_path, demo_session):
        out_dir = tmp_path / "pipe"
        code, _ = run_cli(capsys, "pipeline", "run", "--session", demo_session,
                          "--stub-responses", str(FIXTURES / "canned"),
                          "--out-dir", str(out_dir))
        assert code == OK
        outcome = json.loads((out_dir / "outcome.json").read_text(encoding="utf-8"))
        check(outcome, "pipeline_outcome.schema.json")
        assert (out_dir / "similarity_map.png").stat().st_size > 0
        code2, out2 = run_cli(capsys, "score", "--session",
                              str(out_dir / "accepted.jsonl"), "--json")
        assert code2 == OK
        assert json.loads(out2)["passed"] is True

    def test_two_bad_responses_discard(self, capsys, tmp_path, demo_session):
        stubs = tmp_path / "stubs"
        stubs.mkdir()
        bad = (FIXTURES / "canned" / "attempt1.txt").read_text(encoding="utf-8")
        (stubs / "attempt1.txt").write_text(bad, encoding="utf-8")
        (stubs / "attempt2.txt").write_text(bad, encoding="utf-8")
        code, out = run_cli(capsys, "pipeline", "run", "--session", demo_session,
                            "--stub-responses", str(stubs), "--json")
        assert code == CHECK_FAILED
        payload = json.loads(out)
        assert payload["accepted"] is False and payload["attempts"] == 2

    def test_needs_a_generation_source(self, capsys, demo_session, monkeypatch):
        monkeypatch.delenv("STREAMKIT_GEN_URL", raising=False)
        code, _ = run_cli(capsys, "pipeline", "run", "--session", demo_session)
        assert code == BAD_INPUT

    def test_unreachable_generator_reports_remote_failure(self, capsys, demo_session):
        code, _ = run_cli(capsys, "pipeline", "run", "--session", demo_session,
                          "--endpoint", "http://127.0.0.1:9/")
        assert code == REMOTE_FAILURE


class TestEngineEventContract:
    def test_event_log_records_match_schema(self):
        import numpy as np

        from streamkit.engine import ArrivalSchedule, run_streaming_decode
        from streamkit.model import ModelConfig, init_weights
        from streamkit.verify import random_layout

        rng = np.random.default_rng(5)
        layout = random_layout(rng)
        weights = init_weights(ModelConfig(seed=5))
        schedule = ArrivalSchedule.from_rate(
            [len(u) for u in layout.input_units()], tokens_per_second=4.0
        )
        res = run_streaming_decode(weights, layout, schedule, decode_rate=10.0)
        records = [e.to_json() for e in res.events]
        assert records
        for rec in records:
            check(rec, "engine_event.schema.json")
