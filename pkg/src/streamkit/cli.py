"""Command-line interface.

Exit codes: 0 success, 1 a requested check failed, 2 bad input or arguments,
3 remote provider failure after retries. Every run logs its resolved
configuration to stderr before doing work."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .layout import DepthLevel, validate_layout
from .masks import MaskMode, causal_mask, streaming_mask_literal, streaming_mask_segment
from .providers import (
    LocalHashEmbedder,
    ProviderError,
    RemoteEmbeddingClient,
    RemoteGenerationClient,
    StubGenerationClient,
)
from .session import SessionFormatError, load_session

log = logging.getLogger("streamkit")

OK, CHECK_FAILED, BAD_INPUT, REMOTE_FAILURE = 0, 1, 2, 3

_DEPTHS = {
    "d1": DepthLevel.D1_DIRECT,
    "d2": DepthLevel.D2_GLOBAL,
    "d3": DepthLevel.D3_REFLECT,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return BAD_INPUT
    _log_config(args)
    try:
        return args.func(args)
    except (SessionFormatError, ValueError, FileNotFoundError, IsADirectoryError) as e:
        log.error("%s", e)
        return BAD_INPUT
    except ProviderError as e:
        log.error("remote provider failed: %s", e)
        return REMOTE_FAILURE


def _log_config(args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "func" and v is not None}
    log.info("resolved config: %s", json.dumps(resolved, default=str, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamkit",
                                description="sentence-streamed reasoning toolkit")
    p.add_argument("--version", action="version", version=f"streamkit {__version__}")
    sub = p.add_subparsers(dest="command")

    mask = sub.add_parser("mask", help="attention mask tools").add_subparsers(dest="subcommand")
    dump = mask.add_parser("dump", help="print a mask as a text grid or JSON")
    dump.add_argument("--mode", required=True, choices=[m.value for m in MaskMode])
    dump.add_argument("--T", type=int, help="input span (tokens for causal/literal)")
    dump.add_argument("--L", type=int, default=0, help="reasoning span (literal mode)")
    dump.add_argument("--session", help="session file (segment mode)")
    dump.add_argument("--json", action="store_true")
    dump.add_argument("--fig", help="also render the mask to this image file")
    dump.set_defaults(func=cmd_mask_dump)

    rope = sub.add_parser("rope", help="rotary position tools").add_subparsers(dest="subcommand")
    check = rope.add_parser("check", help="shift-invariance self test")
    check.add_argument("--trials", type=int, default=1000)
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--tolerance", type=float, default=1e-6)
    check.add_argument("--json", action="store_true")
    check.set_defaults(func=cmd_rope_check)

    eq = sub.add_parser("equivalence", help="streamed decode vs batch oracle")
    eq.add_argument("--seeds", type=int, default=20)
    eq.add_argument("--tolerance", type=float, default=1e-5)
    eq.add_argument("--fault-slice-offset", type=int, default=0,
                    help="inject a cache slice offset (tokens) to prove the check bites")
    eq.add_argument("--json", action="store_true")
    eq.set_defaults(func=cmd_equivalence)

    sim = sub.add_parser("simulate", help="latency of one paradigm on one session")
    _session_or_replay(sim)
    sim.add_argument("--paradigm", default="streaming",
                     choices=["batch", "interleaved", "streaming"])
    sim.add_argument("--depth", default="d3", choices=list(_DEPTHS))
    _rate_flags(sim)
    sim.add_argument("--json", action="store_true")
    sim.add_argument("--out-dir", help="write report.json and timeline.png here")
    sim.set_defaults(func=cmd_simulate)

    comp = sub.add_parser("compare", help="all paradigms side by side")
    _session_or_replay(comp, allow_all=True)
    _rate_flags(comp)
    comp.add_argument("--json", action="store_true")
    comp.add_argument("--out-dir", help="write comparison.{md,csv,json} and chart.png here")
    comp.set_defaults(func=cmd_compare)

    score = sub.add_parser("score", help="trace quality of a session")
    score.add_argument("--session", required=True)
    score.add_argument("--provider", default="local", choices=["local", "remote"])
    score.add_argument("--endpoint", help="embedding service base URL (or STREAMKIT_EMBED_URL)")
    score.add_argument("--consistency-min", type=float, default=0.5)
    score.add_argument("--include-skips", action="store_true")
    score.add_argument("--include-question-pair", action="store_true")
    score.add_argument("--json", action="store_true")
    score.add_argument("--out-dir", help="write quality_report.json, pair_scores.csv, similarity_map.png")
    score.set_defaults(func=cmd_score)

    pipe = sub.add_parser("pipeline", help="trace generation pipeline").add_subparsers(dest="subcommand")
    run = pipe.add_parser("run", help="generate, check, accept or retry once")
    run.add_argument("--session", required=True, help="session with question/context input")
    run.add_argument("--stub-responses", help="directory of canned *.txt generations")
    run.add_argument("--endpoint", help="generation service base URL (or STREAMKIT_GEN_URL)")
    run.add_argument("--provider", default="local", choices=["local", "remote"],
                     help="embedding provider for the quality check")
    run.add_argument("--embed-endpoint", help="embedding service base URL")
    run.add_argument("--example", default="", help="in-context example text for the prompt")
    run.add_argument("--consistency-min", type=float, default=0.5)
    run.add_argument("--json", action="store_true")
    run.add_argument("--out-dir", help="write outcome.json, accepted.jsonl, similarity_map.png")
    run.set_defaults(func=cmd_pipeline_run)

    return p


def _session_or_replay(p: argparse.ArgumentParser, allow_all: bool = False) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--session", help="session file")
    note = " (or 'all')" if allow_all else ""
    g.add_argument("--replay", help=f"bundled reference dataset name{note}")


def _rate_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--wpm", type=float, default=150.0, help="input arrival, words per minute")
    p.add_argument("--tokens-per-word", type=float, default=1.3)
    p.add_argument("--decode-rate", type=float, default=30.0, help="decode tokens per second")


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------

def cmd_mask_dump(args: argparse.Namespace) -> int:
    mode = MaskMode(args.mode)
    if mode == MaskMode.STREAMING_SEGMENT:
        if not args.session:
            raise ValueError("segment mode needs --session")
        _, layout = load_session(args.session)
        mask = streaming_mask_segment(layout)
    elif mode == MaskMode.STREAMING_LITERAL:
        if args.T is None:
            raise ValueError("literal mode needs --T (and usually --L)")
        mask = streaming_mask_literal(args.T, args.L)
    else:
        if args.T is None:
            raise ValueError("causal mode needs --T")
        mask = causal_mask(args.T + args.L)
    if args.fig:
        from .report import save_mask_figure
        save_mask_figure(mask, args.fig, title=f"{mode.value} mask")
        log.info("wrote %s", args.fig)
    if args.json:
        print(json.dumps({
            "mode": mode.value, "n": mask.n, "sentinel": mask.sentinel,
            "grid": mask.to_grid(), "matrix": mask.data.tolist(),
        }))
    else:
        print(mask.to_grid())
    return OK


def cmd_rope_check(args: argparse.Namespace) -> int:
    from .verify import rope_shift_invariance

    if args.trials < 1:
        raise ValueError("--trials must be >= 1")
    dev = rope_shift_invariance(args.trials, args.seed)
    ok = dev <= args.tolerance
    if args.json:
        print(json.dumps({"trials": args.trials, "seed": args.seed,
                          "max_abs_dev": dev, "tolerance": args.tolerance, "ok": ok}))
    else:
        print(f"rotary shift invariance over {args.trials} trials: "
              f"max deviation {dev:.3e} (tolerance {args.tolerance:.1e}) "
              f"{'ok' if ok else 'FAILED'}")
    return OK if ok else CHECK_FAILED


def cmd_equivalence(args: argparse.Namespace) -> int:
    from .verify import equivalence_suite

    if args.seeds < 1:
        raise ValueError("--seeds must be >= 1")
    report = equivalence_suite(args.seeds, tolerance=args.tolerance,
                               fault_slice_offset=args.fault_slice_offset)
    if args.json:
        print(json.dumps(report.to_json()))
    else:
        for r in report.results:
            print(f"seed {r.seed}: max abs dev {r.max_abs_dev:.3e} over {r.rows_compared} rows")
        print(f"worst {report.max_abs_dev:.3e} vs tolerance {report.tolerance:.1e}: "
              f"{'ok' if report.ok else 'FAILED'}")
    return OK if report.ok else CHECK_FAILED


def _load_profile(args: argparse.Namespace):
    from .latency import StreamProfile, load_reference_data, reference_profile

    if args.session:
        _, layout = load_session(args.session)
        if not layout.reasoning_units:
            raise ValueError("session has no reasoning units to time")
        return [(Path(args.session).stem, StreamProfile.from_layout(layout))]
    data = load_reference_data()
    by_name = {d["name"]: d for d in data["datasets"]}
    if args.replay == "all":
        return [(name, reference_profile(d)) for name, d in by_name.items()]
    if args.replay not in by_name:
        raise ValueError(f"unknown replay dataset {args.replay!r}, "
                         f"have {sorted(by_name)} or 'all'")
    return [(args.replay, reference_profile(by_name[args.replay]))]


def cmd_simulate(args: argparse.Namespace) -> int:
    from .latency import ArrivalModel, DecodeModel, ParadigmKind, simulate

    profiles = _load_profile(args)
    if len(profiles) != 1:
        raise ValueError("simulate takes one session or one replay dataset")
    name, profile = profiles[0]
    rep = simulate(
        profile, ParadigmKind(args.paradigm), _DEPTHS[args.depth],
        ArrivalModel(args.wpm, args.tokens_per_word), DecodeModel(args.decode_rate),
    )
    if args.json:
        print(json.dumps(rep.to_json()))
    else:
        print(f"{name} {rep.paradigm.value}/{rep.depth.value}: "
              f"ttft {rep.ttft_tokens:.2f} tokens, "
              f"first-answer delay {rep.first_answer_delay_s:.3f} s")
    if args.out_dir:
        from .report import save_latency_timeline, write_json
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(rep.to_json(), out / "report.json")
        save_latency_timeline(rep, out / "timeline.png")
        log.info("wrote %s and %s", out / "report.json", out / "timeline.png")
    return OK


def cmd_compare(args: argparse.Namespace) -> int:
    from .latency import ArrivalModel, DecodeModel, compare

    arrival = ArrivalModel(args.wpm, args.tokens_per_word)
    decode = DecodeModel(args.decode_rate)
    tables = [
        compare(profile, arrival, decode, label=name)
        for name, profile in _load_profile(args)
    ]
    if args.json:
        print(json.dumps([t.to_json() for t in tables]))
    else:
        for t in tables:
            print(t.to_markdown())
            print()
    if args.out_dir:
        from .report import save_comparison_chart, write_csv, write_json
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for t in tables:
            stem = t.label.replace("/", "_")
            write_json(t.to_json(), out / f"{stem}.json")
            write_csv(t.to_csv_rows(), out / f"{stem}.csv")
            (out / f"{stem}.md").write_text(t.to_markdown() + "\n", encoding="utf-8")
            save_comparison_chart(t, out / f"{stem}.png")
        log.info("wrote %d comparison bundle(s) under %s", len(tables), out)
    return OK


def _embed_provider(kind: str, endpoint: str | None):
    if kind == "local":
        return LocalHashEmbedder()
    url = endpoint or os.environ.get("STREAMKIT_EMBED_URL")
    if not url:
        raise ValueError("remote embedding provider needs --endpoint or STREAMKIT_EMBED_URL")
    return RemoteEmbeddingClient(url)


def cmd_score(args: argparse.Namespace) -> int:
    from .pipeline import QualityThresholds, evaluate, similarity_map

    _, layout = load_session(args.session)
    report = validate_layout(layout)
    if not report.ok:
        raise ValueError("session is structurally invalid: " + "; ".join(report.violations))
    provider = _embed_provider(args.provider, args.endpoint)
    thresholds = QualityThresholds(
        consistency_min=args.consistency_min,
        include_skips=args.include_skips,
        include_question_pair=args.include_question_pair,
    )
    quality = evaluate(layout, provider, thresholds)
    if args.json:
        print(json.dumps(quality.to_json()))
    else:
        print(f"granularity {quality.granularity:.3f}, "
              f"mean consistency {quality.mean_consistency:.3f}, "
              f"{'pass' if quality.passed else 'FAIL'}")
        for line in quality.failures:
            print(f"  {line}")
    if args.out_dir:
        from .report import save_similarity_heatmap, write_csv, write_json
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(quality.to_json(), out / "quality_report.json")
        rows = [["input_unit", "score", "is_skip", "is_question"]] + [
            [p.input_unit, f"{p.score:.6f}", p.is_skip, p.is_question]
            for p in quality.pair_scores
        ]
        write_csv(rows, out / "pair_scores.csv")
        save_similarity_heatmap(similarity_map(layout, provider), out / "similarity_map.png")
        log.info("wrote quality report bundle under %s", out)
    return OK if quality.passed else CHECK_FAILED


def cmd_pipeline_run(args: argparse.Namespace) -> int:
    from .layout import SegmentLayout, parse_marked_text
    from .pipeline import (
        QualityThresholds,
        evaluate,
        generation_prompt,
        pass_at_2_filter,
        similarity_map,
    )

    meta, base = load_session(args.session)
    if not (base.question_units or base.context_units):
        raise ValueError("pipeline needs a session with input units")
    if args.stub_responses:
        client = StubGenerationClient(directory=args.stub_responses)
    else:
        url = args.endpoint or os.environ.get("STREAMKIT_GEN_URL")
        if not url:
            raise ValueError("pipeline needs --stub-responses or --endpoint/STREAMKIT_GEN_URL")
        client = RemoteGenerationClient(url)
    provider = _embed_provider(args.provider, args.embed_endpoint)
    thresholds = QualityThresholds(consistency_min=args.consistency_min)
    prompt = generation_prompt(base, example=args.example)
    traces: dict[int, tuple[SegmentLayout, str]] = {}
    provider_failures: list[int] = []

    def attempt(n: int) -> SegmentLayout:
        try:
            text = client.generate(prompt, {"attempt": n})
        except ProviderError:
            provider_failures.append(n)
            raise
        parsed = parse_marked_text(text, vocab_size=meta.vocab_size, markers=meta.markers)
        candidate = SegmentLayout(
            question_units=base.question_units,
            context_units=base.context_units,
            order=base.order,
            reasoning_units=parsed.units,
            answer_tokens=base.answer_tokens,
        )
        traces[id(candidate)] = (candidate, text)
        return candidate

    result = pass_at_2_filter(attempt, lambda cand: evaluate(cand, provider, thresholds))
    accepted_text = traces[id(result.accepted)][1] if result.accepted is not None else None
    outcome = {
        "accepted": result.accepted is not None,
        "attempts": result.attempts,
        "errors": list(result.errors),
        "reports": [r.to_json() if r else None for r in result.reports],
        "trace_text": accepted_text,
    }
    if args.json:
        print(json.dumps(outcome))
    else:
        state = "accepted" if outcome["accepted"] else "discarded"
        print(f"{state} after {result.attempts} attempt(s)")
        for e in result.errors:
            print(f"  {e}")
    if args.out_dir:
        from .report import save_similarity_heatmap, write_json
        from .session import save_session
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(outcome, out / "outcome.json")
        if result.accepted is not None:
            save_session(result.accepted, out / "accepted.jsonl", meta)
            save_similarity_heatmap(similarity_map(result.accepted, provider),
                                    out / "similarity_map.png")
        log.info("wrote pipeline bundle under %s", out)
    if outcome["accepted"]:
        return OK
    if provider_failures and len(provider_failures) == result.attempts:
        return REMOTE_FAILURE
    return CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
