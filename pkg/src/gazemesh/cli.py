"""Command line: scripted simulations, a live session host, log stats.

Exit codes: 0 success (and cross-site agreement for `simulate`),
1 usage or input problems, 2 semantic disagreement between sites.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from typing import Optional

from . import gaze, scenario, schedule
from .errors import GazemeshError, ScenarioError
from .gaze import exclusion_intervals, exclusion_log_obj, session_stats
from .scenario import Scenario
from .session import Simulation, reconcile_views

DEFAULT_DEBOUNCE_MS = 100.0


class _Parser(argparse.ArgumentParser):
    """Argparse exits 2 on usage errors; we reserve 2 for disagreement."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gazemesh",
                     description="mutual-gaze session simulator and host")
    sub = parser.add_subparsers(dest="command", metavar="command")

    sim = sub.add_parser("simulate", help="run a scripted scenario to completion")
    sim.add_argument("scenario", help="scenario file path or bundled name")
    sim.add_argument("out", help="output directory (created if missing)")
    _schedule_flags(sim)
    sim.add_argument("--seed", type=int, default=None,
                     help="override the scenario's network seed")
    sim.set_defaults(func=cmd_simulate)

    srv = sub.add_parser("serve", help="host a live session for console clients")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8765)
    srv.add_argument("--out", default=None,
                     help="directory for the final report (default: stdout only)")
    srv.add_argument("--time-scale", type=float, default=1.0,
                     help="virtual seconds per wall second (default 1)")
    _schedule_flags(srv)
    srv.set_defaults(func=cmd_serve)

    st = sub.add_parser("stats", help="recompute totals from a JSONL event log")
    st.add_argument("log", help="event log path (events.jsonl)")
    st.set_defaults(func=cmd_stats)
    return parser


def _schedule_flags(p: argparse.ArgumentParser):
    p.add_argument("--fps", type=float, default=None,
                   help="frame rate (default 60)")
    p.add_argument("--capture-ms", type=float, default=None,
                   help="capture window length in ms (default 6)")
    p.add_argument("--offset-ms", type=float, default=None,
                   help="capture window offset within the frame (default 0)")
    p.add_argument("--debounce-ms", type=float, default=None,
                   help="mutual-gaze debounce in ms (default 100)")


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"gazemesh: scenario error: {exc}", file=sys.stderr)
        return 1
    except GazemeshError as exc:
        print(f"gazemesh: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"gazemesh: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


# -- simulate ----------------------------------------------------------


def _resolve_scenario(ref: str) -> Scenario:
    if os.path.exists(ref):
        return scenario.load_scenario(ref)
    if os.sep not in ref and not ref.endswith(".json"):
        names = scenario.bundled_names()
        if ref in names:
            return scenario.load_bundled(ref)
        raise ScenarioError(
            f"{ref!r} is neither a file nor a bundled scenario "
            f"(bundled: {', '.join(names)})")
    raise ScenarioError(f"scenario file not found: {ref!r}")


def _apply_flags(sc: Scenario, args) -> tuple[Scenario, int]:
    """Explicit flags beat scenario values beat built-in defaults."""
    sc = replace(
        sc,
        fps=args.fps if args.fps is not None else sc.fps,
        capture_ms=args.capture_ms if args.capture_ms is not None else sc.capture_ms,
        offset_ms=args.offset_ms if args.offset_ms is not None else sc.offset_ms,
        seed=args.seed if getattr(args, "seed", None) is not None else sc.seed,
    )
    if args.debounce_ms is not None:
        debounce_ms = args.debounce_ms
    elif sc.debounce_ms is not None:
        debounce_ms = sc.debounce_ms
    else:
        debounce_ms = DEFAULT_DEBOUNCE_MS
    return sc, round(debounce_ms * 1000)


def cmd_simulate(args) -> int:
    sc, debounce_us = _apply_flags(_resolve_scenario(args.scenario), args)
    sim, horizon_us = scenario.instantiate(sc, debounce_us)
    sim.run(horizon_us)
    report = build_report(sim, sc, horizon_us, debounce_us)
    write_outputs(args.out, sim, sc, report, horizon_us)
    agreement = report["agreement"]
    print(f"episodes: {report['totals']['episode_count']}  "
          f"mesh links: {report['mesh_links']}  out: {args.out}")
    if agreement["agrees"]:
        print(f"sites agree (max skew {agreement['max_skew_us']} us, "
              f"threshold {agreement['threshold_us']} us)")
        return 0
    for sp in agreement["site_pairs"]:
        if sp["mismatch_count"] or sp["max_skew_us"] > agreement["threshold_us"]:
            print(f"disagree: {sp['site_a']} vs {sp['site_b']}: "
                  f"max skew {sp['max_skew_us']} us, "
                  f"{sp['mismatch_count']} episode mismatch(es)")
    return 2


def _pair_str(pair: tuple[str, str]) -> str:
    return f"{pair[0]}|{pair[1]}"


def build_report(sim: Simulation, sc: Scenario, horizon_us: int,
                 debounce_us: int) -> dict:
    ids = [p.id for p in sc.participants]
    ground = sim.ground.episodes()
    stats = session_stats(ground, ids, horizon_us)
    views = sim.member_views()
    agreement = reconcile_views(views, latency_bound_us=round(sc.latency_ms * 1000),
                                jitter_us=round(sc.jitter_ms * 1000))
    s = sim.cfg.schedule
    duty = schedule.display_duty(s)
    return {
        "run": {
            "participants": ids,
            "seed": sc.seed,
            "duration_us": horizon_us,
            "debounce_us": debounce_us,
            "latency_us": round(sc.latency_ms * 1000),
            "jitter_us": round(sc.jitter_ms * 1000),
            "loss": sc.loss,
        },
        "schedule": {
            "fps": sc.fps,
            "period_us": s.period_us,
            "capture_us": s.capture_duration_us,
            "offset_us": s.capture_offset_us,
            "display_duty": float(duty),
            "display_duty_exact": f"{duty.numerator}/{duty.denominator}",
            "capture_rate_hz": 1e6 / s.period_us,
        },
        "episodes": [
            {"pair": list(e.pair), "start_us": e.start_us, "end_us": e.end_us}
            for e in ground
        ],
        "exclusion": {
            who: [[iv.start_us, iv.end_us]
                  for iv in exclusion_intervals(ground, ids, who, horizon_us)]
            for who in ids
        },
        "totals": {
            "mutual_us": {_pair_str(k): v for k, v in sorted(stats.mutual_us.items())},
            "exclusion_us": dict(sorted(stats.exclusion_us.items())),
            "episode_count": stats.episode_count,
        },
        "agreement": {
            "agrees": agreement.agrees,
            "threshold_us": agreement.threshold_us,
            "max_skew_us": agreement.max_skew_us,
            "site_pairs": [
                {"site_a": sp.site_a, "site_b": sp.site_b,
                 "max_skew_us": sp.max_skew_us,
                 "mismatch_count": len(sp.mismatches)}
                for sp in agreement.site_pairs
            ],
            "mismatches": [
                {"site_a": m.site_a, "site_b": m.site_b, "pair": list(m.pair),
                 "count_a": m.count_a, "count_b": m.count_b}
                for m in agreement.mismatches
            ],
        },
        "ring": {
            "coordinator_version": sim.coordinator.version,
            "order": list(sim.coordinator.ring.order) if sim.coordinator.ring else [],
            "site_versions": {
                pid: (site.ring.version if site.ring else None)
                for pid, site in sorted(sim.sites.items())
            },
        },
        "mesh_links": sim.mesh_link_count(),
        "frame_stubs": {
            "sent": {pid: len(site.stub_log) for pid, site in sorted(sim.sites.items())},
            "received": {pid: site.stubs_received for pid, site in sorted(sim.sites.items())},
        },
    }


def _merged_log(stream_lines, episodes, members, exclusion_members, horizon_us):
    """Episode events in stream order plus derived exclusion transitions.

    Exclusion lines come from the final episode record rather than the
    live stream: a debounced episode is backdated at confirmation, so
    only hindsight yields exclusion boundaries consistent with totals.
    """
    merged = [(t, 0, emit, obj) for (t, emit, obj) in stream_lines]
    seq = 0
    for who in exclusion_members:
        for iv in exclusion_intervals(episodes, members, who, horizon_us):
            merged.append((iv.start_us, 1, seq,
                           exclusion_log_obj("exclusion_start", who, iv.start_us)))
            merged.append((iv.end_us, 1, seq + 1,
                           exclusion_log_obj("exclusion_end", who, iv.end_us)))
            seq += 2
    merged.sort(key=lambda item: (item[0], item[1], item[2]))
    return [obj for _, _, _, obj in merged]


def write_outputs(out_dir: str, sim: Simulation, sc: Scenario, report: dict,
                  horizon_us: int):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    ids = [p.id for p in sc.participants]
    ground_lines = _merged_log(sim.ground_log, sim.ground.episodes(),
                               ids, sorted(ids), horizon_us)
    _write_jsonl(os.path.join(out_dir, "events.jsonl"), ground_lines)
    for pid, site in sorted(sim.sites.items()):
        if site.tracker is None:
            continue
        lines = _merged_log(site.event_log, site.tracker.episodes(),
                            site.tracker.members, [pid], horizon_us)
        _write_jsonl(os.path.join(out_dir, f"site-{pid}.events.jsonl"), lines)


def _write_jsonl(path: str, lines: list[dict]):
    with open(path, "w", encoding="utf-8") as fh:
        for obj in lines:
            fh.write(json.dumps(obj, separators=(",", ":")))
            fh.write("\n")


# -- stats -------------------------------------------------------------

_LOG_TYPES = ("open", "close", "exclusion_start", "exclusion_end")


def _parse_log_line(text: str, lineno: int) -> dict:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {lineno}: not valid JSON ({exc})") from exc
    if not isinstance(obj, dict) or set(obj) != {"t_us", "type", "a", "b"}:
        raise ScenarioError(f"line {lineno}: expected fields t_us, type, a, b")
    if not isinstance(obj["t_us"], int) or isinstance(obj["t_us"], bool):
        raise ScenarioError(f"line {lineno}: t_us must be an integer")
    if obj["type"] not in _LOG_TYPES:
        raise ScenarioError(f"line {lineno}: unknown type {obj['type']!r}")
    if not isinstance(obj["a"], str) or not obj["a"]:
        raise ScenarioError(f"line {lineno}: field a must name a participant")
    is_pair = obj["type"] in ("open", "close")
    if is_pair and (not isinstance(obj["b"], str) or not obj["b"]):
        raise ScenarioError(f"line {lineno}: field b must name a participant")
    if not is_pair and obj["b"] is not None:
        raise ScenarioError(f"line {lineno}: field b must be null for exclusion lines")
    return obj


def recompute_from_log(path: str):
    """Rebuild totals from a JSONL event log (the stats oracle)."""
    mutual: dict[tuple[str, str], int] = {}
    exclusion: dict[str, int] = {}
    episode_count = 0
    open_pairs: dict[tuple[str, str], int] = {}
    open_exclusions: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                raise ScenarioError(f"line {lineno}: blank line in event log")
            obj = _parse_log_line(raw, lineno)
            t = obj["t_us"]
            if obj["type"] == "open":
                pair = gaze.pair_key(obj["a"], obj["b"])
                if pair in open_pairs:
                    raise ScenarioError(f"line {lineno}: {pair} opened twice")
                open_pairs[pair] = t
            elif obj["type"] == "close":
                pair = gaze.pair_key(obj["a"], obj["b"])
                if pair not in open_pairs:
                    raise ScenarioError(f"line {lineno}: close without open for {pair}")
                width = t - open_pairs.pop(pair)
                if width > 0:
                    mutual[pair] = mutual.get(pair, 0) + width
                    episode_count += 1
            elif obj["type"] == "exclusion_start":
                who = obj["a"]
                if who in open_exclusions:
                    raise ScenarioError(f"line {lineno}: exclusion for {who} opened twice")
                open_exclusions[who] = t
            else:
                who = obj["a"]
                if who not in open_exclusions:
                    raise ScenarioError(f"line {lineno}: exclusion_end without start for {who}")
                exclusion[who] = exclusion.get(who, 0) + t - open_exclusions.pop(who)
    return mutual, exclusion, episode_count, open_pairs, open_exclusions


def cmd_stats(args) -> int:
    mutual, exclusion, count, open_pairs, open_exclusions = recompute_from_log(args.log)
    print("mutual gaze totals (us):")
    if mutual:
        width = max(len(_pair_str(p)) for p in mutual)
        for pair in sorted(mutual):
            print(f"  {_pair_str(pair):<{width}}  {mutual[pair]:>12}")
    else:
        print("  (none)")
    print("exclusion totals (us):")
    if exclusion:
        width = max(len(w) for w in exclusion)
        for who in sorted(exclusion):
            print(f"  {who:<{width}}  {exclusion[who]:>12}")
    else:
        print("  (none)")
    print(f"episodes: {count}")
    if open_pairs or open_exclusions:
        print(f"still open at end of log: {len(open_pairs)} pair(s), "
              f"{len(open_exclusions)} exclusion(s)")
    return 0


# -- serve -------------------------------------------------------------


def cmd_serve(args) -> int:
    from . import server

    return server.run_server(args)
