"""Command-line entry point.

Exit status 1 means bad data or configuration; 2 means bad usage.
Diagnostics go to stderr, results to stdout or ``--out``.
"""
from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .backends import make_backend
from .config import ConfigError, RunConfig
from .dataset import (
    ReviewCheckers,
    build_dataset,
    dataset_stats,
    dump_records,
    read_records,
    review_record,
    split_by_video,
)
from .evaluation import eval_grounding_files, eval_qa_files, format_table, report_records
from .events import read_graphs, write_graphs
from .frames import FrameSource, read_manifest
from .grpo import compute_groups, grpo_objective, read_rollouts, write_rollouts
from .pipeline import PRESETS, PipelineConfig, ablation_table, format_ablation, result_to_dict, run_batch
from .rewards import score_response
from .synth import synthetic_corpus

__all__ = ["build_parser", "run_command", "main"]


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="INI config file with [run]/[budget]/[reward]/... sections", default=None)
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )
    p.add_argument("--seed", type=int, default=None, help="global seed (overrides run.seed)")
    p.add_argument("--jobs", type=int, default=None, help="worker pool size (overrides run.jobs, default 1)")
    p.add_argument("--out", default=None, help="write results here instead of stdout")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="spanqa", description="Span-grounded long-video QA toolkit.", formatter_class=_Formatter
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    groups = parser.add_subparsers(dest="group", required=True, metavar="{dataset,pipeline,reward,grpo,eval}")

    def leaf(sub, name, help_):
        return sub.add_parser(name, help=help_, parents=[common], formatter_class=_Formatter)

    ds = groups.add_parser("dataset", help="QA record construction and inspection")
    ds_sub = ds.add_subparsers(dest="command", required=True)
    p = leaf(ds_sub, "build", "event graphs -> reviewed, balanced QA records")
    p.add_argument("--graphs", default=None, help="event graph file (node/edge records)")
    p.add_argument("--synthetic", type=int, default=None, help="generate this many synthetic videos instead")
    p.add_argument("--manifest-dir", default=None, help="where synthetic frame manifests are written")
    p.add_argument("--graphs-out", default=None, help="also write the event graphs used")
    p.add_argument("--report", default=None, help="write per-record review verdicts here")
    p = leaf(ds_sub, "review", "run the review gates over a record file")
    p.add_argument("--in", dest="inp", required=True, help="record file")
    p.add_argument("--report", default=None, help="write per-record verdicts here")
    p = leaf(ds_sub, "split", "assign videos to train/val/test")
    p.add_argument("--in", dest="inp", required=True, help="record file")
    p = leaf(ds_sub, "stats", "span-length and label statistics")
    p.add_argument("--in", dest="inp", required=True, help="record file")

    pl = groups.add_parser("pipeline", help="two-stage inference against a backend")
    pl_sub = pl.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run one preset over a record file"), ("ablate", "presets A-D side by side")):
        p = leaf(pl_sub, name, help_)
        p.add_argument("--data", required=True, help="record file (gold)")
        p.add_argument("--manifests", required=True, help="directory of <video_id>.tsv frame manifests")
        p.add_argument("--backend", default=None, help="echo | random | malformed | http | pipe (overrides backend.kind)")
        p.add_argument("--url", default=None, help="http backend base URL (overrides backend.url)")
        p.add_argument("--command", dest="backend_command", default=None, help="pipe backend command line")
        p.add_argument("--mode", choices=("eval", "train"), default="eval", help="train enables teacher forcing")
        if name == "run":
            p.add_argument("--preset", choices=sorted(PRESETS), default="D", help="ablation configuration")

    rw = groups.add_parser("reward", help="score responses")
    rw_sub = rw.add_subparsers(dest="command", required=True)
    p = leaf(rw_sub, "score", "composite reward for each response")
    p.add_argument("--data", required=True, help="record file (gold)")
    p.add_argument("--responses", required=True, help="lines of {item_id, response_text, duration_s}")
    p.add_argument("--manifests", default=None, help="manifest directory supplying durations")
    p.add_argument("--step", type=int, default=None, help="training step for the gamma curriculum")

    gp = groups.add_parser("grpo", help="advantages and objective values")
    gp_sub = gp.add_subparsers(dest="command", required=True)
    p = leaf(gp_sub, "advantages", "group-relative advantages per rollout")
    p.add_argument("--in", dest="inp", required=True, help="rollout file")
    p = leaf(gp_sub, "objective", "GRPO loss value over a rollout file")
    p.add_argument("--in", dest="inp", required=True, help="rollout file")
    p.add_argument("--kl-coef", type=float, default=None, help="overrides grpo.kl_coef")

    ev = groups.add_parser("eval", help="benchmark metrics")
    ev_sub = ev.add_subparsers(dest="command", required=True)
    p = leaf(ev_sub, "grounding", "Recall@IoU and mIoU")
    p.add_argument("--pred", required=True, help="lines of {item_id, spans}")
    p.add_argument("--gold", required=True, help="record file")
    p.add_argument("--thresholds", default=None, help="comma-separated, overrides eval.thresholds")
    p.add_argument("--single-best", action="store_true", help="best single span instead of the union")
    p.add_argument("--format", choices=("table", "ndjson"), default="table", help="output format")
    p = leaf(ev_sub, "qa", "accuracy and macro average")
    p.add_argument("--pred", required=True, help="lines of {item_id, answer}")
    p.add_argument("--gold", required=True, help="record file")
    p.add_argument("--tasks", default=None, help="lines of {item_id, task} for M-Avg")
    p.add_argument("--format", choices=("table", "ndjson"), default="table", help="output format")
    return parser


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config, args.overrides)
    if args.seed is not None:
        cfg.set("run", "seed", args.seed)
    if args.jobs is not None:
        cfg.set("run", "jobs", args.jobs)
    return cfg


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _ndjson(rows) -> str:
    return "".join(json.dumps(r) + "\n" for r in rows)


def _load_sources(manifest_dir: str, records) -> dict[str, FrameSource]:
    sources = {}
    for vid in sorted({r.video_id for r in records}):
        path = Path(manifest_dir) / f"{vid}.tsv"
        if not path.exists():
            raise ValueError(f"no manifest for video {vid!r} at {path}")
        sources[vid] = read_manifest(path, video_id=vid)
    return sources


def _checkers(cfg: RunConfig) -> ReviewCheckers:
    return ReviewCheckers(deictic_terms=cfg.deictic_terms())


def _dataset_build(args, cfg):
    seed = cfg.seed
    if (args.graphs is None) == (args.synthetic is None):
        raise ValueError("give exactly one of --graphs or --synthetic")
    if args.graphs:
        graphs = read_graphs(args.graphs)
    else:
        _, graphs = synthetic_corpus(
            args.synthetic, seed, args.manifest_dir, chunk_len_s=cfg.get("dataset", "chunk_len_s")
        )
    if args.graphs_out:
        write_graphs(graphs, args.graphs_out)
    result = build_dataset(graphs, seed, checkers=_checkers(cfg), dup_threshold=cfg.get("dataset", "dup_threshold"))
    if args.report:
        Path(args.report).write_text(
            _ndjson({"item_id": r.item_id, "accepted": r.accepted, "failed_gate": r.failed_gate} for r in result.reports)
        )
    for item, err in result.errors.items():
        print(f"skipped {item}: {err}", file=sys.stderr)
    _emit(dump_records(result.records), args.out)
    print(f"{len(result.records)} records written", file=sys.stderr)


def _dataset_review(args, cfg):
    records = read_records(args.inp)
    checkers = _checkers(cfg)
    kept, rows = [], []
    for r in records:
        rep = review_record(r, checkers)
        rows.append({
            "item_id": rep.item_id,
            "accepted": rep.accepted,
            "verdicts": {g: {"passed": v.passed, "reason": v.reason} for g, v in rep.verdicts.items()},
        })
        if rep.accepted:
            kept.append(r)
    if args.report:
        Path(args.report).write_text(_ndjson(rows))
    _emit(dump_records(kept), args.out)
    print(f"{len(kept)}/{len(records)} records accepted", file=sys.stderr)


def _dataset_split(args, cfg):
    manifest = split_by_video(read_records(args.inp), cfg.split_ratios(), cfg.seed)
    _emit(json.dumps(manifest.to_dict(), indent=2) + "\n", args.out)


def _dataset_stats(args, cfg):
    _emit(json.dumps(dataset_stats(read_records(args.inp)).to_dict(), indent=2) + "\n", args.out)


def _pipeline_config(args, cfg, preset: str) -> PipelineConfig:
    return PipelineConfig(
        budget=cfg.budget(),
        reward=cfg.reward(),
        preset=preset,
        mode=args.mode,
        teacher_force_ratio=cfg.get("grpo", "teacher_force_ratio"),
        retries=cfg.get("backend", "retries"),
        backoff_s=cfg.get("backend", "backoff_s"),
        seed=cfg.seed,
    )


def _pipeline_setup(args, cfg):
    records = read_records(args.data)
    sources = _load_sources(args.manifests, records)
    kind = args.backend or cfg.get("backend", "kind")
    command = args.backend_command or cfg.get("backend", "command")
    backend = make_backend(
        kind,
        records=records,
        seed=cfg.seed,
        url=args.url or cfg.get("backend", "url") or None,
        command=shlex.split(command) if command else (),
    )
    items = [(sources[r.video_id], r) for r in records]
    return items, backend


def _pipeline_run(args, cfg):
    items, backend = _pipeline_setup(args, cfg)
    results = run_batch(items, backend, _pipeline_config(args, cfg, args.preset), cfg.get("run", "jobs"))
    _emit(_ndjson(result_to_dict(r) for r in results), args.out)
    n = len(results)
    if n:
        acc = 100.0 * sum(bool(r.reward and r.reward.correct) for r in results) / n
        tiou = sum(r.reward.tiou for r in results if r.reward) / n
        print(f"preset {args.preset}: {n} items, accuracy {acc:.2f}, mean tIoU {tiou:.3f}", file=sys.stderr)


def _pipeline_ablate(args, cfg):
    items, backend = _pipeline_setup(args, cfg)
    rows = ablation_table(items, backend, _pipeline_config(args, cfg, "D"), jobs=cfg.get("run", "jobs"))
    _emit(format_ablation(rows) + "\n", args.out)


def _reward_score(args, cfg):
    records = {r.item_id: r for r in read_records(args.data)}
    sources = _load_sources(args.manifests, records.values()) if args.manifests else {}
    rcfg = cfg.reward()
    rows = []
    with open(args.responses) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            resp = json.loads(line)
            item = records.get(resp.get("item_id"))
            if item is None:
                raise ValueError(f"{args.responses}:{lineno}: unknown item_id {resp.get('item_id')!r}")
            duration = resp.get("duration_s")
            if duration is None:
                if item.video_id not in sources:
                    raise ValueError(f"{args.responses}:{lineno}: no duration_s and no manifest for {item.video_id}")
                duration = sources[item.video_id].duration_s
            b = score_response(
                resp.get("response_text", ""), item.time_spans, item.correct_answer, float(duration), rcfg, step=args.step
            )
            rows.append({"item_id": item.item_id, **b.as_dict(), "gamma": b.gamma, "penalty": b.penalty})
    _emit(_ndjson(rows), args.out)


def _grpo_advantages(args, cfg):
    groups = compute_groups(read_rollouts(args.inp), cfg.get("grpo", "normalize"), cfg.get("grpo", "eps"))
    if args.out:
        write_rollouts(groups, args.out)
    else:
        from .grpo import rollout_record

        rows = (rollout_record(r, a) for g in groups for r, a in zip(g.rollouts, g.advantages))
        sys.stdout.write(_ndjson(rows))


def _grpo_objective(args, cfg):
    groups = compute_groups(read_rollouts(args.inp), cfg.get("grpo", "normalize"), cfg.get("grpo", "eps"))
    kl = args.kl_coef if args.kl_coef is not None else cfg.get("grpo", "kl_coef")
    _emit(json.dumps({"groups": len(groups), "kl_coef": kl, "objective": grpo_objective(groups, kl)}) + "\n", args.out)


def _eval_grounding(args, cfg):
    thresholds = tuple(float(x) for x in args.thresholds.split(",")) if args.thresholds else cfg.thresholds()
    single = args.single_best or cfg.get("eval", "single_best")
    report = eval_grounding_files(args.pred, args.gold, thresholds, single)
    _emit(format_table(report) + "\n" if args.format == "table" else _ndjson(report_records(report)), args.out)


def _eval_qa(args, cfg):
    report = eval_qa_files(args.pred, args.gold, args.tasks)
    _emit(format_table(report) + "\n" if args.format == "table" else _ndjson(report_records(report)), args.out)


_HANDLERS = {
    ("dataset", "build"): _dataset_build,
    ("dataset", "review"): _dataset_review,
    ("dataset", "split"): _dataset_split,
    ("dataset", "stats"): _dataset_stats,
    ("pipeline", "run"): _pipeline_run,
    ("pipeline", "ablate"): _pipeline_ablate,
    ("reward", "score"): _reward_score,
    ("grpo", "advantages"): _grpo_advantages,
    ("grpo", "objective"): _grpo_objective,
    ("eval", "grounding"): _eval_grounding,
    ("eval", "qa"): _eval_qa,
}


def run_command(argv: Sequence[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = _config(args)
        _HANDLERS[(args.group, args.command)](args, cfg)
    except (ConfigError, ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
