"""Command-line entry point exposing every pipeline stage.

Exit codes: 0 on success, 1 on runtime failure, 2 on configuration or usage
errors. Every data-producing run writes a ``run-manifest.json`` into the
output directory with the config digest and cache statistics, so reruns can
be compared byte for byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import PipelineConfig
from .core import (
    MixedModalRecord,
    TextVariant,
    read_records,
    write_records,
)
from .editor import PostEditor
from .errors import AdcriticError, ConfigError
from .evaluate import EvalReport, EvalRow, preprocess_ground_truth, score_texts
from .gateway import Gateway
from .mockserve import serve_world
from .prompts import PromptEngine
from .protocol import LABEL_WIRE
from .trainset import TrainsetBuilder

log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adcritic",
        description=(
            "Generate advertising text from mixed-modal records, collect vision-critic "
            "feedback, post-edit drafts, build critic training corpora, and evaluate."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="pipeline config JSON file")
        return p

    with_config(sub.add_parser("ingest", help="validate the corpus and write it back normalized"))
    with_config(sub.add_parser("generate", help="generate draft texts for every record"))
    with_config(sub.add_parser("feedback", help="collect critic feedback on every draft"))
    edit = with_config(sub.add_parser("edit", help="apply the critic-guided post edit"))
    edit.add_argument(
        "--variant",
        choices=["pruned", "appended", "combined"],
        default="combined",
    )
    with_config(sub.add_parser("build-trainset", help="emit the critic training corpora"))
    with_config(
        sub.add_parser("preprocess-gt", help="reduce reference texts to faithful features")
    )
    ev = with_config(sub.add_parser("eval", help="score generated texts against faithful GT"))
    ev.add_argument("--gen", action="append", required=True, help="generated-text JSONL file")
    ev.add_argument("--gt", help="faithful-GT JSONL from preprocess-gt (computed if omitted)")
    ev.add_argument("--group", help="backbone group label for the report rows")

    ms = sub.add_parser("mock-serve", help="serve the critic wire protocol from a mock world")
    ms.add_argument("--port", type=int, required=True)
    ms.add_argument("--world", required=True, help="record file with image manifests")
    ms.add_argument("--host", default="127.0.0.1")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _map_records(records, fn, workers: int):
    if workers <= 1:
        return [fn(r) for r in records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, records))


def _write_jsonl(path: Path, rows) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")


def _write_manifest(cfg: PipelineConfig, command: str, gateway: Gateway | None, outputs):
    manifest = {
        "command": command,
        "config_digest": cfg.digest(),
        "cache": gateway.stats.as_dict() if gateway else {},
        "outputs": sorted(outputs),
    }
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.output_dir / "run-manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class _Runtime:
    """Lazily constructed shared objects for one CLI invocation."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.gateway = cfg.build_gateway()
        self.engine = PromptEngine(cfg.templates_dir)
        self.editor = PostEditor(
            self.gateway,
            self.engine,
            tau_sal=cfg.tau_sal,
            hallucinated_rationale=cfg.hallucinated_rationale,
        )
        self.records = read_records(cfg.corpus, strict=cfg.schema_mode == "strict")
        cfg.output_dir.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------------------
# commands


def _cmd_ingest(cfg: PipelineConfig) -> int:
    rt = _Runtime(cfg)
    out = cfg.output_dir / "records.jsonl"
    write_records(out, rt.records)
    print(f"ingested {len(rt.records)} records -> {out}")
    _write_manifest(cfg, "ingest", rt.gateway, [out.name])
    return 0


def _cmd_generate(cfg: PipelineConfig) -> int:
    rt = _Runtime(cfg)

    def one(record: MixedModalRecord) -> dict:
        draft = rt.editor.run(record, TextVariant.DRAFT)
        return {
            "record_id": draft.record_id,
            "variant": draft.variant.value,
            "text": draft.text,
            "provenance": list(draft.provenance),
        }

    rows = _map_records(rt.records, one, cfg.workers)
    out = cfg.output_dir / "generated.draft.jsonl"
    _write_jsonl(out, rows)
    print(f"generated {len(rows)} drafts -> {out}")
    _write_manifest(cfg, "generate", rt.gateway, [out.name])
    return 0


def _feedback_row(editor: PostEditor, record: MixedModalRecord) -> dict:
    draft = editor.run(record, TextVariant.DRAFT)
    fb = editor.collect_feedback(draft, record)
    return {
        "record_id": record.record_id,
        "erroneous": [
            {
                "feature": lf.feature.display,
                "label": LABEL_WIRE[lf.label],
                "rationale": lf.rationale,
            }
            for lf in fb.erroneous
        ],
        "missing_salient": [f.display for f in fb.missing_salient],
        "verdicts": {
            key: {"label": LABEL_WIRE[v.label], "rationale": v.rationale}
            for key, v in sorted(fb.per_feature_verdicts.items())
        },
    }


def _cmd_feedback(cfg: PipelineConfig) -> int:
    rt = _Runtime(cfg)
    rows = _map_records(rt.records, lambda r: _feedback_row(rt.editor, r), cfg.workers)
    out = cfg.output_dir / "feedback.jsonl"
    _write_jsonl(out, rows)
    print(f"collected feedback for {len(rows)} records -> {out}")
    _write_manifest(cfg, "feedback", rt.gateway, [out.name])
    return 0


def _cmd_edit(cfg: PipelineConfig, variant: str) -> int:
    rt = _Runtime(cfg)
    wanted = TextVariant(variant)

    def one(record: MixedModalRecord) -> dict:
        texts = rt.editor.run_all(record, only=wanted)
        fb = rt.editor.last_feedback
        return {
            "record_id": record.record_id,
            "variant": wanted.value,
            "text": texts[wanted].text,
            "erroneous": [lf.feature.display for lf in fb.erroneous] if fb else [],
            "missing": [f.display for f in fb.missing_salient] if fb else [],
        }

    rows = _map_records(rt.records, one, cfg.workers)
    out = cfg.output_dir / f"edited.{variant}.jsonl"
    _write_jsonl(out, rows)
    print(f"edited {len(rows)} records ({variant}) -> {out}")
    _write_manifest(cfg, "edit", rt.gateway, [out.name])
    return 0


def _cmd_build_trainset(cfg: PipelineConfig) -> int:
    rt = _Runtime(cfg)
    builder = TrainsetBuilder(
        rt.gateway,
        rt.engine,
        rt.editor,
        tau_align=cfg.tau_align,
        tau_sal=cfg.tau_sal,
        seed=cfg.seed,
        split_ratio=cfg.split_ratio,
        alignment_mode=cfg.alignment_mode,
        saliency_mode=cfg.saliency_mode,
    )
    build = builder.build(rt.records)
    names = build.write(cfg.output_dir)
    counts = build.counts()["classification"]
    print(
        f"trainset: {counts['train']['total']} train / {counts['val']['total']} val "
        f"classification examples -> {cfg.output_dir}"
    )
    _write_manifest(cfg, "build-trainset", rt.gateway, names)
    return 0


def _cmd_preprocess_gt(cfg: PipelineConfig) -> int:
    rt = _Runtime(cfg)

    def one(record: MixedModalRecord) -> dict:
        gt = preprocess_ground_truth(rt.gateway, rt.engine, record, tau_align=cfg.tau_align)
        return {
            "record_id": gt.record_id,
            "faithful_features": [f.display for f in gt.faithful_features],
            "paragraph": gt.paragraph,
        }

    rows = _map_records(rt.records, one, cfg.workers)
    out = cfg.output_dir / "faithful_gt.jsonl"
    _write_jsonl(out, rows)
    print(f"preprocessed {len(rows)} reference texts -> {out}")
    _write_manifest(cfg, "preprocess-gt", rt.gateway, [out.name])
    return 0


def _load_jsonl(path: Path) -> list[dict]:
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def _cmd_eval(cfg: PipelineConfig, gen_files: list[str], gt_file: str | None, group) -> int:
    rt = _Runtime(cfg)
    by_id = {r.record_id: r for r in rt.records}

    if gt_file:
        gt_rows = _load_jsonl(Path(gt_file))
        paragraphs = {row["record_id"]: row["paragraph"] for row in gt_rows}
    else:
        paragraphs = {}
        for record in rt.records:
            if record.ground_truth_text:
                gt = preprocess_ground_truth(rt.gateway, rt.engine, record, cfg.tau_align)
                paragraphs[gt.record_id] = gt.paragraph

    rows: list[EvalRow] = []
    for gen_file in gen_files:
        by_variant: dict[str, list[dict]] = {}
        for row in _load_jsonl(Path(gen_file)):
            by_variant.setdefault(row["variant"], []).append(row)
        for variant, entries in sorted(by_variant.items()):
            pairs = []
            records = []
            for entry in entries:
                rid = entry["record_id"]
                if rid not in paragraphs or rid not in by_id:
                    log.warning("skipping %s: no faithful reference", rid)
                    continue
                pairs.append((entry["text"], paragraphs[rid]))
                records.append(by_id[rid])
            if not pairs:
                continue
            values = score_texts(pairs, records, rt.gateway, clip_weight=cfg.clip_weight)
            label = "baseline" if variant == "draft" else variant
            rows.append(EvalRow(variant=label, metrics=values, group=group))

    report = EvalReport(
        rows=rows,
        metadata={
            "corpus": cfg.corpus.name,
            "seed": cfg.seed,
            "backends": sorted({spec.backend_id() for spec in cfg.backends.values()}),
        },
    )
    names = report.write(cfg.output_dir, corpus_id=cfg.corpus.stem)
    print(report.render_table())
    _write_manifest(cfg, "eval", rt.gateway, names)
    return 0


# ---------------------------------------------------------------------------


def run_command(args: argparse.Namespace) -> int:
    if args.command == "mock-serve":
        serve_world(args.world, args.port, args.host)
        return 0
    cfg = PipelineConfig.load(args.config)
    if args.command == "ingest":
        return _cmd_ingest(cfg)
    if args.command == "generate":
        return _cmd_generate(cfg)
    if args.command == "feedback":
        return _cmd_feedback(cfg)
    if args.command == "edit":
        return _cmd_edit(cfg, args.variant)
    if args.command == "build-trainset":
        return _cmd_build_trainset(cfg)
    if args.command == "preprocess-gt":
        return _cmd_preprocess_gt(cfg)
    if args.command == "eval":
        return _cmd_eval(cfg, args.gen, args.gt, args.group)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return run_command(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AdcriticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
