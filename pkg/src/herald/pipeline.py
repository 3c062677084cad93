"""Stage orchestration behind the CLI subcommands.

Every stage writes its artifacts under the configured output directory plus
a manifest carrying the config digest and the seeds actually used, so a
finished tree is reproducible and tamper-evident on resume.  Nothing here
embeds timestamps or absolute paths: with mock roles, identical inputs and
seeds yield byte-identical trees.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from . import augment as aug
from . import datastore as ds
from . import depgraph, ingest, prompts, retrieval, validate
from .config import PipelineConfig
from .errors import InvalidInput, SchemaError
from .records import CorpusIndex

logger = logging.getLogger(__name__)

LEDGER_NAME = "completed.jsonl"


def write_manifest(out_dir: Path, command: str, config: PipelineConfig, extra: dict) -> None:
    payload = {
        "command": command,
        "config_digest": config.config_digest,
        "seeds": {
            "seed": config.seed,
            "dedup_seed": config.dedup_seed,
            "mix_seed": config.mix_seed,
        },
    }
    payload.update(extra)
    (out_dir / f"{command}_run_manifest.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def level_files(directory: Path) -> list[Path]:
    """statements_level_*.jsonl in numeric level order."""
    return sorted(
        Path(directory).glob("statements_level_*.jsonl"),
        key=lambda p: int(p.stem.rsplit("_", 1)[1]),
    )


def load_index(path: Path) -> CorpusIndex:
    return ingest.parse_jixia_export(Path(path).read_bytes())


# --- ingest ----------------------------------------------------------------


def run_ingest(config: PipelineConfig, out_dir: Path) -> CorpusIndex:
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.corpus_export is not None:
        index = load_index(config.corpus_export)
    elif config.source_dir is not None:
        index = ingest_source_tree(config.source_dir)
    else:
        raise InvalidInput("ingest needs either a corpus export or a source directory")
    (out_dir / "index.json").write_text(ingest.serialize_index(index), encoding="utf-8")
    for warning in index.warnings:
        logger.warning("%s", warning)
    write_manifest(
        out_dir,
        "ingest",
        config,
        {
            "declarations": len(index.declarations),
            "proofs": len(index.proofs),
            "warnings": len(index.warnings),
        },
    )
    return index


def ingest_source_tree(source_dir: Path) -> CorpusIndex:
    """Scan every .lean file under ``source_dir`` (fixture-scale fallback)."""
    declarations = {}
    head_statements = {}
    diagnostics = []
    for path in sorted(Path(source_dir).rglob("*.lean")):
        rel = path.relative_to(source_dir).as_posix()
        result = ingest.scan_declarations(path.read_text(encoding="utf-8"), file_path=rel)
        diagnostics.extend(f"{rel}: {d}" for d in result.diagnostics)
        if result.head_statement:
            head_statements[rel] = result.head_statement
        for rec in result.records:
            if rec.full_name in declarations:
                diagnostics.append(f"{rel}: duplicate name {rec.full_name}, keeping first")
                continue
            declarations[rec.full_name] = rec
    for diag in diagnostics:
        logger.warning("scan: %s", diag)
    return CorpusIndex(declarations=declarations, head_statements=head_statements)


# --- stratify ---------------------------------------------------------------


def run_stratify(
    index: CorpusIndex, config: PipelineConfig, out_dir: Path, emit_dot: Path | None = None
) -> depgraph.LevelAssignment:
    out_dir.mkdir(parents=True, exist_ok=True)
    graph = depgraph.build_graph(index)
    depgraph.check_acyclic(graph)
    assignment = depgraph.stratify(graph)
    batches = depgraph.schedule(assignment, config.batch_size)
    doc = {
        "level_of": {n: assignment.level_of[n] for n in sorted(assignment.level_of)},
        "levels": [list(level) for level in assignment.levels],
        "batches": batches,
        "unresolved_dependencies": graph.unresolved_count,
    }
    (out_dir / "levels.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if emit_dot is not None:
        emit_dot.write_text(depgraph.to_dot(graph), encoding="utf-8")
    write_manifest(
        out_dir,
        "stratify",
        config,
        {"nodes": len(graph.nodes), "edges": len(graph.edges), "levels": len(assignment.levels)},
    )
    return assignment


# --- informalize -------------------------------------------------------------


class CompletionLedger:
    """Append-only record of finished ids; survives kills mid-run."""

    def __init__(self, path: Path):
        self.path = path
        self.done: set[str] = set()
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        self.done.add(json.loads(line)["id"])

    def mark(self, item_id: str) -> None:
        self.done.add(item_id)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"id": item_id}) + "\n")
            fh.flush()


def _existing_pair_ids(out_dir: Path) -> dict[str, ds.NLFLPair]:
    """Pairs already on disk from an interrupted run, keyed by id."""
    found: dict[str, ds.NLFLPair] = {}
    for path in level_files(out_dir) + [out_dir / "proofs.jsonl"]:
        if path.exists():
            for pair in ds.read_pairs(path):
                found[pair.id] = pair
    return found


def _load_registry(config: PipelineConfig) -> prompts.TemplateRegistry:
    if config.template_registry is not None:
        return prompts.TemplateRegistry.from_path(config.template_registry)
    return prompts.default_registry()


def _retrieval_context(config: PipelineConfig):
    if config.example_store is None:
        return None, None
    store = retrieval.load_store(config.example_store)
    if store.count == 0 or store.dim is None:
        return None, None
    provider = retrieval.HashEmbeddingProvider(dim=store.dim)
    return store, provider


def run_informalize(
    index: CorpusIndex,
    config: PipelineConfig,
    out_dir: Path,
    dry_run: bool = False,
) -> dict[str, int]:
    """Level-ordered statement pass, then stepwise proof pass.

    Resumable: completed ids are tracked in a ledger and already-written
    records are never re-emitted.  The proof pass for a declaration only
    runs once its statement translation exists.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    digest_file = out_dir / "config_digest.txt"
    if not dry_run:
        # Tamper check: never resume into outputs built from another config.
        if digest_file.exists():
            previous = digest_file.read_text(encoding="utf-8").strip()
            if previous != config.config_digest:
                raise InvalidInput(
                    f"{out_dir} was produced with config digest {previous[:12]}, "
                    f"current config is {config.config_digest[:12]}; refusing to resume"
                )
        else:
            digest_file.write_text(config.config_digest + "\n", encoding="utf-8")
    registry = _load_registry(config)
    notes = prompts.load_tactic_notes(config.tactic_notes)
    store, embed_provider = _retrieval_context(config)

    graph = depgraph.build_graph(index)
    depgraph.check_acyclic(graph)
    assignment = depgraph.stratify(graph)

    gateway = config.gateway(cache_dir=out_dir / "cache")
    informalizer = config.role("informalizer")
    ledger = CompletionLedger(out_dir / LEDGER_NAME)
    existing = _existing_pair_ids(out_dir)
    translations: dict[str, str] = {
        pid: pair.informal_text
        for pid, pair in existing.items()
        if pair.record_type == "statement"
    }

    def resolve_signature(name: str) -> str:
        return f"{name} : {index.declarations[name].signature}"

    prompts_dir = out_dir / "prompts"
    statements_written = 0
    proofs_written = 0

    try:
        for level_index, level in enumerate(assignment.levels):
            level_path = out_dir / f"statements_level_{level_index}.jsonl"
            for start in range(0, len(level), config.batch_size):
                for name in level[start : start + config.batch_size]:
                    if name in ledger.done or name in existing:
                        if name in existing and existing[name].informal_text:
                            translations.setdefault(name, existing[name].informal_text)
                        continue
                    subject = index.declarations[name]
                    retrieved: tuple[retrieval.ScoredExample, ...] = ()
                    if store is not None and embed_provider is not None:
                        query = retrieval.embed(subject.signature, embed_provider)
                        retrieved = tuple(
                            retrieval.query_knn(store, query, config.retrieval_k)
                        )
                    ctx = prompts.build_statement_context(
                        subject,
                        index,
                        assignment,
                        translations,
                        retrieved=retrieved,
                        neighbor_limit=config.neighbor_limit,
                    )
                    prompt = prompts.assemble_statement_prompt(
                        ctx,
                        registry,
                        resolve_signature=resolve_signature,
                        max_chars=config.max_prompt_chars,
                    )
                    if dry_run:
                        prompts_dir.mkdir(parents=True, exist_ok=True)
                        (prompts_dir / f"{name}.txt").write_text(
                            prompt.text, encoding="utf-8"
                        )
                        continue
                    informal = gateway.complete_role(informalizer, prompt.text)[0].text.strip()
                    pair = ds.NLFLPair(
                        id=name,
                        formal_text=subject.signature,
                        informal_text=informal,
                        direction=ds.Direction.NL_TO_FL,
                        provenance=ds.Provenance.ORIGINAL,
                        source_name=name,
                        level=level_index,
                    )
                    with open(level_path, "a", encoding="utf-8") as fh:
                        fh.write(json.dumps(ds.pair_to_dict(pair), ensure_ascii=False) + "\n")
                    translations[name] = informal
                    ledger.mark(name)
                    statements_written += 1

        # Proof pass: only for declarations whose statement translation exists.
        proofs_path = out_dir / "proofs.jsonl"
        for name in index.tactic_proof_names():
            proof_id = f"{name}::proof"
            if proof_id in ledger.done or proof_id in existing:
                continue
            informal_statement = translations.get(name, "")
            if not informal_statement:
                if not dry_run:
                    logger.warning("skipping proof of %s: no statement translation", name)
                    continue
                informal_statement = "(statement translation pending)"
            steps = index.proofs[name]
            subject = index.declarations[name]
            ctx = prompts.ProofContext(
                formal_statement=subject.signature,
                informal_statement=informal_statement,
                steps=steps,
                tactic_notes=notes,
            )
            if dry_run:
                prompts_dir.mkdir(parents=True, exist_ok=True)
                proof_prompt = prompts.assemble_proof_prompt(ctx, registry)
                (prompts_dir / f"{name}.proof.txt").write_text(
                    proof_prompt.text, encoding="utf-8"
                )
                continue
            stepwise = []
            for step_index in range(len(steps)):
                step_prompt = prompts.assemble_step_prompt(ctx, step_index, registry)
                stepwise.append(
                    gateway.complete_role(informalizer, step_prompt.text)[0].text.strip()
                )
            summary_prompt = prompts.summarize_steps_prompt(stepwise, ctx, registry)
            whole_proof = gateway.complete_role(informalizer, summary_prompt.text)[0].text.strip()
            script = subject.signature + " := by\n" + "\n".join(
                f"  {s.tactic_text}" for s in steps
            )
            pair = ds.NLFLPair(
                id=proof_id,
                formal_text=script,
                informal_text=whole_proof,
                direction=ds.Direction.NL_TO_FL,
                provenance=ds.Provenance.ORIGINAL,
                source_name=name,
                level=assignment.level_of.get(name),
                record_type="proof",
            )
            with open(proofs_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(ds.pair_to_dict(pair), ensure_ascii=False) + "\n")
            ledger.mark(proof_id)
            proofs_written += 1
    finally:
        gateway.close()

    counts = {
        "statements_written": statements_written,
        "proofs_written": proofs_written,
        "levels": len(assignment.levels),
        "dry_run": dry_run,
    }
    if not dry_run:
        write_manifest(out_dir, "informalize", config, counts)
    return counts


def load_statement_pairs(informalize_dir: Path) -> list[ds.NLFLPair]:
    pairs: list[ds.NLFLPair] = []
    for path in level_files(informalize_dir):
        pairs.extend(ds.read_pairs(path))
    proofs = Path(informalize_dir) / "proofs.jsonl"
    if proofs.exists():
        pairs.extend(ds.read_pairs(proofs))
    return pairs


# --- augment ------------------------------------------------------------------


def run_augment(
    index: CorpusIndex,
    config: PipelineConfig,
    out_dir: Path,
    *,
    tactic: bool = True,
    informal: bool = False,
    original_pairs: list[ds.NLFLPair] | None = None,
) -> dict[str, int]:
    out_dir.mkdir(parents=True, exist_ok=True)
    counts: dict[str, int] = {}
    gateway = config.gateway(cache_dir=out_dir / "cache")
    try:
        if tactic:
            backend = config.backend.build()
            synthesized = aug.synthesize_for_index(index)
            valid, rejected = aug.compile_filter(
                synthesized, backend, config.compile_timeout_ms
            )
            aug.write_rejected_report(rejected, out_dir / "rejected.jsonl")
            n_original = len(index.tactic_proof_names())
            sampled = aug.dedup_sample(valid, n_original, config.dedup_seed)

            with open(out_dir / "synthesized.jsonl", "w", encoding="utf-8") as fh:
                for stmt in valid:
                    fh.write(
                        json.dumps(
                            {
                                "name": stmt.name,
                                "formal_text": stmt.formal_text,
                                "origin": stmt.origin,
                                "origin_step": stmt.origin_step,
                                "goal_index": stmt.goal_index,
                                "context_preamble": stmt.context_preamble,
                            },
                            ensure_ascii=False,
                        )
                        + "\n"
                    )

            informalizer = config.role("informalizer")
            registry = _load_registry(config)
            pairs = []
            for stmt in sampled:
                # Synthesized statements re-enter the normal statement path:
                # scan the emitted text back into a record and prompt from it.
                [rec] = ingest.scan_declarations(stmt.formal_text).records
                ctx = prompts.StatementContext(subject=rec)
                prompt = prompts.assemble_statement_prompt(ctx, registry)
                informal_text = gateway.complete_role(informalizer, prompt.text)[0].text.strip()
                pairs.append(
                    ds.NLFLPair(
                        id=stmt.name,
                        formal_text=stmt.formal_text,
                        informal_text=informal_text,
                        direction=ds.Direction.NL_TO_FL,
                        provenance=ds.Provenance.TACTIC_AUG,
                        source_name=stmt.origin,
                    )
                )
            ds.write_pairs_atomic(pairs, out_dir / "tactic_aug.jsonl")
            counts.update(
                {
                    "synthesized": len(synthesized),
                    "compile_valid": len(valid),
                    "compile_rejected": len(rejected),
                    "tactic_aug_pairs": len(pairs),
                }
            )

        if informal:
            if original_pairs is None:
                raise InvalidInput("informal augmentation needs the original pairs")
            augmenter = config.role("augmenter")
            strategies = aug.all_strategies()
            variants: list[ds.NLFLPair] = []
            attempted = dropped = 0
            source_pairs = [
                p for p in original_pairs if p.record_type == "statement" and p.formal_text
            ]
            for pair in source_pairs:
                batch = aug.informal_variants(pair, strategies, gateway, augmenter)
                attempted += batch.attempted
                dropped += batch.dropped
                for i, variant in enumerate(batch.variants):
                    variants.append(
                        ds.NLFLPair(
                            id=f"{pair.id}__var{i}",
                            formal_text=pair.formal_text,
                            informal_text=variant.informal_text,
                            direction=ds.Direction.NL_TO_FL,
                            provenance=ds.Provenance.INFORMAL_AUG,
                            source_name=pair.source_name,
                            level=pair.level,
                        )
                    )
            sampled_variants = aug.dedup_sample(
                variants, len(source_pairs), config.dedup_seed
            )
            ds.write_pairs_atomic(sampled_variants, out_dir / "informal_aug.jsonl")
            counts.update(
                {
                    "variants_attempted": attempted,
                    "variants_dropped": dropped,
                    "informal_aug_pairs": len(sampled_variants),
                }
            )
    finally:
        gateway.close()

    write_manifest(out_dir, "augment", config, counts)
    return counts


# --- mix ------------------------------------------------------------------------


def load_general_pairs(path: Path) -> list[ds.NLFLPair]:
    """General-domain instruction data: JSONL rows {id, text}."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pairs.append(
                    ds.NLFLPair(
                        id=obj["id"],
                        formal_text="",
                        informal_text=obj["text"],
                        direction=None,
                        provenance=ds.Provenance.GENERAL,
                        record_type="instruction",
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise SchemaError(f"bad general record: {exc}", f"line {lineno}") from exc
    return pairs


def run_mix(
    original: list[ds.NLFLPair],
    tactic_aug: list[ds.NLFLPair],
    informal_aug: list[ds.NLFLPair],
    general: list[ds.NLFLPair],
    config: PipelineConfig,
    out_dir: Path,
    total: int,
) -> ds.MixManifest:
    out_dir.mkdir(parents=True, exist_ok=True)
    records, manifest = ds.mix(
        original,
        tactic_aug,
        informal_aug,
        general,
        total=total,
        ratios=config.ratio,
        dirmix=config.dirmix,
        seed=config.mix_seed,
    )
    ds.write_pairs_atomic(records, out_dir / "dataset.jsonl")
    (out_dir / "mix_manifest.json").write_text(manifest.to_json() + "\n", encoding="utf-8")
    write_manifest(out_dir, "mix", config, {"total": manifest.total})
    return manifest


# --- validate ---------------------------------------------------------------------


def load_benchmark(path: Path) -> list[dict]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                items.append(
                    {
                        "id": str(obj["id"]),
                        "informal_text": obj["informal_text"],
                        "header": obj.get("header"),
                    }
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise SchemaError(f"bad benchmark record: {exc}", f"line {lineno}") from exc
    return items


def run_validate(
    bench_path: Path,
    config: PipelineConfig,
    out_dir: Path,
    k: int | None = None,
    dataset_name: str | None = None,
) -> validate.BenchmarkSummary:
    out_dir.mkdir(parents=True, exist_ok=True)
    items = load_benchmark(bench_path)
    if not items:
        raise InvalidInput(f"benchmark {bench_path} is empty")
    k = k if k is not None else config.pass_k
    backend = config.backend.build()
    gateway = config.gateway(cache_dir=out_dir / "cache")
    roles = validate.Roles(
        translator=config.role("translator"),
        back_translator=config.role("back_translator"),
        nli_judge=config.role("nli_judge"),
    )
    reports = []
    try:
        for item in items:
            reports.append(
                validate.validate_item(
                    item["informal_text"],
                    k,
                    roles,
                    backend,
                    gateway,
                    item_id=item["id"],
                    header=item["header"] if item["header"] is not None else config.header_prelude,
                    timeout_ms=config.compile_timeout_ms,
                    short_circuit=config.short_circuit,
                    candidate_parallelism=config.candidate_parallelism,
                )
            )
    finally:
        gateway.close()
    validate.write_reports(reports, out_dir / "reports.jsonl")
    summary = validate.summarize(reports, dataset_name or Path(bench_path).stem)
    (out_dir / "summary.json").write_text(
        validate.summary_to_json(summary) + "\n", encoding="utf-8"
    )
    write_manifest(
        out_dir, "validate", config, {"k": k, "items": len(items), "succeeded": summary.succeeded}
    )
    return summary
