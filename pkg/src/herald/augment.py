"""Dataset augmentation: statements from proof states and informal variants.

Every intermediate proof state captures a localized, provable claim: its
hypotheses become binders and its goal becomes the conclusion of a fresh
standalone statement with a ``sorry`` body.  Whether the emitted statement
actually elaborates is left to compile filtering; nothing is inferred here.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from .errors import InvalidInput
from .gateway import (
    STRATEGY_MARKER,
    STRATEGY_TEXT_MARKER,
    Gateway,
    Role,
    normalize_text,
)
from .records import CorpusIndex, ProofState

_ANON_MARKER = "✝"
_INSTANCE_NAME_RE = re.compile(r"inst(✝.*|\d*)$")


@dataclass(frozen=True)
class SynthesizedStatement:
    """A standalone statement built from one goal of one proof state."""

    name: str
    formal_text: str
    origin: str
    origin_step: int
    goal_index: int
    context_preamble: str = ""

    def __post_init__(self):
        if not self.formal_text.endswith("by sorry"):
            raise InvalidInput("synthesized statements must end with 'by sorry'")


@dataclass(frozen=True)
class RejectedStatement:
    statement: SynthesizedStatement
    diagnostic: str


def _render_binders(hypotheses: Sequence[tuple[str, str]]) -> list[str]:
    """Binders in hypothesis order; instance-like hypotheses become [T],
    anonymous names are regenerated as h1, h2, ..."""
    used = {name for name, _ in hypotheses}
    binders = []
    counter = 0
    for name, type_expr in hypotheses:
        if _INSTANCE_NAME_RE.fullmatch(name):
            binders.append(f"[{type_expr}]")
            continue
        if not name or name == "_" or _ANON_MARKER in name:
            counter += 1
            fresh = f"h{counter}"
            while fresh in used:
                counter += 1
                fresh = f"h{counter}"
            used.add(fresh)
            name = fresh
        binders.append(f"({name} : {type_expr})")
    return binders


def synthesize_from_state(
    state: ProofState, origin: str, step: int, context_preamble: str = ""
) -> list[SynthesizedStatement]:
    """One statement per goal of ``state``; a closed state yields nothing."""
    if step < 0:
        raise InvalidInput(f"negative step index {step}")
    statements = []
    binders = _render_binders(state.hypotheses)
    binder_text = " ".join(binders)
    for goal_index, goal in enumerate(state.goals):
        name = f"{origin}_tac_{step}"
        if goal_index > 0:
            name += f"_g{goal_index}"
        if binder_text:
            formal = f"theorem {name} {binder_text} : {goal} := by sorry"
        else:
            formal = f"theorem {name} : {goal} := by sorry"
        statements.append(
            SynthesizedStatement(
                name=name,
                formal_text=formal,
                origin=origin,
                origin_step=step,
                goal_index=goal_index,
                context_preamble=context_preamble,
            )
        )
    return statements


_PREAMBLE_LINE_RE = re.compile(r"^(import|open)\s+\S")


def extract_preamble(head_statement: str) -> str:
    """Import/open lines from a file preamble, for replay before compiling."""
    lines = [ln for ln in head_statement.splitlines() if _PREAMBLE_LINE_RE.match(ln.strip())]
    return "\n".join(ln.strip() for ln in lines)


def synthesize_for_index(index: CorpusIndex) -> list[SynthesizedStatement]:
    """Statements from the pre-step state of every tactic-proof step.

    The origin file's import/open lines (as found in its head statement)
    are attached as ``context_preamble`` so compile filtering can replay
    the environment the state was extracted from.
    """
    out = []
    for name in index.tactic_proof_names():
        decl = index.declarations[name]
        preamble = extract_preamble(index.head_statements.get(decl.file_path, ""))
        for step in index.proofs[name]:
            out.extend(
                synthesize_from_state(
                    step.state_before, name, step.step_index, context_preamble=preamble
                )
            )
    return out


def compile_filter(
    candidates: list[SynthesizedStatement], backend, timeout_ms: int = 60000
) -> tuple[list[SynthesizedStatement], list[RejectedStatement]]:
    """Partition candidates by whether they elaborate (with the sorry body)."""
    valid: list[SynthesizedStatement] = []
    rejected: list[RejectedStatement] = []
    for cand in candidates:
        source = cand.formal_text
        if cand.context_preamble:
            source = cand.context_preamble + "\n\n" + source
        outcome = backend.check(source, timeout_ms)
        if outcome.ok:
            valid.append(cand)
        else:
            rejected.append(
                RejectedStatement(cand, "; ".join(outcome.diagnostics) or "rejected")
            )
    return valid, rejected


def write_rejected_report(rejected: list[RejectedStatement], path: str | Path) -> int:
    with open(path, "w", encoding="utf-8") as fh:
        for item in rejected:
            fh.write(
                json.dumps(
                    {
                        "name": item.statement.name,
                        "formal_text": item.statement.formal_text,
                        "origin": item.statement.origin,
                        "diagnostic": item.diagnostic,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    return len(rejected)


def dedup_sample(augmented: list, n_original: int, seed: int) -> list:
    """Uniform sample without replacement of size min(n_original, len).

    Deterministic for a given seed; input order is preserved among the
    selected items.  Consecutive proof states produce near-duplicate
    statements, so training pools keep only as many augmented statements
    as there were original theorems.

    Sampling is block-rotated: a shared shuffle is derived from
    ``seed // blocks`` and the draw takes block ``seed % blocks`` of it.
    Any single draw is a uniformly distributed subset, while a contiguous
    seed range covers the pool evenly (replicated runs with nearby seeds
    do not pile onto the same items).
    """
    if n_original < 0:
        raise InvalidInput(f"n_original must be >= 0, got {n_original}")
    size = min(n_original, len(augmented))
    if size == len(augmented):
        return list(augmented)
    if size == 0:
        return []
    blocks = len(augmented) // size
    rng = random.Random(seed // blocks)
    perm = list(range(len(augmented)))
    rng.shuffle(perm)
    rotation = seed % blocks
    chosen = sorted(perm[rotation * size : (rotation + 1) * size])
    return [augmented[i] for i in chosen]


# --- informal variants ----------------------------------------------------


class StrategyKind(str, Enum):
    LOGICAL_EQUIVALENCE_REWRITING = "logical_equivalence_rewriting"
    ABSTRACT_CONCEPT_SUBSTITUTION = "abstract_concept_substitution"
    OMISSION_OF_IMPLICIT_CONDITION = "omission_of_implicit_condition"
    MULTI_LINGUISTIC_TRANSLATION = "multi_linguistic_translation"


VARIANT_LANGUAGES = ("zh", "fr", "ru")

_STRATEGY_INSTRUCTIONS = {
    StrategyKind.LOGICAL_EQUIVALENCE_REWRITING: (
        "Rewrite the statement as a logically equivalent natural-language statement "
        "with a different sentence structure. For example, 'If A, then B' may become "
        "'B holds given A'. Do not change the mathematical content."
    ),
    StrategyKind.ABSTRACT_CONCEPT_SUBSTITUTION: (
        "Restate the statement using a more abstract or higher-level mathematical "
        "concept when one captures it exactly. For example, the existence of a "
        "two-sided inverse matrix may be stated as the matrix being non-degenerate."
    ),
    StrategyKind.OMISSION_OF_IMPLICIT_CONDITION: (
        "Restate the statement the way a textbook would, omitting conditions a "
        "reader infers from context or convention. Keep the core claim intact."
    ),
    StrategyKind.MULTI_LINGUISTIC_TRANSLATION: (
        "Translate the statement into the requested language, keeping formulas in LaTeX."
    ),
}


@dataclass(frozen=True)
class AugmentationStrategy:
    kind: StrategyKind
    lang: str | None = None

    def __post_init__(self):
        if self.kind == StrategyKind.MULTI_LINGUISTIC_TRANSLATION:
            if self.lang not in VARIANT_LANGUAGES:
                raise InvalidInput(
                    f"translation strategy requires lang in {VARIANT_LANGUAGES}, got {self.lang!r}"
                )
        elif self.lang is not None:
            raise InvalidInput(f"strategy {self.kind.value} takes no language")

    def tag(self) -> str:
        return self.kind.value if self.lang is None else f"{self.kind.value} {self.lang}"


def all_strategies() -> list[AugmentationStrategy]:
    """The four families, with one variant per supported language."""
    out = [
        AugmentationStrategy(StrategyKind.LOGICAL_EQUIVALENCE_REWRITING),
        AugmentationStrategy(StrategyKind.ABSTRACT_CONCEPT_SUBSTITUTION),
        AugmentationStrategy(StrategyKind.OMISSION_OF_IMPLICIT_CONDITION),
    ]
    out.extend(
        AugmentationStrategy(StrategyKind.MULTI_LINGUISTIC_TRANSLATION, lang)
        for lang in VARIANT_LANGUAGES
    )
    return out


@dataclass(frozen=True)
class NLVariant:
    origin_pair_id: str
    strategy: AugmentationStrategy
    informal_text: str

    def __post_init__(self):
        if not self.informal_text:
            raise InvalidInput("variant text must be non-empty")


@dataclass(frozen=True)
class VariantBatch:
    """Variants kept plus bookkeeping: attempted == kept + dropped."""

    variants: tuple[NLVariant, ...]
    attempted: int
    dropped: int


def strategy_prompt(strategy: AugmentationStrategy, informal_text: str) -> str:
    return (
        "You rephrase natural-language mathematical statements.\n\n"
        f"{_STRATEGY_INSTRUCTIONS[strategy.kind]}\n\n"
        f"{STRATEGY_MARKER} {strategy.tag()}\n"
        f"{STRATEGY_TEXT_MARKER}\n{informal_text}\n"
    )


def informal_variants(
    pair, strategies: list[AugmentationStrategy], gateway: Gateway, role: Role
) -> VariantBatch:
    """One gateway call per strategy; outputs identical to the original
    (after whitespace/case normalization) are dropped and counted."""
    if not pair.informal_text or not pair.formal_text:
        raise InvalidInput(f"pair {pair.id} must carry both texts")
    variants = []
    dropped = 0
    origin_norm = normalize_text(pair.informal_text)
    for strategy in strategies:
        completion = gateway.complete_role(role, strategy_prompt(strategy, pair.informal_text))[0]
        text = completion.text.strip()
        if not text or normalize_text(text) == origin_norm:
            dropped += 1
            continue
        variants.append(
            NLVariant(origin_pair_id=pair.id, strategy=strategy, informal_text=text)
        )
    return VariantBatch(
        variants=tuple(variants), attempted=len(strategies), dropped=dropped
    )
