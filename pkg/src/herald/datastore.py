"""NL-FL pair persistence and training-mixture assembly.

The on-disk format is JSONL, one pair per line, fields in fixed order.
Mixtures realize the configured provenance ratio (default 1:2:1 over
original, tactic-augmented, informal-augmented pairs) and direction ratio
(default 2:2:1 over NL->FL, FL->NL, general instruction data) with
largest-remainder rounding; a manifest with the realized counts accompanies
every mixture.  The provenance ratio applies before direction mirroring.
"""

from __future__ import annotations

import json
import logging
import os
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .errors import EmptyPool, InvalidInput, SchemaError

logger = logging.getLogger(__name__)

DATASET_SCHEMA_VERSION = "1"


class Direction(str, Enum):
    NL_TO_FL = "nl_to_fl"
    FL_TO_NL = "fl_to_nl"


class Provenance(str, Enum):
    ORIGINAL = "original"
    TACTIC_AUG = "tactic_aug"
    INFORMAL_AUG = "informal_aug"
    GENERAL = "general"


@dataclass(frozen=True)
class NLFLPair:
    """One aligned record; ``direction`` is None only for general
    instruction data, which has no formal side."""

    id: str
    formal_text: str
    informal_text: str
    direction: Direction | None
    provenance: Provenance
    source_name: str | None = None
    level: int | None = None
    record_type: str = "statement"

    def __post_init__(self):
        if not self.id:
            raise InvalidInput("empty pair id")
        if not self.informal_text:
            raise InvalidInput(f"pair {self.id}: informal_text must be non-empty")
        if self.direction is None:
            if self.provenance != Provenance.GENERAL:
                raise InvalidInput(f"pair {self.id}: only general pairs may omit direction")
        elif not self.formal_text:
            raise InvalidInput(f"pair {self.id}: formal_text must be non-empty")
        if self.record_type not in ("statement", "proof", "instruction"):
            raise InvalidInput(f"pair {self.id}: unknown record_type {self.record_type!r}")


def pair_to_dict(pair: NLFLPair) -> dict:
    return {
        "id": pair.id,
        "formal_text": pair.formal_text,
        "informal_text": pair.informal_text,
        "direction": pair.direction.value if pair.direction else None,
        "provenance": pair.provenance.value,
        "source_name": pair.source_name,
        "level": pair.level,
        "record_type": pair.record_type,
    }


def pair_from_dict(obj: dict) -> NLFLPair:
    return NLFLPair(
        id=obj["id"],
        formal_text=obj.get("formal_text", ""),
        informal_text=obj["informal_text"],
        direction=Direction(obj["direction"]) if obj.get("direction") else None,
        provenance=Provenance(obj["provenance"]),
        source_name=obj.get("source_name"),
        level=obj.get("level"),
        record_type=obj.get("record_type", "statement"),
    )


def write_pairs(pairs: list[NLFLPair], path: str | Path) -> int:
    """One JSON object per line, UTF-8, fields in fixed order; fsynced."""
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair_to_dict(pair), ensure_ascii=False) + "\n")
        fh.flush()
        os.fsync(fh.fileno())
    return len(pairs)


def write_pairs_atomic(pairs: list[NLFLPair], path: str | Path) -> int:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    count = write_pairs(pairs, tmp)
    os.replace(tmp, path)
    return count


def read_pairs(path: str | Path) -> list[NLFLPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                pairs.append(pair_from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError, InvalidInput) as exc:
                raise SchemaError(f"bad pair record: {exc}", f"line {lineno}") from exc
    return pairs


def mirror_directions(pairs: list[NLFLPair]) -> list[NLFLPair]:
    """Duplicate every NL->FL pair with the direction flipped (id + '_rev').

    Rejects input that is not purely NL->FL, which also prevents mirroring
    twice.
    """
    for pair in pairs:
        if pair.direction != Direction.NL_TO_FL:
            raise InvalidInput(
                f"mirror_directions expects nl_to_fl input, pair {pair.id} "
                f"has direction {pair.direction}"
            )
    out = []
    for pair in pairs:
        out.append(pair)
        out.append(replace(pair, id=pair.id + "_rev", direction=Direction.FL_TO_NL))
    return out


def split_by_ratio(total: int, ratio: tuple[int, ...]) -> list[int]:
    """Largest-remainder split of ``total`` into parts proportional to ratio.

    Each realized count differs from the ideal share by at most 1.
    """
    if total < 0:
        raise InvalidInput(f"total must be >= 0, got {total}")
    if not ratio or any(r <= 0 or not isinstance(r, int) for r in ratio):
        raise InvalidInput(f"ratio components must be positive integers, got {ratio}")
    denom = sum(ratio)
    shares = [total * r / denom for r in ratio]
    counts = [int(s) for s in shares]
    remainder = total - sum(counts)
    by_frac = sorted(range(len(ratio)), key=lambda i: (-(shares[i] - counts[i]), i))
    for i in by_frac[:remainder]:
        counts[i] += 1
    return counts


@dataclass(frozen=True)
class MixManifest:
    counts: dict[str, int]
    direction_counts: dict[str, int]
    seed: int
    ratio_spec: str
    total: int
    scaled_down: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "counts": self.counts,
                "direction_counts": self.direction_counts,
                "seed": self.seed,
                "ratio_spec": self.ratio_spec,
                "total": self.total,
                "scaled_down": self.scaled_down,
            },
            sort_keys=True,
        )


def _sample_ordered(pool: list[NLFLPair], count: int, rng: random.Random) -> list[NLFLPair]:
    if count == len(pool):
        return list(pool)
    chosen = sorted(rng.sample(range(len(pool)), count))
    return [pool[i] for i in chosen]


def mix(
    original: list[NLFLPair],
    tactic_aug: list[NLFLPair],
    informal_aug: list[NLFLPair],
    general: list[NLFLPair],
    *,
    total: int,
    ratios: tuple[int, int, int] = (1, 2, 1),
    dirmix: tuple[int, int, int] = (2, 2, 1),
    seed: int = 0,
) -> tuple[list[NLFLPair], MixManifest]:
    """Assemble ``total`` records honoring both ratios, shuffled by seed.

    ``dirmix`` splits the total between NL->FL, FL->NL, and general records;
    ``ratios`` splits the combined pair portion by provenance.  Pools too
    small for their requested counts scale the whole request down
    proportionally (with a warning); an empty-but-required pool is an error.
    """
    rng = random.Random(seed)
    pools = {
        Provenance.ORIGINAL: original,
        Provenance.TACTIC_AUG: tactic_aug,
        Provenance.INFORMAL_AUG: informal_aug,
    }

    def plan(requested_total: int):
        n_nl, n_fl, n_gen = split_by_ratio(requested_total, dirmix)
        prov_counts = split_by_ratio(n_nl + n_fl, ratios)
        return (n_nl, n_fl, n_gen), dict(zip(pools, prov_counts))

    (n_nl, n_fl, n_gen), prov_counts = plan(total)
    scaled = False
    realized_total = total
    for _ in range(64):
        shortfall = [
            (len(pools[p]), c) for p, c in prov_counts.items() if c > len(pools[p])
        ] + ([(len(general), n_gen)] if n_gen > len(general) else [])
        if not shortfall:
            break
        for p, c in prov_counts.items():
            if c > 0 and not pools[p]:
                raise EmptyPool(f"provenance pool '{p.value}' is empty")
        if n_gen > 0 and not general:
            raise EmptyPool("general pool is empty")
        factor = min(have / want for have, want in shortfall)
        realized_total = min(realized_total - 1, int(realized_total * factor))
        scaled = True
        if realized_total <= 0:
            raise EmptyPool("pools cannot satisfy any mixture")
        (n_nl, n_fl, n_gen), prov_counts = plan(realized_total)
    else:
        raise InvalidInput("could not scale mixture to the available pools")
    if scaled:
        logger.warning(
            "pools too small for total=%d; scaled down to %d", total, realized_total
        )

    selected: list[NLFLPair] = []
    for prov, pool in pools.items():
        selected.extend(_sample_ordered(pool, prov_counts[prov], rng))

    rng.shuffle(selected)
    records: list[NLFLPair] = []
    for i, pair in enumerate(selected):
        if i < n_nl:
            records.append(replace(pair, direction=Direction.NL_TO_FL))
        else:
            records.append(
                replace(pair, id=pair.id + "_rev", direction=Direction.FL_TO_NL)
            )
    records.extend(_sample_ordered(general, n_gen, rng))
    rng.shuffle(records)

    counts: dict[str, int] = {p.value: 0 for p in Provenance}
    direction_counts = {d.value: 0 for d in Direction}
    direction_counts["general"] = 0
    for rec in records:
        counts[rec.provenance.value] += 1
        if rec.direction is None:
            direction_counts["general"] += 1
        else:
            direction_counts[rec.direction.value] += 1

    manifest = MixManifest(
        counts=counts,
        direction_counts=direction_counts,
        seed=seed,
        ratio_spec=f"{ratios[0]}:{ratios[1]}:{ratios[2]}|{dirmix[0]}:{dirmix[1]}:{dirmix[2]}",
        total=len(records),
        scaled_down=scaled,
    )
    return records, manifest


@dataclass(frozen=True)
class DatasetStats:
    total: int
    by_provenance: dict[str, int]
    by_direction: dict[str, int]
    by_record_type: dict[str, int]
    level_histogram: dict[int, int] = field(default_factory=dict)


def stats(dataset_path: str | Path) -> DatasetStats:
    """Counts by provenance, direction, record type, and a level histogram."""
    by_provenance: dict[str, int] = {}
    by_direction: dict[str, int] = {}
    by_record_type: dict[str, int] = {}
    level_histogram: dict[int, int] = {}
    total = 0
    for pair in read_pairs(dataset_path):
        total += 1
        by_provenance[pair.provenance.value] = by_provenance.get(pair.provenance.value, 0) + 1
        dkey = pair.direction.value if pair.direction else "general"
        by_direction[dkey] = by_direction.get(dkey, 0) + 1
        by_record_type[pair.record_type] = by_record_type.get(pair.record_type, 0) + 1
        if pair.level is not None:
            level_histogram[pair.level] = level_histogram.get(pair.level, 0) + 1
    return DatasetStats(
        total=total,
        by_provenance=by_provenance,
        by_direction=by_direction,
        by_record_type=by_record_type,
        level_histogram=level_histogram,
    )


def stats_to_json(s: DatasetStats) -> str:
    return json.dumps(
        {
            "total": s.total,
            "by_provenance": s.by_provenance,
            "by_direction": s.by_direction,
            "by_record_type": s.by_record_type,
            "level_histogram": {str(k): v for k, v in sorted(s.level_histogram.items())},
        },
        sort_keys=True,
    )


def stats_table(s: DatasetStats) -> str:
    lines = [f"{'total records':<24} {s.total:>8}", ""]
    for title, table in (
        ("by provenance", s.by_provenance),
        ("by direction", s.by_direction),
        ("by record type", s.by_record_type),
    ):
        lines.append(title)
        for key in sorted(table):
            lines.append(f"  {key:<22} {table[key]:>8}")
        lines.append("")
    if s.level_histogram:
        lines.append("by level")
        for level in sorted(s.level_histogram):
            lines.append(f"  {level:<22} {s.level_histogram[level]:>8}")
    return "\n".join(lines).rstrip() + "\n"
