"""Parse corpus metadata exports and raw Lean source into normalized records.

Two entry points feed the pipeline:

* :func:`parse_jixia_export` consumes the versioned JSON export documented in
  the README (schema_version "1") and is the production path.
* :func:`scan_declarations` is a best-effort regex scanner over raw Lean 4
  source for fixture-scale use when no analyzer export exists.  It does not
  elaborate anything: dependencies are left empty and term-mode proof bodies
  are not parsed.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from io import IOBase
from typing import Any

from .errors import DuplicateDeclaration, InvalidInput, SchemaError, UnknownDeclaration
from .records import (
    PROVABLE_KINDS,
    CorpusIndex,
    DeclarationRecord,
    DeclKind,
    NeighborSet,
    ProofState,
    ProofStep,
)

SCHEMA_VERSION = "1"

_DECL_FIELDS = {
    "full_name",
    "kind",
    "signature",
    "docstring",
    "namespace_path",
    "file_path",
    "line_span",
    "dependencies",
    "is_tactic_proof",
}


def strip_docstring_markup(text: str) -> str:
    """Drop the ``/--`` ... ``-/`` delimiters; backtick spans stay verbatim."""
    body = text.strip()
    if body.startswith("/--"):
        body = body[3:]
    elif body.startswith("/-!"):
        body = body[3:]
    if body.endswith("-/"):
        body = body[:-2]
    return body.strip()


def _require(obj: dict, key: str, path: str) -> Any:
    if key not in obj:
        raise SchemaError(f"missing required field '{key}'", path)
    return obj[key]


def _expect(value: Any, kind: type, path: str) -> Any:
    if not isinstance(value, kind):
        raise SchemaError(f"expected {kind.__name__}, got {type(value).__name__}", path)
    return value


def _parse_state(obj: Any, path: str) -> ProofState:
    _expect(obj, dict, path)
    hyps_raw = _expect(_require(obj, "hypotheses", path), list, f"{path}.hypotheses")
    hyps = []
    for i, pair in enumerate(hyps_raw):
        _expect(pair, list, f"{path}.hypotheses[{i}]")
        if len(pair) != 2:
            raise SchemaError("hypothesis must be a [name, type] pair", f"{path}.hypotheses[{i}]")
        hyps.append((_expect(pair[0], str, f"{path}.hypotheses[{i}][0]"),
                     _expect(pair[1], str, f"{path}.hypotheses[{i}][1]")))
    goals_raw = _expect(_require(obj, "goals", path), list, f"{path}.goals")
    goals = tuple(_expect(g, str, f"{path}.goals[{i}]") for i, g in enumerate(goals_raw))
    try:
        return ProofState(hypotheses=tuple(hyps), goals=goals)
    except InvalidInput as exc:
        raise SchemaError(str(exc), path) from exc


def _parse_declaration(obj: Any, path: str) -> DeclarationRecord:
    _expect(obj, dict, path)
    unknown = set(obj) - _DECL_FIELDS
    if unknown:
        raise SchemaError(f"unknown field(s): {sorted(unknown)}", path)

    full_name = _expect(_require(obj, "full_name", path), str, f"{path}.full_name")
    kind_raw = _expect(_require(obj, "kind", path), str, f"{path}.kind")
    try:
        kind = DeclKind(kind_raw)
    except ValueError:
        raise SchemaError(f"unknown declaration kind '{kind_raw}'", f"{path}.kind") from None

    docstring = obj.get("docstring")
    if docstring is not None:
        docstring = strip_docstring_markup(_expect(docstring, str, f"{path}.docstring"))

    ns_raw = _expect(_require(obj, "namespace_path", path), list, f"{path}.namespace_path")
    namespace_path = tuple(
        _expect(p, str, f"{path}.namespace_path[{i}]") for i, p in enumerate(ns_raw)
    )

    span_raw = _expect(_require(obj, "line_span", path), list, f"{path}.line_span")
    if len(span_raw) != 2 or not all(isinstance(v, int) for v in span_raw):
        raise SchemaError("line_span must be a [start, end] pair of ints", f"{path}.line_span")

    deps_raw = _expect(_require(obj, "dependencies", path), list, f"{path}.dependencies")
    deps = frozenset(
        _expect(d, str, f"{path}.dependencies[{i}]") for i, d in enumerate(deps_raw)
    )

    try:
        return DeclarationRecord(
            full_name=full_name,
            kind=kind,
            signature=_expect(_require(obj, "signature", path), str, f"{path}.signature"),
            docstring=docstring,
            namespace_path=namespace_path,
            file_path=_expect(_require(obj, "file_path", path), str, f"{path}.file_path"),
            line_span=(span_raw[0], span_raw[1]),
            dependencies=deps,
            is_tactic_proof=_expect(
                _require(obj, "is_tactic_proof", path), bool, f"{path}.is_tactic_proof"
            ),
        )
    except InvalidInput as exc:
        raise SchemaError(str(exc), path) from exc


def parse_jixia_export(raw: bytes | str | IOBase) -> CorpusIndex:
    """Load a schema-version-1 corpus export into a :class:`CorpusIndex`.

    Dependencies pointing outside the export are kept on the record and
    reported in ``index.warnings`` rather than rejected: partial exports are
    the common case at fixture scale.
    """
    if isinstance(raw, IOBase):
        raw = raw.read()
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc

    _expect(doc, dict, "$")
    version = _require(doc, "schema_version", "$")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version!r}", "$.schema_version")

    decls_raw = _expect(_require(doc, "declarations", "$"), list, "$.declarations")
    declarations: dict[str, DeclarationRecord] = {}
    for i, obj in enumerate(decls_raw):
        rec = _parse_declaration(obj, f"$.declarations[{i}]")
        if rec.full_name in declarations:
            raise DuplicateDeclaration(rec.full_name)
        declarations[rec.full_name] = rec

    proofs_raw = _expect(doc.get("proofs", {}), dict, "$.proofs")
    proofs: dict[str, tuple[ProofStep, ...]] = {}
    for name, steps_raw in proofs_raw.items():
        path = f"$.proofs[{name!r}]"
        if name not in declarations:
            raise SchemaError("proof for undeclared name", path)
        if declarations[name].kind not in PROVABLE_KINDS:
            raise SchemaError(
                f"proof attached to kind '{declarations[name].kind.value}'", path
            )
        _expect(steps_raw, list, path)
        steps = []
        for j, step_obj in enumerate(steps_raw):
            spath = f"{path}[{j}]"
            _expect(step_obj, dict, spath)
            try:
                step = ProofStep(
                    tactic_text=_expect(
                        _require(step_obj, "tactic_text", spath), str, f"{spath}.tactic_text"
                    ),
                    state_before=_parse_state(
                        _require(step_obj, "state_before", spath), f"{spath}.state_before"
                    ),
                    state_after=_parse_state(
                        _require(step_obj, "state_after", spath), f"{spath}.state_after"
                    ),
                    step_index=j,
                )
            except InvalidInput as exc:
                raise SchemaError(str(exc), spath) from exc
            steps.append(step)
        proofs[name] = tuple(steps)

    heads_raw = _expect(doc.get("head_statements", {}), dict, "$.head_statements")
    head_statements = {
        _expect(k, str, "$.head_statements"): _expect(v, str, f"$.head_statements[{k!r}]")
        for k, v in heads_raw.items()
    }

    warnings = []
    for name in sorted(declarations):
        for dep in sorted(declarations[name].dependencies):
            if dep not in declarations:
                warnings.append(f"unresolved dependency '{dep}' of '{name}'")

    return CorpusIndex(
        declarations=declarations,
        proofs=proofs,
        head_statements=head_statements,
        warnings=tuple(warnings),
    )


def serialize_index(index: CorpusIndex) -> str:
    """Render an index back to the export format with canonical ordering.

    ``parse_jixia_export(serialize_index(x))`` reproduces an equal index.
    """
    decls = []
    for name in sorted(index.declarations):
        rec = index.declarations[name]
        decls.append(
            {
                "full_name": rec.full_name,
                "kind": rec.kind.value,
                "signature": rec.signature,
                "docstring": rec.docstring,
                "namespace_path": list(rec.namespace_path),
                "file_path": rec.file_path,
                "line_span": list(rec.line_span),
                "dependencies": sorted(rec.dependencies),
                "is_tactic_proof": rec.is_tactic_proof,
            }
        )
    proofs = {}
    for name in sorted(index.proofs):
        proofs[name] = [
            {
                "tactic_text": step.tactic_text,
                "state_before": {
                    "hypotheses": [list(h) for h in step.state_before.hypotheses],
                    "goals": list(step.state_before.goals),
                },
                "state_after": {
                    "hypotheses": [list(h) for h in step.state_after.hypotheses],
                    "goals": list(step.state_after.goals),
                },
            }
            for step in index.proofs[name]
        ]
    doc = {
        "schema_version": SCHEMA_VERSION,
        "declarations": decls,
        "proofs": proofs,
        "head_statements": {k: index.head_statements[k] for k in sorted(index.head_statements)},
    }
    return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"


# --- raw-source scanner -------------------------------------------------

_HEADER_RE = re.compile(
    r"^(?:@\[[^\]]*\]\s*)?"
    r"(?:(?:private|protected|noncomputable|partial|unsafe|scoped|local)\s+)*"
    r"(theorem|lemma|def|abbrev|instance|class\s+inductive|class|structure|inductive|opaque)"
    r"(?:\s+([^\s(){\[:⦃⟨]+))?"
)

_KIND_FOR_KEYWORD = {
    "theorem": DeclKind.THEOREM,
    "lemma": DeclKind.THEOREM,
    "def": DeclKind.DEFINITION,
    "abbrev": DeclKind.DEFINITION,
    "instance": DeclKind.INSTANCE,
    "structure": DeclKind.STRUCTURE,
    "class": DeclKind.CLASS,
    "class inductive": DeclKind.CLASS_INDUCTIVE,
    "inductive": DeclKind.INDUCTIVE,
    "opaque": DeclKind.OPAQUE,
}

_OPEN_BRACKETS = "([{⟨⦃"
_CLOSE_BRACKETS = ")]}⟩⦄"


@dataclass
class ScanResult:
    """Records found by the scanner plus notes on regions it had to skip."""

    records: list[DeclarationRecord] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    head_statement: str = ""


def _signature_end(text: str) -> tuple[int, bool]:
    """Offset where the signature stops (at ``:=`` or tactic ``by``).

    Returns ``(offset, tactic)``; offset -1 when no terminator exists.
    Bracket-nested occurrences (e.g. default arguments) are ignored.
    """
    depth = 0
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in _OPEN_BRACKETS:
            depth += 1
        elif ch in _CLOSE_BRACKETS:
            depth = max(0, depth - 1)
        elif depth == 0:
            if text.startswith(":=", i):
                rest = text[i + 2 :].lstrip()
                return i, rest.startswith("by") and (len(rest) == 2 or not rest[2].isidentifier())
            if (
                text.startswith("by", i)
                and (i == 0 or text[i - 1].isspace())
                and (i + 2 == n or text[i + 2].isspace())
            ):
                return i, True
            if text.startswith("where", i) and (i == 0 or text[i - 1].isspace()):
                return i, False
        i += 1
    return -1, False


def scan_declarations(lean_source: str, file_path: str = "<source>") -> ScanResult:
    """Best-effort scan of Lean 4 source for top-level declaration headers.

    Captures the signature up to ``:=``/``by``, the immediately preceding
    ``/-- ... -/`` docstring, and the enclosing namespace path.  Dependencies
    are always empty: the scanner does not elaborate.  Unparseable regions
    are skipped and noted in the diagnostics list.
    """
    lines = lean_source.splitlines()
    result = ScanResult()
    namespace_stack: list[tuple[str, str | None]] = []  # ("namespace"|"section", name)
    pending_docstring: str | None = None
    head_parts: list[str] = []
    seen: dict[str, int] = {}

    i = 0
    while i < len(lines):
        stripped = lines[i].strip()

        if stripped.startswith("/-!") or stripped.startswith("/--"):
            is_module_doc = stripped.startswith("/-!")
            opener = "/-!" if is_module_doc else "/--"
            search_from = lines[i].find(opener) + len(opener)
            block_lines = [lines[i]]
            while "-/" not in (
                block_lines[-1][search_from:] if len(block_lines) == 1 else block_lines[-1]
            ):
                i += 1
                if i >= len(lines):
                    result.diagnostics.append(f"line {len(lines)}: unterminated doc comment")
                    break
                block_lines.append(lines[i])
            text = strip_docstring_markup("\n".join(block_lines))
            if is_module_doc:
                head_parts.append(text)
            else:
                pending_docstring = text
            i += 1
            continue

        if stripped.startswith("namespace "):
            namespace_stack.append(("namespace", stripped.split(None, 1)[1].strip()))
            i += 1
            continue
        if stripped.startswith("section"):
            parts = stripped.split(None, 1)
            namespace_stack.append(("section", parts[1].strip() if len(parts) > 1 else None))
            i += 1
            continue
        if stripped == "end" or stripped.startswith("end "):
            if namespace_stack:
                namespace_stack.pop()
            i += 1
            continue
        if stripped.startswith("@[") and not _HEADER_RE.match(lines[i]):
            # Attribute on its own line; keep any pending docstring alive.
            i += 1
            continue

        m = _HEADER_RE.match(lines[i])
        if m and not lines[i][:1].isspace():
            keyword, name = m.group(1), m.group(2)
            keyword = " ".join(keyword.split())
            start_line = i + 1
            if name is None or name in {":", ":="} or keyword == "instance" and name == ":":
                name = None
            if name is None and keyword != "instance":
                result.diagnostics.append(f"line {start_line}: {keyword} without a name, skipped")
                pending_docstring = None
                i += 1
                continue

            # Accumulate the declaration block up to the next top-level construct.
            block = [lines[i]]
            j = i + 1
            while j < len(lines):
                nxt = lines[j]
                if nxt and not nxt[:1].isspace():
                    s = nxt.strip()
                    first = s.split(None, 1)[0] if s.split() else ""
                    if (
                        _HEADER_RE.match(nxt)
                        or s.startswith(("/--", "/-!", "@[", "#"))
                        or first in (
                            "namespace", "section", "end", "import", "open",
                            "example", "variable", "variables", "universe",
                            "set_option", "attribute", "export", "deriving",
                        )
                    ):
                        break
                block.append(nxt)
                j += 1
            while block and not block[-1].strip():
                block.pop()
            end_line = i + len(block)

            block_text = "\n".join(block)
            header_offset = m.start(1)
            sig_end, tactic = _signature_end(block_text[header_offset:])
            if sig_end == -1:
                signature = block_text[header_offset:].strip()
                tactic = False
            else:
                signature = block_text[header_offset : header_offset + sig_end].strip()

            if name is None:
                name = f"instance_l{start_line}"
            ns = tuple(n for k, n in namespace_stack if k == "namespace" and n)
            full_name = ".".join(ns + (name,))
            if full_name in seen:
                result.diagnostics.append(
                    f"line {start_line}: duplicate name {full_name}, skipped"
                )
            else:
                seen[full_name] = start_line
                result.records.append(
                    DeclarationRecord(
                        full_name=full_name,
                        kind=_KIND_FOR_KEYWORD[keyword],
                        signature=signature,
                        docstring=pending_docstring,
                        namespace_path=ns,
                        file_path=file_path,
                        line_span=(start_line, max(start_line, end_line)),
                        dependencies=frozenset(),
                        is_tactic_proof=tactic,
                    )
                )
            pending_docstring = None
            i = j
            continue

        if stripped and pending_docstring is not None and not stripped.startswith("--"):
            # A docstring attaches only to the header immediately after it.
            pending_docstring = None
        i += 1

    result.head_statement = "\n\n".join(head_parts)
    return result


def resolve_neighbors(subject: str, index: CorpusIndex, limit: int) -> NeighborSet:
    """Find declarations related to ``subject`` by namespace, file, and name.

    Each list is truncated to ``limit`` entries; entries in the subject's
    file sort by line distance first, everything ties broken by name.
    """
    if limit < 1:
        raise InvalidInput(f"limit must be >= 1, got {limit}")
    rec = index.declarations.get(subject)
    if rec is None:
        raise UnknownDeclaration(subject)

    def order_key(name: str):
        other = index.declarations[name]
        if other.file_path == rec.file_path:
            return (0, abs(other.line_span[0] - rec.line_span[0]), name)
        return (1, 0, name)

    same_namespace = []
    same_file = []
    prefix_len: dict[str, int] = {}
    subject_parts = subject.split(".")
    for name, other in index.declarations.items():
        if name == subject:
            continue
        if other.namespace_path == rec.namespace_path:
            same_namespace.append(name)
        if other.file_path == rec.file_path:
            same_file.append(name)
        shared = 0
        for a, b in zip(subject_parts, name.split(".")):
            if a != b:
                break
            shared += 1
        if shared >= 1:
            prefix_len[name] = shared

    longest = max(prefix_len.values(), default=0)
    prefix_shared = [n for n, length in prefix_len.items() if length == longest] if longest else []

    return NeighborSet(
        same_namespace=tuple(sorted(same_namespace, key=order_key)[:limit]),
        same_file=tuple(sorted(same_file, key=order_key)[:limit]),
        name_prefix_shared=tuple(sorted(prefix_shared, key=order_key)[:limit]),
    )
