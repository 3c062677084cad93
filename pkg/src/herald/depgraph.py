"""Dependency DAG construction, stratification, and batch scheduling.

Levels follow the longest prerequisite chain: a declaration sits one level
above the highest of its prerequisites, so every level depends only on
strictly lower levels.  Translation consumes levels in order; batches within
one level are independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import CycleError, CyclicInput, InvalidInput
from .records import CorpusIndex


@dataclass(frozen=True)
class DepGraph:
    """Directed graph with edges (prerequisite, dependent)."""

    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]
    unresolved_count: int = 0

    def __post_init__(self):
        for u, v in self.edges:
            if u == v:
                raise InvalidInput(f"self-edge on {u}")
            if u not in self.nodes or v not in self.nodes:
                raise InvalidInput(f"edge ({u}, {v}) has endpoint outside nodes")

    def prerequisites(self) -> dict[str, list[str]]:
        preds: dict[str, list[str]] = {n: [] for n in self.nodes}
        for u, v in self.edges:
            preds[v].append(u)
        return preds

    def dependents(self) -> dict[str, list[str]]:
        succs: dict[str, list[str]] = {n: [] for n in self.nodes}
        for u, v in self.edges:
            succs[u].append(v)
        return succs


@dataclass(frozen=True)
class LevelAssignment:
    """Stratification of a DAG: ``levels[i]`` holds exactly the names at level i."""

    level_of: dict[str, int]
    levels: tuple[tuple[str, ...], ...] = field(default=())

    def __post_init__(self):
        for i, names in enumerate(self.levels):
            for n in names:
                if self.level_of.get(n) != i:
                    raise InvalidInput(f"{n} listed at level {i} but level_of says {self.level_of.get(n)}")
        if sum(len(names) for names in self.levels) != len(self.level_of):
            raise InvalidInput("levels do not partition the node set")


def build_graph(index: CorpusIndex) -> DepGraph:
    """One edge per dependency that resolves inside the index.

    Dependencies on names outside the index are dropped from the graph (they
    were already flagged at parse time) and counted in ``unresolved_count``;
    such nodes act as roots for leveling.
    """
    nodes = frozenset(index.declarations)
    edges = set()
    unresolved = 0
    for name, rec in index.declarations.items():
        for dep in rec.dependencies:
            if dep in nodes:
                edges.add((dep, name))
            else:
                unresolved += 1
    return DepGraph(nodes=nodes, edges=frozenset(edges), unresolved_count=unresolved)


def check_acyclic(graph: DepGraph) -> None:
    """Raise :class:`CycleError` with a witness cycle if the graph has one.

    The witness lists nodes in edge order with the first node repeated last.
    """
    succs = {n: sorted(vs) for n, vs in graph.dependents().items()}
    WHITE, GREY, BLACK = 0, 1, 2
    color = {n: WHITE for n in graph.nodes}

    for start in sorted(graph.nodes):
        if color[start] != WHITE:
            continue
        stack: list[tuple[str, int]] = [(start, 0)]
        path = [start]
        color[start] = GREY
        while stack:
            node, child_i = stack[-1]
            if child_i < len(succs[node]):
                stack[-1] = (node, child_i + 1)
                child = succs[node][child_i]
                if color[child] == GREY:
                    cycle = path[path.index(child) :] + [child]
                    raise CycleError(cycle)
                if color[child] == WHITE:
                    color[child] = GREY
                    stack.append((child, 0))
                    path.append(child)
            else:
                color[node] = BLACK
                stack.pop()
                path.pop()


def stratify(graph: DepGraph) -> LevelAssignment:
    """Assign each node the length of its longest prerequisite chain.

    Roots (no prerequisites) get level 0; every other node gets one more
    than the maximum level among its prerequisites.  Raises
    :class:`CyclicInput` when the graph is not a DAG.
    """
    preds = graph.prerequisites()
    succs = graph.dependents()
    indegree = {n: len(ps) for n, ps in preds.items()}
    level_of = {n: 0 for n in graph.nodes}

    ready = sorted(n for n, d in indegree.items() if d == 0)
    processed = 0
    queue = list(ready)
    while queue:
        node = queue.pop()
        processed += 1
        for dep in succs[node]:
            level_of[dep] = max(level_of[dep], level_of[node] + 1)
            indegree[dep] -= 1
            if indegree[dep] == 0:
                queue.append(dep)
    if processed != len(graph.nodes):
        try:
            check_acyclic(graph)
        except CycleError as exc:
            raise CyclicInput(exc.cycle) from None
        raise CyclicInput([])  # unreachable: leftover nodes imply a cycle

    if level_of:
        depth = max(level_of.values()) + 1
        buckets: list[list[str]] = [[] for _ in range(depth)]
        for n, lvl in level_of.items():
            buckets[lvl].append(n)
        levels = tuple(tuple(sorted(b)) for b in buckets)
    else:
        levels = ()
    return LevelAssignment(level_of=level_of, levels=levels)


def schedule(assignment: LevelAssignment, batch_size: int) -> list[list[str]]:
    """Chunk each level (in lexicographic order) into batches of <= batch_size.

    All names of level i precede all names of level i+1, so concatenating
    the batches yields a topological order.
    """
    if batch_size < 1:
        raise InvalidInput(f"batch_size must be >= 1, got {batch_size}")
    batches = []
    for names in assignment.levels:
        for i in range(0, len(names), batch_size):
            batches.append(list(names[i : i + batch_size]))
    return batches


def to_dot(graph: DepGraph) -> str:
    """DOT rendering for inspection; deterministic node/edge order."""
    lines = ["digraph dependencies {"]
    for n in sorted(graph.nodes):
        lines.append(f'  "{n}";')
    for u, v in sorted(graph.edges):
        lines.append(f'  "{u}" -> "{v}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
