"""Deterministic co-Buchi / Buchi automata and the sequential-reachability decomposition.

A specification automaton is stored with a deterministic (possibly partial)
transition map ``delta[(q, p)] -> q'``.  Complementing a deterministic
co-Buchi automaton only flips the acceptance flag; the decomposition then
works on the Buchi complement:

* ``compute_run_fragments``      lasso-shaped fragments (simple prefix, simple loop)
* ``group_by_initial_prop``      fragments keyed by the proposition of their first edge
* ``extract_triplets``           the length-3 windows of a fragment
* ``build_partitions``           buckets keyed by ``(q, q', successors(q'))``
* ``build_switching_automaton``  edge-memory automaton selecting the active controller
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

TOP = "true"

COBUCHI = "cobuchi"
BUCHI = "buchi"


class AutomatonError(ValueError):
    pass


@dataclass
class Automaton:
    states: tuple
    initial: tuple
    alphabet: tuple
    final: frozenset
    acceptance: str
    delta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = tuple(self.states)
        self.initial = tuple(self.initial)
        self.alphabet = tuple(self.alphabet)
        self.final = frozenset(self.final)
        known = set(self.states)
        if len(known) != len(self.states):
            raise AutomatonError("duplicate state ids")
        if TOP in self.alphabet:
            raise AutomatonError(f"'{TOP}' is reserved and cannot be a proposition")
        if self.acceptance not in (COBUCHI, BUCHI):
            raise AutomatonError(f"acceptance must be '{COBUCHI}' or '{BUCHI}'")
        for q in self.initial:
            if q not in known:
                raise AutomatonError(f"initial state {q!r} is not a state")
        for q in self.final:
            if q not in known:
                raise AutomatonError(f"final state {q!r} is not a state")
        props = set(self.alphabet)
        for (q, p), r in self.delta.items():
            if q not in known or r not in known:
                raise AutomatonError(f"transition {q!r} -{p}-> {r!r} uses an unknown state")
            if p not in props:
                raise AutomatonError(f"transition from {q!r} uses unknown proposition {p!r}")

    @classmethod
    def from_transitions(cls, states, initial, alphabet, final, acceptance,
                         transitions: Iterable[tuple]) -> "Automaton":
        """Build from ``(from, props, to)`` triples; ``props`` may contain ``TOP``."""
        alphabet = tuple(alphabet)
        delta: dict = {}
        for src, props, dst in transitions:
            if isinstance(props, str):
                props = [props]
            expanded = alphabet if TOP in props else props
            for p in expanded:
                if (src, p) in delta and delta[(src, p)] != dst:
                    raise AutomatonError(
                        f"nondeterministic: state {src!r} on {p!r} goes to both {delta[(src, p)]!r} and {dst!r}")
                delta[(src, p)] = dst
        return cls(states, initial, alphabet, final, acceptance, delta)

    def step(self, q, p):
        return self.delta.get((q, p))

    def edges(self) -> dict:
        """Map ``(q, q')`` to the set of propositions labelling that edge."""
        out: dict = {}
        for (q, p), r in self.delta.items():
            out.setdefault((q, r), set()).add(p)
        return {k: frozenset(v) for k, v in out.items()}

    def to_json(self) -> dict:
        trans = []
        for (q, r), props in sorted(self.edges().items(), key=lambda kv: _edge_sort_key(self, kv[0])):
            trans.append({"from": q, "props": label_names(self, props), "to": r})
        return {
            "states": list(self.states),
            "initial": list(self.initial),
            "alphabet": list(self.alphabet),
            "final": sorted(self.final, key=self.states.index),
            "acceptance": self.acceptance,
            "transitions": trans,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Automaton":
        try:
            transitions = [(t["from"], t["props"], t["to"]) for t in obj["transitions"]]
            return cls.from_transitions(obj["states"], obj["initial"], obj["alphabet"],
                                        obj["final"], obj["acceptance"], transitions)
        except KeyError as exc:
            raise AutomatonError(f"automaton JSON is missing field {exc}") from None

    def to_dot(self) -> str:
        lines = ["digraph automaton {", "  rankdir=LR;"]
        for q in self.states:
            shape = "doublecircle" if q in self.final else "circle"
            lines.append(f'  "{q}" [shape={shape}];')
        for i, q in enumerate(self.initial):
            lines.append(f'  "__init{i}" [shape=point];')
            lines.append(f'  "__init{i}" -> "{q}";')
        for (q, r), props in sorted(self.edges().items(), key=lambda kv: _edge_sort_key(self, kv[0])):
            lines.append(f'  "{q}" -> "{r}" [label="{"|".join(label_names(self, props))}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _edge_sort_key(a: Automaton, edge):
    return a.states.index(edge[0]), a.states.index(edge[1])


def label_names(a: Automaton, props) -> list:
    """Propositions of an edge in alphabet order, or ``[TOP]`` for the full alphabet."""
    props = frozenset(props)
    if props == frozenset(a.alphabet):
        return [TOP]
    return [p for p in a.alphabet if p in props]


def load_automaton(path) -> Automaton:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise AutomatonError(f"{path}: invalid JSON: {exc}") from None
    return Automaton.from_json(obj)


def complement_to_buchi(a: Automaton) -> Automaton:
    """Complement of a deterministic automaton: same structure, flipped acceptance."""
    flipped = BUCHI if a.acceptance == COBUCHI else COBUCHI
    return Automaton(a.states, a.initial, a.alphabet, a.final, flipped, dict(a.delta))


def successors(a: Automaton, q) -> frozenset:
    """All states reachable from ``q`` in one transition (including ``q`` on a self-loop)."""
    return frozenset(r for (s, _), r in a.delta.items() if s == q)


def edge_label(a: Automaton, q, r) -> frozenset:
    return frozenset(p for (s, p), t in a.delta.items() if s == q and t == r)


def _order(a: Automaton):
    index = {q: i for i, q in enumerate(a.states)}
    return lambda frag: tuple(index[q] for q in frag)


def compute_run_fragments(a: Automaton) -> list[tuple]:
    """Lasso fragments ``(prefix..., loop..., loop[0])`` of accepting runs.

    The prefix is a simple path from an initial state to a final state ``f``
    and the loop a simple cycle through ``f`` (a self-loop when that is the
    only way back).  Consecutive states never repeat except in a length-one
    self-loop.  Results are sorted by state order.
    """
    if a.acceptance != BUCHI:
        raise AutomatonError("run fragments are defined on the Buchi complement")
    succ = {q: sorted(successors(a, q) - {q}, key=a.states.index) for q in a.states}
    selfloop = {q for q in a.states if q in successors(a, q)}
    out = set()

    def simple_paths(src):
        stack = [(src, (src,))]
        while stack:
            q, path = stack.pop()
            yield path
            for r in succ[q]:
                if r not in path:
                    stack.append((r, path + (r,)))

    def simple_cycles(f):
        if f in selfloop:
            yield (f, f)
        stack = [(f, (f,))]
        while stack:
            q, path = stack.pop()
            for r in succ[q]:
                if r == f:
                    yield path + (f,)
                elif r not in path:
                    stack.append((r, path + (r,)))

    cycles = {f: list(simple_cycles(f)) for f in a.final}
    for q0 in a.initial:
        for path in simple_paths(q0):
            f = path[-1]
            if f not in a.final:
                continue
            for cyc in cycles[f]:
                out.add(path + cyc[1:])
    return sorted(out, key=_order(a))


def group_by_initial_prop(a: Automaton, fragments: Sequence[tuple]) -> dict:
    """``R^p``: fragments whose first transition can be taken on ``p``."""
    out = {p: [] for p in a.alphabet}
    for frag in fragments:
        for p in edge_label(a, frag[0], frag[1]):
            out[p].append(frag)
    return out


def extract_triplets(fragment: Sequence) -> list[tuple]:
    """Distinct consecutive length-3 windows of a fragment, in order."""
    seen = []
    for i in range(len(fragment) - 2):
        t = tuple(fragment[i:i + 3])
        if t not in seen:
            seen.append(t)
    return seen


def all_triplets(a: Automaton, fragments: Sequence[tuple] | None = None) -> list[tuple]:
    if fragments is None:
        fragments = compute_run_fragments(a)
    out = []
    for frag in fragments:
        for t in extract_triplets(frag):
            if t not in out:
                out.append(t)
    return out


@dataclass(frozen=True)
class PartitionKey:
    q: str
    q_next: str
    successors: frozenset

    def label(self, a: Automaton | None = None) -> str:
        order = (lambda s: a.states.index(s)) if a is not None else str
        succ = ",".join(sorted(self.successors, key=order))
        return f"({self.q},{self.q_next},{{{succ}}})"

    def to_json(self, a: Automaton | None = None) -> dict:
        order = (lambda s: a.states.index(s)) if a is not None else str
        return {"q": self.q, "q_next": self.q_next,
                "successors": sorted(self.successors, key=order)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "PartitionKey":
        return cls(obj["q"], obj["q_next"], frozenset(obj["successors"]))


def partition_key(a: Automaton, triplet: tuple) -> PartitionKey:
    q, q1, _ = triplet
    return PartitionKey(q, q1, successors(a, q1))


def build_partitions(trips: Iterable[tuple], a: Automaton) -> dict:
    """Bucket triplets by ``(q, q', successors(q'))``; insertion ordered."""
    out: dict = {}
    for t in trips:
        out.setdefault(partition_key(a, t), []).append(tuple(t))
    return out


def merged_target_props(a: Automaton, key: PartitionKey, bucket: Iterable[tuple] = ()) -> frozenset:
    """Propositions of the merged unsafe target of a bucket.

    Union of the labels of every outgoing edge of ``q'`` that leaves ``q'``,
    plus the self-loop label when a triplet of the bucket stays in ``q'``.
    """
    props = set()
    for r in key.successors:
        if r != key.q_next:
            props |= edge_label(a, key.q_next, r)
    if any(t[2] == key.q_next for t in bucket):
        props |= edge_label(a, key.q_next, key.q_next)
    return frozenset(props)


# ------------------------------------------------------------ switching automaton

@dataclass
class SwitchingAutomaton:
    """Deterministic automaton over states ``(q, succ(q))`` and ``(q, q', succ(q'))``."""

    states: list
    initial: list
    alphabet: tuple
    delta: dict

    def step(self, qm, p):
        return self.delta.get((qm, p))

    @staticmethod
    def key_of(qm) -> PartitionKey | None:
        if len(qm) == 3:
            return PartitionKey(qm[0], qm[1], qm[2])
        return None

    def to_json(self, a: Automaton) -> dict:
        names = {s: state_name(a, s) for s in self.states}
        grouped: dict = {}
        for (s, p), t in self.delta.items():
            grouped.setdefault((s, t), set()).add(p)
        trans = [{"from": names[s], "props": label_names(a, ps), "to": names[t]}
                 for (s, t), ps in sorted(grouped.items(),
                                          key=lambda kv: (self.states.index(kv[0][0]), self.states.index(kv[0][1])))]
        return {"states": [names[s] for s in self.states],
                "initial": [names[s] for s in self.initial],
                "alphabet": list(self.alphabet),
                "transitions": trans}

    def to_dot(self, a: Automaton) -> str:
        obj = self.to_json(a)
        lines = ["digraph switching {", "  rankdir=LR;"]
        for s in obj["states"]:
            lines.append(f'  "{s}" [shape=box];')
        for i, s in enumerate(obj["initial"]):
            lines.append(f'  "__init{i}" [shape=point];')
            lines.append(f'  "__init{i}" -> "{s}";')
        for t in obj["transitions"]:
            lines.append(f'  "{t["from"]}" -> "{t["to"]}" [label="{"|".join(t["props"])}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def state_name(a: Automaton, qm) -> str:
    order = a.states.index
    succ = "{" + ",".join(sorted(qm[-1], key=order)) + "}"
    return "(" + ",".join(list(qm[:-1]) + [succ]) + ")"


def build_switching_automaton(a: Automaton) -> SwitchingAutomaton:
    """Edge-memory automaton remembering the last non-trivial transition.

    From an initial pair ``(q0, succ(q0))`` reading ``p`` with ``q0 -p-> q''``
    moves to ``(q0, q'', succ(q''))``.  From ``(q, q', succ(q'))`` reading ``p``
    with ``q' -p-> q''`` moves to ``(q', q'', succ(q''))``; a self-loop on
    ``q'`` keeps the current state so the active controller persists.
    """
    succ = {q: successors(a, q) for q in a.states}
    init = [(q0, succ[q0]) for q0 in a.initial]
    states = list(init)
    delta = {}
    frontier = list(init)
    seen = set(init)
    while frontier:
        qm = frontier.pop(0)
        cur = qm[0] if len(qm) == 2 else qm[1]
        for p in a.alphabet:
            nxt = a.step(cur, p)
            if nxt is None:
                continue
            if len(qm) == 3 and nxt == cur:
                target = qm
            else:
                target = (cur, nxt, succ[nxt])
            delta[(qm, p)] = target
            if target not in seen:
                seen.add(target)
                states.append(target)
                frontier.append(target)
    return SwitchingAutomaton(states, init, a.alphabet, delta)


# ------------------------------------------------------------ feasibility and obligations

def triplet_feasible(a: Automaton, triplet: tuple, labeling) -> bool:
    """False when the start and target regions of a triplet overlap.

    Overlapping regions rule out any barrier certificate for that
    reachability problem, so no search is needed.
    """
    q, q1, q2 = triplet
    start = labeling.region_of_props(edge_label(a, q, q1))
    target = labeling.region_of_props(edge_label(a, q1, q2))
    return not start.intersects(target)


def bucket_feasible(a: Automaton, key: PartitionKey, bucket, labeling) -> bool:
    start = labeling.region_of_props(edge_label(a, key.q, key.q_next))
    target = labeling.region_of_props(merged_target_props(a, key, bucket))
    return not start.intersects(target)


@dataclass
class Obligation:
    prop: str
    coverable: bool
    keys: list
    uncovered: list


def required_certificates(a: Automaton, labeling=None, fragments=None) -> list[Obligation]:
    """Smallest set of partition buckets whose certificates cover every fragment.

    For each proposition ``p`` every fragment in ``R^p`` needs one triplet whose
    bucket has a certificate.  Without a labeling every bucket is a candidate;
    with one, buckets with overlapping regions are excluded.
    """
    if fragments is None:
        fragments = compute_run_fragments(a)
    buckets = build_partitions(all_triplets(a, fragments), a)
    feasible = {}
    for key, bucket in buckets.items():
        feasible[key] = True if labeling is None else bucket_feasible(a, key, bucket, labeling)
    out = []
    for p, frags in group_by_initial_prop(a, fragments).items():
        if not frags:
            continue
        options = []
        uncovered = []
        for frag in frags:
            keys = {partition_key(a, t) for t in extract_triplets(frag)}
            keys = {k for k in keys if feasible[k]}
            if not keys:
                uncovered.append(frag)
            options.append(keys)
        if uncovered:
            out.append(Obligation(p, False, [], uncovered))
            continue
        candidates = sorted(set().union(*options), key=lambda k: list(buckets).index(k))
        chosen = None
        for size in range(1, len(candidates) + 1):
            for combo in itertools.combinations(candidates, size):
                if all(opt & set(combo) for opt in options):
                    chosen = list(combo)
                    break
            if chosen:
                break
        out.append(Obligation(p, True, chosen, []))
    return out
