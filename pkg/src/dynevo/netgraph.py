"""Dynamic recurrent network genomes.

A genome is a directed layered graph. Input nodes sit in layer 0, output
nodes in the last layer, and hidden nodes grow in between through four
elementary mutations: grow/prune connection and grow/prune node. Every
non-input node computes ``relu(bias + sum(w_i * x_i))`` over its ordered
in-connections. A connection headed to a strictly higher layer is consumed
within the same forward pass; a connection to the same or a lower layer
(including self-loops) delivers the source's activation from the previous
pass.

Structural conventions
----------------------
- Node ids come from a monotone per-genome counter and are never reused.
- ``(src, dst)`` connection pairs are unique; sampling over the emitting
  list is therefore exactly uniform over connections.
- Hidden nodes always keep at least one in- and one out-connection;
  :func:`DynamicNet.cascade_cleanup` removes any that do not, repeatedly,
  and drops hidden layers left empty (renumbering the rest contiguously).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

from .rng import RngStream

INPUT = "input"
HIDDEN = "hidden"
OUTPUT = "output"

# Genome wire format: magic, little-endian uint32 version, JSON payload.
GENOME_MAGIC = b"DYNEVO"
GENOME_VERSION = 1

# grow_connection resamples a colliding (src, dst) pair this many times
# before giving up and recording a no-op.
GROW_CONNECTION_ATTEMPTS = 16

MUTATION_KINDS = ("grow_connection", "prune_connection", "grow_node", "prune_node")


class GenomeFormatError(ValueError):
    """Raised when genome bytes fail to decode."""


class Node:
    __slots__ = ("id", "kind", "layer", "bias", "in_ids", "out_ids")

    def __init__(self, nid: int, kind: str, layer: int, bias: float = 0.0):
        self.id = nid
        self.kind = kind
        self.layer = layer
        self.bias = bias
        self.in_ids: list[int] = []   # ordered; defines summation order
        self.out_ids: list[int] = []

    def __repr__(self) -> str:
        return f"Node({self.id}, {self.kind}, L{self.layer})"


@dataclass
class MutationOutcome:
    """What a mutation did: which kind ran and whether it changed the net."""

    kind: str
    applied: bool
    info: dict = field(default_factory=dict)


class PassState:
    """Previous-pass activation for every non-input node."""

    __slots__ = ("prev_output",)

    def __init__(self, prev_output: dict[int, float]):
        self.prev_output = prev_output


class DynamicNet:
    """The genome: nodes, weighted connections and layer structure."""

    def __init__(self, d_input: int, d_output: int):
        if d_input < 1 or d_output < 1:
            raise ValueError("d_input and d_output must be >= 1")
        self.d_input = d_input
        self.d_output = d_output
        self.nodes: dict[int, Node] = {}
        self.weights: dict[tuple[int, int], float] = {}
        self.layer_count = 2
        self.architecture_frozen = False
        self.next_id = 0
        self._plan = None
        for _ in range(d_input):
            self._new_node(INPUT, 0)
        for _ in range(d_output):
            self._new_node(OUTPUT, 1)

    # ------------------------------------------------------------------
    # construction helpers

    def _new_node(self, kind: str, layer: int, bias: float = 0.0) -> Node:
        node = Node(self.next_id, kind, layer, bias)
        self.nodes[node.id] = node
        self.next_id += 1
        self._plan = None
        return node

    @property
    def input_ids(self) -> list[int]:
        return list(range(self.d_input))

    @property
    def output_ids(self) -> list[int]:
        # Input and output nodes are created first, in order, and never
        # deleted, so their ids are fixed. Output order == creation order.
        return list(range(self.d_input, self.d_input + self.d_output))

    def hidden_ids(self) -> list[int]:
        return sorted(n.id for n in self.nodes.values() if n.kind == HIDDEN)

    def non_input_ids(self) -> list[int]:
        return sorted(n.id for n in self.nodes.values() if n.kind != INPUT)

    def connection_count(self) -> int:
        return len(self.weights)

    def node_count(self) -> int:
        return len(self.nodes)

    def param_count(self) -> int:
        """One weight per connection plus one bias per non-input node."""
        return len(self.weights) + sum(
            1 for n in self.nodes.values() if n.kind != INPUT
        )

    # ------------------------------------------------------------------
    # sampling sets

    def receiving_nodes(self) -> list[int]:
        """All input nodes plus every hidden/output node with in-nodes."""
        return sorted(
            n.id
            for n in self.nodes.values()
            if n.kind == INPUT or n.in_ids
        )

    def emitting_list(self) -> list[tuple[int, int]]:
        """One ``(src, dst)`` entry per connection, in deterministic order.

        A node appears once per out-node it possesses, so uniform sampling
        over this list is uniform over connections.
        """
        out = []
        for nid in sorted(self.nodes):
            for dst in self.nodes[nid].out_ids:
                out.append((nid, dst))
        return out

    # ------------------------------------------------------------------
    # edge primitives

    def _add_connection(self, src: int, dst: int, weight: float) -> None:
        if (src, dst) in self.weights:
            raise ValueError(f"duplicate connection {src}->{dst}")
        if self.nodes[dst].kind == INPUT:
            raise ValueError("input nodes cannot receive connections")
        self.weights[(src, dst)] = weight
        self.nodes[dst].in_ids.append(src)
        self.nodes[src].out_ids.append(dst)
        self._plan = None

    def _remove_connection(self, src: int, dst: int) -> None:
        del self.weights[(src, dst)]
        self.nodes[dst].in_ids.remove(src)
        self.nodes[src].out_ids.remove(dst)
        self._plan = None

    def _remove_node(self, nid: int) -> None:
        node = self.nodes[nid]
        for src in list(node.in_ids):
            self._remove_connection(src, nid)
        for dst in list(node.out_ids):
            self._remove_connection(nid, dst)
        del self.nodes[nid]
        self._plan = None

    def _insert_layer(self, index: int) -> None:
        """Open an empty layer at ``index``, shifting higher layers up."""
        for node in self.nodes.values():
            if node.layer >= index:
                node.layer += 1
        self.layer_count += 1
        self._plan = None

    def _drop_empty_layers(self) -> None:
        used = sorted({n.layer for n in self.nodes.values()})
        remap = {old: new for new, old in enumerate(used)}
        if len(used) != self.layer_count or any(o != n for o, n in remap.items()):
            for node in self.nodes.values():
                node.layer = remap[node.layer]
            self.layer_count = len(used)
            self._plan = None

    # ------------------------------------------------------------------
    # mutations

    def grow_connection(self, rng: RngStream, init_sigma: float = 1.0) -> MutationOutcome:
        """Connect a receiving node to a hidden/output node.

        Consumes rng values in the order: first index, second index
        (repeated on collision, up to 16 attempts), then one normal for
        the new weight.
        """
        self._check_mutable()
        recv = self.receiving_nodes()
        targets = self.non_input_ids()
        for _ in range(GROW_CONNECTION_ATTEMPTS):
            src = recv[rng.randrange(len(recv))]
            dst = targets[rng.randrange(len(targets))]
            if (src, dst) not in self.weights:
                self._add_connection(src, dst, init_sigma * rng.normal())
                return MutationOutcome("grow_connection", True, {"src": src, "dst": dst})
        return MutationOutcome("grow_connection", False)

    def prune_connection(self, rng: RngStream) -> MutationOutcome:
        """Delete one connection, sampled uniformly via the emitting list."""
        self._check_mutable()
        emitting = self.emitting_list()
        if not emitting:
            raise ValueError("prune_connection requires at least one connection")
        src = emitting[rng.randrange(len(emitting))][0]
        outs = self.nodes[src].out_ids
        dst = outs[rng.randrange(len(outs))]
        self._remove_connection(src, dst)
        removed = self.cascade_cleanup()
        return MutationOutcome(
            "prune_connection", True,
            {"src": src, "dst": dst, "cascade_removed": removed},
        )

    def grow_node(self, rng: RngStream, init_sigma: float = 1.0) -> MutationOutcome:
        """Create a hidden node wired to three sampled nodes.

        Samples: a first node among receiving nodes, a second among
        receiving nodes minus the first, a third among hidden/output
        nodes. Consumes rng values in the order: three indices, the new
        node's bias, then one normal per created connection
        (first->new, second->new, new->third).

        The node lands one layer past the first node, towards the third;
        a fresh layer is inserted when no hidden layer exists there.
        """
        self._check_mutable()
        recv = self.receiving_nodes()
        if len(recv) < 2:
            raise ValueError("grow_node requires at least two receiving nodes")
        first = recv[rng.randrange(len(recv))]
        rest = [nid for nid in recv if nid != first]
        second = rest[rng.randrange(len(rest))]
        targets = self.non_input_ids()
        third = targets[rng.randrange(len(targets))]

        lf = self.nodes[first].layer
        lo = self.nodes[third].layer
        if lo > lf:
            target = lf + 1
            if target == self.layer_count - 1 or target == lo:
                self._insert_layer(target)
        else:
            target = lf - 1
            if target == 0 or target == lo:
                self._insert_layer(lf)
                target = lf

        node = self._new_node(HIDDEN, target, bias=init_sigma * rng.normal())
        for src, dst in ((first, node.id), (second, node.id), (node.id, third)):
            if (src, dst) not in self.weights:
                self._add_connection(src, dst, init_sigma * rng.normal())
        return MutationOutcome(
            "grow_node", True,
            {"new": node.id, "first": first, "second": second, "third": third},
        )

    def prune_node(self, rng: RngStream) -> MutationOutcome:
        """Delete a uniformly sampled hidden node and its connections."""
        self._check_mutable()
        hidden = self.hidden_ids()
        if not hidden:
            raise ValueError("prune_node requires at least one hidden node")
        victim = hidden[rng.randrange(len(hidden))]
        self._remove_node(victim)
        removed = self.cascade_cleanup()
        return MutationOutcome(
            "prune_node", True, {"node": victim, "cascade_removed": removed}
        )

    def cascade_cleanup(self) -> int:
        """Remove dead hidden nodes until fixpoint; drop empty layers.

        A hidden node is dead when it has no in-connections or no
        out-connections (losing either side alone is enough). Returns the
        number of nodes removed.
        """
        removed = 0
        while True:
            dead = [
                n.id
                for n in self.nodes.values()
                if n.kind == HIDDEN and (not n.in_ids or not n.out_ids)
            ]
            if not dead:
                break
            for nid in dead:
                if nid in self.nodes:
                    self._remove_node(nid)
                    removed += 1
        self._drop_empty_layers()
        return removed

    def applicable_mutations(self) -> list[str]:
        out = ["grow_connection"]
        if self.weights:
            out.append("prune_connection")
        if len(self.receiving_nodes()) >= 2:
            out.append("grow_node")
        if any(n.kind == HIDDEN for n in self.nodes.values()):
            out.append("prune_node")
        return out

    def mutate(self, rng: RngStream, init_sigma: float = 1.0) -> MutationOutcome:
        """Apply one mutation, sampled uniformly among the applicable ones."""
        self._check_mutable()
        choices = self.applicable_mutations()
        kind = choices[rng.randrange(len(choices))]
        if kind == "grow_connection":
            return self.grow_connection(rng, init_sigma)
        if kind == "prune_connection":
            return self.prune_connection(rng)
        if kind == "grow_node":
            return self.grow_node(rng, init_sigma)
        return self.prune_node(rng)

    def _check_mutable(self) -> None:
        if self.architecture_frozen:
            raise ValueError("architecture is frozen; mutations are disabled")

    # ------------------------------------------------------------------
    # parameters

    def perturb_parameters(self, rng: RngStream, sigma: float = 0.1) -> None:
        """Add an independent N(0, sigma^2) draw to every weight and bias.

        Draw order is fixed: nodes in ascending id; for each non-input
        node its bias first, then its in-connection weights in list
        order. Exactly ``param_count()`` normals are consumed.
        """
        deltas = rng.normal_array(self.param_count())
        i = 0
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            if node.kind == INPUT:
                continue
            node.bias += sigma * deltas[i]
            i += 1
            for src in node.in_ids:
                self.weights[(src, nid)] += sigma * deltas[i]
                i += 1
        self._plan = None

    # ------------------------------------------------------------------
    # forward pass

    def _compile(self):
        """Flatten the graph into an evaluation plan.

        Nodes are evaluated in (layer, id) order. Each non-input entry
        carries (node_id, slot, bias, in-entries) where an in-entry reads
        either the current pass (slot index) or the previous pass (node
        id into PassState.prev_output).
        """
        slot_of = {}
        for i, nid in enumerate(self.input_ids):
            slot_of[nid] = i
        order = sorted(
            (n.id for n in self.nodes.values() if n.kind != INPUT),
            key=lambda nid: (self.nodes[nid].layer, nid),
        )
        for i, nid in enumerate(order):
            slot_of[nid] = self.d_input + i
        plan = []
        for nid in order:
            node = self.nodes[nid]
            entries = []
            for src in node.in_ids:
                w = self.weights[(src, nid)]
                if self.nodes[src].layer < node.layer:
                    entries.append((slot_of[src], w, False))
                else:
                    entries.append((src, w, True))
            plan.append((nid, slot_of[nid], node.bias, entries))
        out_slots = [slot_of[nid] for nid in self.output_ids]
        self._plan = (plan, out_slots, self.d_input + len(order))
        return self._plan

    def reset_state(self) -> PassState:
        """Zeroed previous-pass activations; call at every episode start."""
        return PassState({nid: 0.0 for nid in self.non_input_ids()})

    def forward(self, state: PassState, inputs) -> list[float]:
        """One network pass; returns output activations in creation order."""
        if len(inputs) != self.d_input:
            raise ValueError(
                f"expected {self.d_input} inputs, got {len(inputs)}"
            )
        plan, out_slots, n_slots = self._plan or self._compile()
        cur = [0.0] * n_slots
        cur[: self.d_input] = [float(x) for x in inputs]
        prev = state.prev_output
        for nid, slot, bias, entries in plan:
            acc = bias
            for key, w, use_prev in entries:
                acc += w * (prev[key] if use_prev else cur[key])
            cur[slot] = acc if acc > 0.0 else 0.0
        for nid, slot, _, _ in plan:
            prev[nid] = cur[slot]
        return [cur[s] for s in out_slots]

    # ------------------------------------------------------------------
    # validation

    def validate(self) -> None:
        """Full structural audit; raises AssertionError on any violation."""
        inputs = [n for n in self.nodes.values() if n.kind == INPUT]
        outputs = [n for n in self.nodes.values() if n.kind == OUTPUT]
        assert len(inputs) == self.d_input
        assert len(outputs) == self.d_output
        assert sorted(n.id for n in inputs) == self.input_ids
        assert sorted(n.id for n in outputs) == self.output_ids
        layers = {n.layer for n in self.nodes.values()}
        assert layers == set(range(self.layer_count)), "empty or out-of-range layer"
        for n in inputs:
            assert n.layer == 0 and not n.in_ids
        for n in outputs:
            assert n.layer == self.layer_count - 1
        for n in self.nodes.values():
            if n.kind == HIDDEN:
                assert 0 < n.layer < self.layer_count - 1
                assert n.in_ids and n.out_ids, f"dead hidden node {n.id}"
        edges_from_lists = set()
        for n in self.nodes.values():
            assert len(set(n.in_ids)) == len(n.in_ids), "duplicate in-connection"
            assert len(set(n.out_ids)) == len(n.out_ids), "duplicate out-connection"
            for src in n.in_ids:
                edges_from_lists.add((src, n.id))
                assert n.id in self.nodes[src].out_ids
            for dst in n.out_ids:
                assert self.nodes[dst].kind != INPUT
                assert n.id in self.nodes[dst].in_ids
        assert edges_from_lists == set(self.weights), "edge collections disagree"

    # ------------------------------------------------------------------
    # serialization

    def to_obj(self) -> dict:
        """Plain-dict form used by both the genome codec and checkpoints."""
        return {
            "d_input": self.d_input,
            "d_output": self.d_output,
            "layer_count": self.layer_count,
            "architecture_frozen": self.architecture_frozen,
            "next_id": self.next_id,
            "nodes": [
                {
                    "id": n.id,
                    "kind": n.kind,
                    "layer": n.layer,
                    "bias": n.bias,
                    "in": list(n.in_ids),
                }
                for nid in sorted(self.nodes)
                for n in (self.nodes[nid],)
            ],
            "connections": [
                [s, d, self.weights[(s, d)]] for s, d in self.emitting_list()
            ],
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "DynamicNet":
        try:
            net = cls.__new__(cls)
            net.d_input = int(obj["d_input"])
            net.d_output = int(obj["d_output"])
            net.layer_count = int(obj["layer_count"])
            net.architecture_frozen = bool(obj["architecture_frozen"])
            net.next_id = int(obj["next_id"])
            net.nodes = {}
            net.weights = {}
            net._plan = None
            for rec in obj["nodes"]:
                node = Node(int(rec["id"]), rec["kind"], int(rec["layer"]),
                            float(rec["bias"]))
                node.in_ids = [int(x) for x in rec["in"]]
                net.nodes[node.id] = node
            # Rebuild out_ids from the connection list so the recorded
            # emitting order (and thus prune sampling) round-trips exactly.
            for s, d, w in obj["connections"]:
                net.nodes[int(s)].out_ids.append(int(d))
                net.weights[(int(s), int(d))] = float(w)
            if set(net.weights) != {
                (s, n.id) for n in net.nodes.values() for s in n.in_ids
            }:
                raise GenomeFormatError("connection/node lists disagree")
        except (KeyError, TypeError, ValueError) as exc:
            raise GenomeFormatError(f"malformed genome object: {exc}") from exc
        return net

    def serialize(self) -> bytes:
        payload = json.dumps(self.to_obj(), separators=(",", ":")).encode()
        return GENOME_MAGIC + struct.pack("<I", GENOME_VERSION) + payload

    @classmethod
    def deserialize(cls, data: bytes) -> "DynamicNet":
        if len(data) < len(GENOME_MAGIC) + 4 or not data.startswith(GENOME_MAGIC):
            raise GenomeFormatError("not a DYNEVO genome (bad magic header)")
        off = len(GENOME_MAGIC)
        (version,) = struct.unpack_from("<I", data, off)
        if version != GENOME_VERSION:
            raise GenomeFormatError(
                f"unsupported genome format version {version}"
            )
        try:
            obj = json.loads(data[off + 4 :].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise GenomeFormatError(f"corrupt genome payload: {exc}") from exc
        return cls.from_obj(obj)

    # ------------------------------------------------------------------
    # DOT export

    def to_dot(self) -> str:
        """Graphviz digraph; recurrent edges are dashed, layers ranked."""
        lines = ["digraph dynamic_net {", "  rankdir=LR;",
                 "  node [shape=circle];"]
        for layer in range(self.layer_count):
            members = sorted(
                n.id for n in self.nodes.values() if n.layer == layer
            )
            decls = []
            for nid in members:
                kind = self.nodes[nid].kind
                shape = {"input": "box", "output": "doublecircle"}.get(kind)
                attr = f" [shape={shape}]" if shape else ""
                decls.append(f"n{nid}{attr};")
            lines.append("  { rank=same; " + " ".join(decls) + " }")
        for src, dst in sorted(self.weights):
            recurrent = self.nodes[src].layer >= self.nodes[dst].layer
            style = " [style=dashed]" if recurrent else ""
            lines.append(f"  n{src} -> n{dst}{style};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def new_minimal(d_input: int, d_output: int) -> DynamicNet:
    """Minimal genome: input and output layers, no connections."""
    return DynamicNet(d_input, d_output)


def build_static(d_input: int, d_output: int) -> DynamicNet:
    """Frozen baseline: [d_input, 50, 50, d_output], zero parameters.

    Fully connected feedforward between consecutive layers plus full
    intra-layer recurrence (self-loops included) within each hidden
    layer; no recurrence on the output layer.
    """
    net = DynamicNet(d_input, d_output)
    net.layer_count = 4
    for out in net.output_ids:
        net.nodes[out].layer = 3
    h1 = [net._new_node(HIDDEN, 1).id for _ in range(50)]
    h2 = [net._new_node(HIDDEN, 2).id for _ in range(50)]
    for src in net.input_ids:
        for dst in h1:
            net._add_connection(src, dst, 0.0)
    for layer_ids in (h1, h2):
        for src in layer_ids:
            for dst in layer_ids:
                net._add_connection(src, dst, 0.0)
    for src in h1:
        for dst in h2:
            net._add_connection(src, dst, 0.0)
    for src in h2:
        for dst in net.output_ids:
            net._add_connection(src, dst, 0.0)
    net.architecture_frozen = True
    return net
