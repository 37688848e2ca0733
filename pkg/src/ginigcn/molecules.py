"""Molecular graph ingestion: dataset records, a SMILES subset, featurization.

The dataset format is one JSON object per line (UTF-8, ``#`` comment lines
ignored) with fields ``id``, ``atoms`` (array of ``{element, aromatic?,
implicit_h?}``), ``bonds`` (array of ``[i, j, order]`` with order 1, 2, 3 or
``"aromatic"``), ``targets`` (name -> number) and an optional ``fukui``
array of per-atom ``[f_minus, f_plus]`` pairs.

Hydrogens are implicit throughout: they appear as an atom feature, never as
graph nodes. Bond order is parsed and stored but the convolution aggregates
over topology only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MoleculeError",
    "Atom",
    "MolecularGraph",
    "SUPPORTED_ELEMENTS",
    "STANDARD_VALENCE",
    "FEATURE_DIM",
    "parse_graph_file",
    "graph_to_record",
    "format_graph_file",
    "load_dataset",
    "write_dataset",
    "parse_smiles_subset",
    "featurize",
    "kfold_split",
]

SUPPORTED_ELEMENTS = ("H", "C", "N", "O", "F")
STANDARD_VALENCE = {"C": 4, "N": 3, "O": 2, "F": 1}
AROMATIC = "aromatic"
VALID_ORDERS = (1, 2, 3, AROMATIC)

# element one-hot (5) + heavy degree one-hot 0-4 (5) + aromatic flag (1)
# + implicit hydrogen count one-hot 0-4 (5)
FEATURE_DIM = 16


class MoleculeError(ValueError):
    """Malformed molecule record, SMILES string, or graph invariant violation."""


@dataclass(frozen=True)
class Atom:
    element: str
    implicit_hydrogens: int = 0
    aromatic: bool = False


@dataclass
class MolecularGraph:
    """Undirected heavy-atom graph with per-molecule regression targets."""

    id: str
    atoms: list[Atom]
    bonds: list[tuple[int, int, object]] = field(default_factory=list)
    targets: dict[str, float] = field(default_factory=dict)
    fukui: list[tuple[float, float]] | None = None

    def __post_init__(self):
        if not self.atoms:
            raise MoleculeError(f"molecule {self.id!r}: at least one atom required")
        n = len(self.atoms)
        for atom in self.atoms:
            if atom.element not in SUPPORTED_ELEMENTS:
                raise MoleculeError(f"molecule {self.id!r}: unsupported element {atom.element!r}")
            if atom.implicit_hydrogens < 0:
                raise MoleculeError(f"molecule {self.id!r}: negative implicit hydrogen count")
        seen = set()
        normalized = []
        for i, j, order in self.bonds:
            if not (0 <= i < n and 0 <= j < n):
                raise MoleculeError(f"molecule {self.id!r}: bond index out of range ({i}, {j})")
            if i == j:
                raise MoleculeError(f"molecule {self.id!r}: bond endpoints must be distinct")
            if order not in VALID_ORDERS:
                raise MoleculeError(f"molecule {self.id!r}: invalid bond order {order!r}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise MoleculeError(f"molecule {self.id!r}: duplicate bond {key}")
            seen.add(key)
            normalized.append((key[0], key[1], order))
        self.bonds = normalized
        if self.fukui is not None:
            if len(self.fukui) != n:
                raise MoleculeError(f"molecule {self.id!r}: fukui length != atom count")
            self.fukui = [(float(a), float(b)) for a, b in self.fukui]

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    def neighbors(self) -> list[list[int]]:
        """Adjacency lists (symmetric by construction)."""
        adj: list[list[int]] = [[] for _ in self.atoms]
        for i, j, _ in self.bonds:
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def degrees(self) -> list[int]:
        return [len(nbrs) for nbrs in self.neighbors()]


def _atom_from_record(rec, where: str) -> Atom:
    if not isinstance(rec, dict) or "element" not in rec:
        raise MoleculeError(f"{where}: atom record must be an object with an 'element' field")
    h = rec.get("implicit_h", 0)
    if not isinstance(h, int) or isinstance(h, bool) or h < 0:
        raise MoleculeError(f"{where}: implicit_h must be a nonnegative integer")
    return Atom(element=rec["element"], implicit_hydrogens=h, aromatic=bool(rec.get("aromatic", False)))


def _graph_from_record(rec: dict, where: str) -> MolecularGraph:
    if not isinstance(rec, dict):
        raise MoleculeError(f"{where}: record must be an object")
    if "id" not in rec or not isinstance(rec["id"], str):
        raise MoleculeError(f"{where}: missing string 'id' field")
    if "atoms" not in rec or not isinstance(rec["atoms"], list):
        raise MoleculeError(f"{where}: missing 'atoms' array")
    atoms = [_atom_from_record(a, where) for a in rec["atoms"]]
    bonds = []
    for b in rec.get("bonds", []):
        if not isinstance(b, list) or len(b) != 3:
            raise MoleculeError(f"{where}: bond must be a [i, j, order] triple")
        i, j, order = b
        if not isinstance(i, int) or not isinstance(j, int):
            raise MoleculeError(f"{where}: bond endpoints must be integers")
        bonds.append((i, j, order))
    targets = rec.get("targets", {})
    if not isinstance(targets, dict):
        raise MoleculeError(f"{where}: targets must be an object")
    targets = {str(k): float(v) for k, v in targets.items()}
    fukui = rec.get("fukui")
    if fukui is not None:
        if not isinstance(fukui, list) or any(not isinstance(p, list) or len(p) != 2 for p in fukui):
            raise MoleculeError(f"{where}: fukui must be an array of [f_minus, f_plus] pairs")
        fukui = [(float(p[0]), float(p[1])) for p in fukui]
    try:
        return MolecularGraph(id=rec["id"], atoms=atoms, bonds=bonds, targets=targets, fukui=fukui)
    except MoleculeError as e:
        raise MoleculeError(f"{where}: {e}") from None


def parse_graph_file(text: str) -> list[MolecularGraph]:
    """Parse a line-delimited dataset document into validated graphs.

    Blank lines and lines starting with ``#`` are ignored; record order is
    preserved. Errors report the offending line number.
    """
    graphs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        where = f"line {lineno}"
        try:
            rec = json.loads(stripped)
        except json.JSONDecodeError as e:
            raise MoleculeError(f"{where}: malformed record: {e}") from None
        graphs.append(_graph_from_record(rec, where))
    return graphs


def graph_to_record(graph: MolecularGraph) -> dict:
    """The JSON-serializable record for one graph (stable field layout)."""
    rec = {
        "id": graph.id,
        "atoms": [
            {"element": a.element, "aromatic": a.aromatic, "implicit_h": a.implicit_hydrogens}
            for a in graph.atoms
        ],
        "bonds": [[i, j, order] for i, j, order in graph.bonds],
        "targets": {k: graph.targets[k] for k in sorted(graph.targets)},
    }
    if graph.fukui is not None:
        rec["fukui"] = [[fm, fp] for fm, fp in graph.fukui]
    return rec


def format_graph_file(graphs) -> str:
    """Serialize graphs to the line-delimited dataset format.

    ``parse_graph_file(format_graph_file(gs))`` reproduces the graphs exactly.
    """
    return "".join(json.dumps(graph_to_record(g)) + "\n" for g in graphs)


def load_dataset(path) -> list[MolecularGraph]:
    with open(path, encoding="utf-8") as fh:
        return parse_graph_file(fh.read())


def write_dataset(path, graphs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_graph_file(graphs))


_BOND_CHARS = {"-": 1, "=": 2, "#": 3}
_ORDER_VALUE = {1: 1.0, 2: 2.0, 3: 3.0, AROMATIC: 1.5}


def parse_smiles_subset(smiles: str) -> MolecularGraph:
    """Parse a restricted SMILES string into a heavy-atom graph.

    Supported syntax: atoms C/N/O/F (aromatic c/n/o), bonds - = #, branches
    in parentheses, ring closures with digits 1-9 (each digit may be open
    once at a time). Implicit hydrogens follow standard valence (C:4, N:3,
    O:2, F:1) minus the explicit bond-order sum, aromatic bonds counting 1.5.
    """
    elements: list[str] = []
    aromatic_flags: list[bool] = []
    bonds: list[tuple[int, int, object]] = []
    bond_keys: set[tuple[int, int]] = set()
    prev: int | None = None
    pending: object | None = None
    branch_stack: list[int] = []
    open_rings: dict[str, tuple[int, object | None]] = {}

    def add_bond(i: int, j: int, order, pos: int):
        if i == j:
            raise MoleculeError(f"position {pos}: ring closure bonds an atom to itself")
        key = (min(i, j), max(i, j))
        if key in bond_keys:
            raise MoleculeError(f"position {pos}: duplicate bond between atoms {i} and {j}")
        bond_keys.add(key)
        bonds.append((i, j, order))

    for pos, ch in enumerate(smiles):
        if ch in "CNOF" or ch in "cno":
            arom = ch.islower()
            elements.append(ch.upper())
            aromatic_flags.append(arom)
            idx = len(elements) - 1
            if prev is not None:
                order = pending
                if order is None:
                    order = AROMATIC if (arom and aromatic_flags[prev]) else 1
                add_bond(prev, idx, order, pos)
            elif pending is not None:
                raise MoleculeError(f"position {pos}: bond symbol before the first atom")
            pending = None
            prev = idx
        elif ch in _BOND_CHARS:
            if pending is not None:
                raise MoleculeError(f"position {pos}: consecutive bond symbols")
            pending = _BOND_CHARS[ch]
        elif ch == "(":
            if prev is None:
                raise MoleculeError(f"position {pos}: branch before any atom")
            if pending is not None:
                raise MoleculeError(f"position {pos}: bond symbol before branch open")
            branch_stack.append(prev)
        elif ch == ")":
            if not branch_stack:
                raise MoleculeError(f"position {pos}: unmatched ')'")
            if pending is not None:
                raise MoleculeError(f"position {pos}: dangling bond symbol before ')'")
            prev = branch_stack.pop()
        elif ch.isdigit():
            if ch == "0":
                raise MoleculeError(f"position {pos}: ring-closure digit 0 is not supported")
            if prev is None:
                raise MoleculeError(f"position {pos}: ring-closure digit before any atom")
            if ch in open_rings:
                other, open_order = open_rings.pop(ch)
                if pending is not None and open_order is not None and pending != open_order:
                    raise MoleculeError(f"position {pos}: conflicting bond orders for ring {ch}")
                order = pending if pending is not None else open_order
                if order is None:
                    order = AROMATIC if (aromatic_flags[prev] and aromatic_flags[other]) else 1
                add_bond(other, prev, order, pos)
                pending = None
            else:
                open_rings[ch] = (prev, pending)
                pending = None
        else:
            raise MoleculeError(f"position {pos}: unsupported character {ch!r}")

    if branch_stack:
        raise MoleculeError("unmatched '(' at end of string")
    if open_rings:
        digits = ", ".join(sorted(open_rings))
        raise MoleculeError(f"unclosed ring closure digit(s): {digits}")
    if pending is not None:
        raise MoleculeError("dangling bond symbol at end of string")
    if not elements:
        raise MoleculeError("empty SMILES string")

    order_sum = [0.0] * len(elements)
    for i, j, order in bonds:
        order_sum[i] += _ORDER_VALUE[order]
        order_sum[j] += _ORDER_VALUE[order]

    atoms = []
    for idx, (el, arom) in enumerate(zip(elements, aromatic_flags)):
        h = int(np.floor(STANDARD_VALENCE[el] - order_sum[idx] + 1e-9))
        if h < 0:
            raise MoleculeError(
                f"atom {idx} ({el}): bond order sum {order_sum[idx]} exceeds valence "
                f"{STANDARD_VALENCE[el]}"
            )
        atoms.append(Atom(element=el, implicit_hydrogens=h, aromatic=arom))
    return MolecularGraph(id=smiles, atoms=atoms, bonds=bonds)


_ELEMENT_INDEX = {el: k for k, el in enumerate(SUPPORTED_ELEMENTS)}
_MAX_ONE_HOT = 4


def featurize(graph: MolecularGraph) -> np.ndarray:
    """Deterministic 16-dim node features, one row per atom.

    Layout: element one-hot over (H, C, N, O, F), heavy-atom degree one-hot
    0-4, aromatic flag, implicit hydrogen count one-hot 0-4.
    """
    degrees = graph.degrees()
    x = np.zeros((graph.num_atoms, FEATURE_DIM))
    for k, atom in enumerate(graph.atoms):
        if degrees[k] > _MAX_ONE_HOT:
            raise MoleculeError(f"molecule {graph.id!r}: atom {k} degree {degrees[k]} > {_MAX_ONE_HOT}")
        if atom.implicit_hydrogens > _MAX_ONE_HOT:
            raise MoleculeError(
                f"molecule {graph.id!r}: atom {k} implicit hydrogen count "
                f"{atom.implicit_hydrogens} > {_MAX_ONE_HOT}"
            )
        x[k, _ELEMENT_INDEX[atom.element]] = 1.0
        x[k, 5 + degrees[k]] = 1.0
        x[k, 10] = 1.0 if atom.aromatic else 0.0
        x[k, 11 + atom.implicit_hydrogens] = 1.0
    return x


def kfold_split(n: int, k: int, seed: int) -> list[list[int]]:
    """Deterministically partition {0..n-1} into k folds of near-equal size."""
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of items n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [sorted(int(i) for i in part) for part in np.array_split(perm, k)]
