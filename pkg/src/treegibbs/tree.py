"""Complete b-ary trees, regions and boundary conditions.

Vertices are numbered breadth-first: the root is 0 and the children of ``x``
are ``b*x + 1 .. b*x + b``. The ``n`` vertices of T come first, followed by
the ``b**(depth+1)`` boundary vertices (the children of the leaves), so level
``k`` occupies a contiguous index range.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAX_VERTICES = 1 << 24


@dataclass(frozen=True)
class TreeTopology:
    b: int
    depth: int

    def __post_init__(self) -> None:
        if int(self.b) != self.b or self.b < 2:
            raise ValueError("branching b must be an integer >= 2")
        if int(self.depth) != self.depth or self.depth < 0:
            raise ValueError("depth must be a non-negative integer")
        if self.level_start(self.depth + 2) > MAX_VERTICES:
            raise OverflowError(f"tree b={self.b} depth={self.depth} is too large")

    def level_start(self, k: int) -> int:
        """Index of the first vertex on level ``k`` (root level is 0)."""
        return (self.b ** k - 1) // (self.b - 1)

    @property
    def n(self) -> int:
        return self.level_start(self.depth + 1)

    @property
    def n_boundary(self) -> int:
        return self.b ** (self.depth + 1)

    @property
    def n_total(self) -> int:
        return self.n + self.n_boundary

    @property
    def root(self) -> int:
        return 0

    @cached_property
    def parent(self) -> np.ndarray:
        par = np.empty(self.n_total, dtype=np.int64)
        par[0] = -1
        par[1:] = (np.arange(1, self.n_total) - 1) // self.b
        par.setflags(write=False)
        return par

    @cached_property
    def children(self) -> np.ndarray:
        """``(n, b)`` array of child ids for every vertex of T."""
        ch = self.b * np.arange(self.n)[:, None] + 1 + np.arange(self.b)[None, :]
        ch.setflags(write=False)
        return ch

    @cached_property
    def level(self) -> np.ndarray:
        lev = np.empty(self.n_total, dtype=np.int64)
        for k in range(self.depth + 2):
            lev[self.level_start(k):self.level_start(k + 1)] = k
        lev.setflags(write=False)
        return lev

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.arange(self.n, self.n_total)

    def level_vertices(self, k: int) -> np.ndarray:
        if not 0 <= k <= self.depth + 1:
            raise ValueError(f"level {k} outside 0..{self.depth + 1}")
        return np.arange(self.level_start(k), self.level_start(k + 1))

    def check_vertex(self, x: int, allow_boundary: bool = False) -> int:
        limit = self.n_total if allow_boundary else self.n
        if not 0 <= int(x) < limit:
            raise KeyError(f"unknown vertex id {x}")
        return int(x)

    def height(self, x: int) -> int:
        """Number of levels of T strictly below ``x``."""
        return self.depth - int(self.level[self.check_vertex(x)])

    def neighbors(self, x: int, include_boundary: bool = True) -> list[int]:
        x = self.check_vertex(x, allow_boundary=True)
        out = [] if x == 0 else [int(self.parent[x])]
        if x < self.n:
            kids = self.children[x]
            if include_boundary or kids[0] < self.n:
                out.extend(int(c) for c in kids)
        return out

    def edges(self, include_boundary: bool = True) -> Iterable[tuple[int, int]]:
        stop = self.n_total if include_boundary else self.n
        par = self.parent
        for c in range(1, stop):
            yield int(par[c]), c

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """``(n, b+1)`` neighbour ids (parent first, -1 for the root's parent)."""
        tab = np.empty((self.n, self.b + 1), dtype=np.int64)
        tab[:, 0] = self.parent[: self.n]
        tab[:, 1:] = self.children
        tab.setflags(write=False)
        return tab

    def descendants(self, x: int, levels: int | None = None) -> np.ndarray:
        """Vertices of T in the subtree of ``x`` spanning at most ``levels`` levels."""
        x = self.check_vertex(x)
        lx = int(self.level[x])
        span = self.depth - lx + 1 if levels is None else min(levels, self.depth - lx + 1)
        out = []
        lo = hi = x
        for _ in range(span):
            out.append(np.arange(lo, hi + 1))
            lo, hi = self.b * lo + 1, self.b * hi + self.b
        return np.concatenate(out) if out else np.empty(0, dtype=np.int64)

    def descendants_at(self, x: int, dist: int) -> np.ndarray:
        """Vertices (possibly boundary) exactly ``dist`` levels below ``x``."""
        lo = hi = self.check_vertex(x)
        for _ in range(dist):
            lo, hi = self.b * lo + 1, self.b * hi + self.b
        if hi >= self.n_total:
            raise ValueError(f"no vertices {dist} levels below {x}")
        return np.arange(lo, hi + 1)

    def block(self, x: int, ell: int) -> "Region":
        """``B_{x,ell}``: the first ``ell`` levels of the subtree of ``x``."""
        if ell < 0:
            raise ValueError("block height must be non-negative")
        return Region(self, self.descendants(x, ell))

    def subtree(self, x: int) -> "Region":
        return Region(self, self.descendants(x))

    def subtree_tilde(self, x: int) -> "Region":
        """The subtree of ``x`` with ``x`` itself removed."""
        return Region(self, self.descendants(x)[1:])

    def level_forest(self, i: int) -> "Region":
        """The lowest ``i`` levels of T."""
        if not 0 <= i <= self.depth + 1:
            raise ValueError(f"forest index {i} outside 0..{self.depth + 1}")
        return Region(self, np.arange(self.level_start(self.depth + 1 - i), self.n))


class Region:
    """A vertex subset of T with cached boundary information."""

    def __init__(self, tree: TreeTopology, vertices: Sequence[int]):
        verts = np.unique(np.asarray(vertices, dtype=np.int64))
        if verts.size and (verts[0] < 0 or verts[-1] >= tree.n):
            raise KeyError("region vertices must lie in T")
        verts.setflags(write=False)
        self.tree = tree
        self.vertices = verts

    def __len__(self) -> int:
        return int(self.vertices.size)

    def __iter__(self):
        return iter(int(v) for v in self.vertices)

    def __contains__(self, x) -> bool:
        i = np.searchsorted(self.vertices, x)
        return bool(i < self.vertices.size and self.vertices[i] == x)

    def __eq__(self, other) -> bool:
        return isinstance(other, Region) and np.array_equal(self.vertices, other.vertices)

    def __hash__(self) -> int:
        return hash(self.vertices.tobytes())

    def __repr__(self) -> str:
        return f"Region({self.vertices.tolist()})"

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.tree.n_total, dtype=bool)
        m[self.vertices] = True
        return m

    def outer_boundary(self, include_boundary: bool = True) -> np.ndarray:
        """Neighbours of the region in ``(T u dT) minus region``."""
        out = set()
        for x in self.vertices:
            for y in self.tree.neighbors(int(x), include_boundary):
                if not self.mask[y]:
                    out.add(y)
        return np.array(sorted(out), dtype=np.int64)

    def complement(self) -> "Region":
        return Region(self.tree, np.flatnonzero(~self.mask[: self.tree.n]))

    def union(self, other: "Region") -> "Region":
        return Region(self.tree, np.concatenate([self.vertices, other.vertices]))

    def intersection(self, other: "Region") -> "Region":
        return Region(self.tree, np.intersect1d(self.vertices, other.vertices))


@dataclass(frozen=True, eq=False)
class BoundaryCondition:
    """Fixed spins on dT, or ``kind == "free"`` for no boundary at all."""

    kind: str
    spins: np.ndarray | None = None
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "free"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "fixed":
            if self.spins is None:
                raise ValueError("fixed boundary needs spins")
            arr = np.array(self.spins, dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, "spins", arr)

    @property
    def is_free(self) -> bool:
        return self.kind == "free"

    def check(self, tree: TreeTopology, spin_count: int | None = None) -> None:
        if self.is_free:
            return
        if self.spins.shape != (tree.n_boundary,):
            raise ValueError(f"boundary has {self.spins.size} spins, tree needs {tree.n_boundary}")
        if spin_count is not None and (self.spins.min() < 0 or self.spins.max() >= spin_count):
            raise ValueError("boundary spin index out of range")

    def full_config(self, tree: TreeTopology, interior: np.ndarray) -> np.ndarray:
        """Concatenate interior spins with the boundary (-1 when free)."""
        interior = np.asarray(interior)
        tail_shape = interior.shape[:-1] + (tree.n_boundary,)
        if self.is_free:
            tail = np.full(tail_shape, -1, dtype=interior.dtype)
        else:
            tail = np.broadcast_to(self.spins.astype(interior.dtype), tail_shape)
        return np.concatenate([interior, tail], axis=-1)

    def __repr__(self) -> str:
        return f"BoundaryCondition({self.name or self.kind})"

    # named constructors

    @classmethod
    def free(cls) -> "BoundaryCondition":
        return cls("free", None, "free")

    @classmethod
    def constant(cls, tree: TreeTopology, spin: int, name: str = "") -> "BoundaryCondition":
        return cls("fixed", np.full(tree.n_boundary, int(spin)), name or f"constant:{spin}")

    @classmethod
    def plus(cls, model, tree: TreeTopology) -> "BoundaryCondition":
        return cls.constant(tree, model.index_of(1) if model.name == "ising" else 0, "plus")

    @classmethod
    def minus(cls, model, tree: TreeTopology) -> "BoundaryCondition":
        if model.name != "ising":
            raise ValueError("minus boundary is defined for the Ising model only")
        return cls.constant(tree, model.index_of(-1), "minus")

    @classmethod
    def color(cls, tree: TreeTopology, k: int) -> "BoundaryCondition":
        """Every boundary vertex gets colour ``k`` (1-based label)."""
        return cls.constant(tree, int(k) - 1, f"color:{k}")

    @classmethod
    def even(cls, tree: TreeTopology) -> "BoundaryCondition":
        """Restriction to dT of the configuration occupying every even level."""
        occupied = (tree.depth + 1) % 2 == 0
        return cls.constant(tree, int(occupied), "even")

    @classmethod
    def odd(cls, tree: TreeTopology) -> "BoundaryCondition":
        occupied = (tree.depth + 1) % 2 == 1
        return cls.constant(tree, int(occupied), "odd")

    @classmethod
    def frozen_coloring(cls, tree: TreeTopology, q: int, root_color: int = 1) -> "BoundaryCondition":
        """Boundary forcing every vertex of T when ``q == b + 1``.

        Each vertex's children receive the ``q - 1`` colours other than its own,
        so the leaves (and then each level above) see every other colour.
        """
        if q != tree.b + 1:
            raise ValueError("frozen colourings are built for q = b + 1")
        colors = np.empty(tree.n_total, dtype=np.int64)
        colors[0] = root_color - 1
        for x in range(tree.n):
            others = [c for c in range(q) if c != colors[x]]
            colors[tree.children[x]] = others
        return cls("fixed", colors[tree.n:], f"frozen:{root_color}")

    @classmethod
    def from_labels(cls, model, tree: TreeTopology, labels: Sequence) -> "BoundaryCondition":
        spins = [model.index_of(lab) for lab in labels]
        bc = cls("fixed", np.array(spins), "custom")
        bc.check(tree, model.spin_count)
        return bc

    @classmethod
    def parse(cls, text: str, model, tree: TreeTopology) -> "BoundaryCondition":
        """Parse ``plus|minus|free|even|odd|color:<k>|file:<path>``."""
        text = text.strip()
        key = text.lower()
        if key == "free":
            return cls.free()
        if key == "plus":
            return cls.plus(model, tree)
        if key == "minus":
            return cls.minus(model, tree)
        if key == "even":
            return cls.even(tree)
        if key == "odd":
            return cls.odd(tree)
        if key.startswith("color:"):
            return cls.color(tree, int(text.split(":", 1)[1]))
        if key.startswith("frozen"):
            root = int(text.split(":", 1)[1]) if ":" in text else 1
            return cls.frozen_coloring(tree, model.spin_count, root)
        if key.startswith("file:"):
            labels = Path(text.split(":", 1)[1]).read_text().split()
            return cls.from_labels(model, tree, labels)
        raise ValueError(f"unknown boundary {text!r}")
