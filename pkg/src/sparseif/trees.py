"""Rooted labeled trees with increasing labels.

A tree of size ``k`` has vertices ``1..k`` with vertex 1 as root. It is stored as
a parent array: ``parent[j - 2]`` is the parent of vertex ``j`` and always lies in
``[1, j - 1]``. Every tree of this kind is obtained from the single vertex by
repeatedly attaching a fresh largest label to an existing vertex, so there are
``(k - 1)!`` trees of size ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

DEFAULT_MAX_SIZE = 8


@dataclass(frozen=True)
class Tree:
    """Labeled tree given by its parent array (1-based vertex labels)."""

    parent: tuple[int, ...] = ()

    def __post_init__(self):
        parent = tuple(int(p) for p in self.parent)
        object.__setattr__(self, "parent", parent)
        for j, p in enumerate(parent, start=2):
            if not 1 <= p < j:
                raise ValueError(f"parent of vertex {j} must lie in [1, {j - 1}], got {p}")

    @property
    def size(self) -> int:
        return len(self.parent) + 1

    def __len__(self) -> int:
        return self.size

    @property
    def edges(self) -> list[tuple[int, int]]:
        """Directed edges ``(parent, child)`` in order of the child label."""
        return [(p, j) for j, p in enumerate(self.parent, start=2)]

    @cached_property
    def children(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {v: [] for v in range(1, self.size + 1)}
        for p, j in self.edges:
            out[p].append(j)
        return out

    def parent_of(self, vertex: int) -> int | None:
        if vertex == 1:
            return None
        return self.parent[vertex - 2]

    def subtree(self, vertex: int) -> list[int]:
        """Vertices of the subtree rooted at ``vertex`` in depth-first preorder."""
        order = [vertex]
        for c in self.children[vertex]:
            order.extend(self.subtree(c))
        return order

    def remove_last(self) -> Tree:
        if self.size == 1:
            raise ValueError("cannot remove the root of a singleton tree")
        return Tree(self.parent[:-1])

    def serialize(self) -> str:
        """Comma-separated parent list, ``"1,1,2"`` for the tree with edges
        1->2, 1->3, 2->4. The singleton serializes to the empty string."""
        return ",".join(str(p) for p in self.parent)

    def __str__(self) -> str:
        return self.serialize() or "singleton"


def singleton() -> Tree:
    return Tree(())


def path(k: int) -> Tree:
    """Path 1 -> 2 -> ... -> k."""
    if k < 1:
        raise ValueError("path size must be >= 1")
    return Tree(tuple(range(1, k)))


def star(k: int) -> Tree:
    """Root 1 with children 2..k."""
    if k < 1:
        raise ValueError("star size must be >= 1")
    return Tree((1,) * (k - 1))


def add_leaf(tree: Tree, m: int) -> Tree:
    """Attach vertex ``|T| + 1`` to vertex ``m``."""
    if not 1 <= m <= tree.size:
        raise IndexError(f"vertex {m} not in tree of size {tree.size}")
    return Tree(tree.parent + (m,))


def enumerate_trees(n_max: int, *, allow_large: bool = False,
                    dedup_isomorphic: bool = False) -> list[list[Tree]]:
    """All labeled increasing trees grouped by size ``1..n_max``.

    With ``dedup_isomorphic`` only one representative per rooted isomorphism
    class is kept.
    """
    if n_max <= 0:
        raise ValueError("n_max must be >= 1")
    if n_max > DEFAULT_MAX_SIZE and not allow_large:
        raise ValueError(f"n_max > {DEFAULT_MAX_SIZE} requires allow_large=True")
    levels = [[singleton()]]
    for _ in range(n_max - 1):
        nxt = [add_leaf(t, m) for t in levels[-1] for m in range(1, t.size + 1)]
        levels.append(nxt)
    if dedup_isomorphic:
        deduped = []
        for level in levels:
            seen, keep = set(), []
            for t in level:
                code = canonical_class(t)
                if code not in seen:
                    seen.add(code)
                    keep.append(t)
            deduped.append(keep)
        levels = deduped
    return levels


def canonical_class(tree: Tree) -> str:
    """AHU encoding of the rooted unlabeled shape: ``()`` for a leaf,
    otherwise the sorted child codes wrapped in parentheses."""

    def encode(v: int) -> str:
        return "(" + "".join(sorted(encode(c) for c in tree.children[v])) + ")"

    return encode(1)


def parse_tree(text: str) -> Tree:
    """Inverse of :meth:`Tree.serialize`; ``"singleton"`` or ``""`` give the
    one-vertex tree."""
    text = text.strip()
    if text in ("", "singleton"):
        return singleton()
    try:
        return Tree(tuple(int(p) for p in text.split(",")))
    except ValueError as exc:
        raise ValueError(f"invalid tree {text!r}: {exc}") from None
