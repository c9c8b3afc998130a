"""Persistent binary prefix trie.

Nodes are immutable 3-tuples ``(left, right, value)``; an update copies the
O(prefix-length) nodes on the root->leaf path and shares the rest, so a
reader holding any root sees a frozen table forever.  Publishing a new root
is a single reference assignment, which is what makes table snapshots O(1)
and lets matching walk an unlocked structure while writers proceed.

Keys are (bits, length) pairs where ``bits`` is the address as an int with
the buffer's most significant bit first (bit 0 of the key is the MSB).
Values are whatever the caller stores; ``None`` marks "no value here".
"""

from __future__ import annotations

from typing import Any, Iterator, Optional, Tuple

# node layout
_L, _R, _V = 0, 1, 2

Node = Tuple[Optional[tuple], Optional[tuple], Any]

EMPTY: Optional[Node] = None


def _bit(bits: int, depth: int) -> int:
    return (bits >> (127 - depth)) & 1


def set_(root: Optional[Node], bits: int, length: int, value: Any) -> Node:
    """Return a new root with ``value`` stored at (bits, length)."""
    path: list[Optional[Node]] = []
    node = root
    for depth in range(length):
        path.append(node)
        node = (node[_L] if _bit(bits, depth) == 0 else node[_R]) if node else None
    new: Node = (node[_L], node[_R], value) if node else (None, None, value)
    for depth in range(length - 1, -1, -1):
        parent = path[depth]
        if _bit(bits, depth) == 0:
            new = (new, parent[_R] if parent else None, parent[_V] if parent else None)
        else:
            new = (parent[_L] if parent else None, new, parent[_V] if parent else None)
    return new


def get(root: Optional[Node], bits: int, length: int) -> Any:
    node = root
    for depth in range(length):
        if node is None:
            return None
        node = node[_L] if _bit(bits, depth) == 0 else node[_R]
    return node[_V] if node else None


def delete(root: Optional[Node], bits: int, length: int) -> Optional[Node]:
    """Return a new root without a value at (bits, length), pruning empty limbs."""
    path: list[Optional[Node]] = []
    node = root
    for depth in range(length):
        if node is None:
            return root  # key absent: share the old root untouched
        path.append(node)
        node = node[_L] if _bit(bits, depth) == 0 else node[_R]
    if node is None or node[_V] is None:
        return root
    new: Optional[Node] = None if (node[_L] is None and node[_R] is None) else (node[_L], node[_R], None)
    for depth in range(length - 1, -1, -1):
        parent = path[depth]
        assert parent is not None
        if _bit(bits, depth) == 0:
            left, right = new, parent[_R]
        else:
            left, right = parent[_L], new
        if left is None and right is None and parent[_V] is None:
            new = None
        else:
            new = (left, right, parent[_V])
    return new


def walk_path(root: Optional[Node], bits: int, length: int) -> Iterator[Tuple[int, Any]]:
    """Yield (depth, value) for every valued node on the path down to the key.

    Depth ``d`` corresponds to the covering prefix of length ``d`` (depth ==
    length is the exact key itself).
    """
    node = root
    depth = 0
    while node is not None:
        if node[_V] is not None:
            yield depth, node[_V]
        if depth == length:
            return
        node = node[_L] if _bit(bits, depth) == 0 else node[_R]
        depth += 1


def subtree(root: Optional[Node], bits: int, length: int) -> Iterator[Tuple[int, int, Any]]:
    """Yield (bits, length, value) for every valued node at or below the key."""
    node = root
    for depth in range(length):
        if node is None:
            return
        node = node[_L] if _bit(bits, depth) == 0 else node[_R]
    prefix_bits = bits & ~((1 << (128 - length)) - 1) if length < 128 else bits
    stack: list[tuple[Optional[Node], int, int]] = [(node, prefix_bits, length)]
    while stack:
        node, nbits, nlen = stack.pop()
        if node is None:
            continue
        if node[_V] is not None:
            yield nbits, nlen, node[_V]
        if nlen < 128:
            # push right first so iteration comes out in address order
            stack.append((node[_R], nbits | (1 << (127 - nlen)), nlen + 1))
            stack.append((node[_L], nbits, nlen + 1))


def items(root: Optional[Node]) -> Iterator[Tuple[int, int, Any]]:
    return subtree(root, 0, 0)


def count(root: Optional[Node]) -> int:
    n = 0
    for _ in items(root):
        n += 1
    return n
