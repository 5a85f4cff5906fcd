"""Replicated text document: an RGA-style list CRDT with tombstones.

Every character is an element identified by an OpId ``(counter, node)``;
counters are per-node and contiguous starting at 1. An insert anchors to the
element it follows (or HEAD for the front); concurrent inserts under the
same anchor order by descending OpId. Document order is the depth-first walk
of that anchor tree, which is a pure function of the op set, so any delivery
order converges.

Out-of-order delivery is handled by buffering: an op waits until its
dependencies exist locally and until counter-1 of its own node has applied
(no vector clocks on ops). Integration is idempotent; replays are no-ops.
"""

from __future__ import annotations

from bisect import insort
from dataclasses import dataclass
from typing import NamedTuple, Optional

from .names import Name


class OpId(NamedTuple):
    counter: int
    node: Name


@dataclass(frozen=True)
class InsertOp:
    id: OpId
    ref: Optional[OpId]  # None anchors at HEAD
    ch: str

    def __post_init__(self):
        if len(self.ch) != 1:
            raise ValueError("insert carries exactly one character")
        if self.id.counter < 1:
            raise ValueError("counter starts at 1")


@dataclass(frozen=True)
class DeleteOp:
    id: OpId
    target: OpId

    def __post_init__(self):
        if self.id.counter < 1:
            raise ValueError("counter starts at 1")


class OutOfRange(IndexError):
    pass


class _Element:
    __slots__ = ("id", "ch", "deleted", "origin")

    def __init__(self, eid: OpId, ch: str, origin):
        self.id = eid
        self.ch = ch
        self.deleted = False
        self.origin = origin


_HEAD = None


class CrdtDoc:
    def __init__(self, node: Name):
        self.node = node
        self.version: dict[Name, int] = {}
        self._elems: dict[OpId, _Element] = {}
        # anchor -> child ids, kept ascending; rendering walks them reversed
        # so greater ids come first.
        self._children: dict[Optional[OpId], list[OpId]] = {_HEAD: []}
        self._pending: list[tuple[object, object]] = []
        self._pending_ids: set[OpId] = set()
        self._order_dirty = True
        self._visible: list[_Element] = []
        self._all_ordered: list[_Element] = []

    # -- local editing -------------------------------------------------------

    def next_counter(self) -> int:
        return self.version.get(self.node, 0) + 1

    def local_insert(self, position: int, text: str, origin=None) -> list[InsertOp]:
        """One chained insert op per character; the first anchors to the
        visible element before position."""
        visible = self._visible_elements()
        if position < 0 or position > len(visible):
            raise OutOfRange(f"position {position} of {len(visible)}")
        if not text:
            return []
        ref = visible[position - 1].id if position > 0 else None
        ops = []
        for ch in text:
            op = InsertOp(OpId(self.next_counter(), self.node), ref, ch)
            applied = self._integrate_insert(op, origin)
            assert applied, "local op must apply immediately"
            ref = op.id
            ops.append(op)
        return ops

    def local_delete(self, position: int, length: int, origin=None) -> list[DeleteOp]:
        visible = self._visible_elements()
        if position < 0 or length < 0 or position + length > len(visible):
            raise OutOfRange(f"range {position}+{length} of {len(visible)}")
        targets = [el.id for el in visible[position : position + length]]
        ops = []
        for target in targets:
            op = DeleteOp(OpId(self.next_counter(), self.node), target)
            applied = self._integrate_delete(op, origin)
            assert applied, "local op must apply immediately"
            ops.append(op)
        return ops

    # -- remote integration ----------------------------------------------------

    def integrate(self, op, origin=None) -> int:
        """Apply op now or buffer it; returns how many ops applied (the op
        itself plus any buffered ops it unblocked)."""
        applied = self._try_apply(op, origin)
        if not applied:
            return 0
        return 1 + self._drain_pending()

    def _drain_pending(self) -> int:
        applied = 0
        progress = True
        while progress:
            progress = False
            for op, origin in list(self._pending):
                if self._try_apply(op, origin, from_pending=True):
                    self._pending.remove((op, origin))
                    self._pending_ids.discard(op.id)
                    applied += 1
                    progress = True
                elif op.id.counter <= self.version.get(op.id.node, 0):
                    # superseded replay; never applicable
                    self._pending.remove((op, origin))
                    self._pending_ids.discard(op.id)
        return applied

    def _try_apply(self, op, origin, from_pending: bool = False) -> bool:
        counter, node = op.id
        seen = self.version.get(node, 0)
        if counter <= seen:
            return False  # replay; already applied
        ready = counter == seen + 1
        if isinstance(op, InsertOp):
            ready = ready and (op.ref is None or op.ref in self._elems)
        else:
            ready = ready and op.target in self._elems
        if not ready:
            if not from_pending and op.id not in self._pending_ids:
                self._pending.append((op, origin))
                self._pending_ids.add(op.id)
            return False
        if isinstance(op, InsertOp):
            self._place(op, origin)
        else:
            self._elems[op.target].deleted = True
        self.version[node] = counter
        self._order_dirty = True
        return True

    def _integrate_insert(self, op: InsertOp, origin) -> bool:
        return self._try_apply(op, origin)

    def _integrate_delete(self, op: DeleteOp, origin) -> bool:
        return self._try_apply(op, origin)

    def _place(self, op: InsertOp, origin) -> None:
        self._elems[op.id] = _Element(op.id, op.ch, origin)
        self._children[op.id] = []
        insort(self._children.setdefault(op.ref, []), op.id)

    # -- views -------------------------------------------------------------

    def _rebuild(self) -> None:
        children = self._children
        elems = self._elems
        order: list[_Element] = []
        # Iterative DFS; children lists are ascending, so push in given order
        # and pop the greatest first.
        stack: list[OpId] = list(children[_HEAD])
        while stack:
            eid = stack.pop()
            order.append(elems[eid])
            kids = children.get(eid)
            if kids:
                stack.extend(kids)
        self._all_ordered = order
        self._visible = [el for el in order if not el.deleted]
        self._order_dirty = False

    def _visible_elements(self) -> list[_Element]:
        if self._order_dirty:
            self._rebuild()
        return self._visible

    def elements(self) -> list[tuple[OpId, str, bool]]:
        """Full element order including tombstones."""
        if self._order_dirty:
            self._rebuild()
        return [(el.id, el.ch, el.deleted) for el in self._all_ordered]

    def text(self) -> str:
        return "".join(el.ch for el in self._visible_elements())

    def snapshot(self) -> tuple[str, list[tuple[int, int, object]]]:
        """Visible text plus provenance runs (start, end, origin)."""
        visible = self._visible_elements()
        runs: list[tuple[int, int, object]] = []
        for i, el in enumerate(visible):
            if runs and runs[-1][2] == el.origin and runs[-1][1] == i:
                runs[-1] = (runs[-1][0], i + 1, el.origin)
            else:
                runs.append((i, i + 1, el.origin))
        return "".join(el.ch for el in visible), runs

    def pending_count(self) -> int:
        return len(self._pending)
