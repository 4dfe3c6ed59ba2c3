"""Turn a predicted tag grid back into entity mentions.

A typed tag triggers a search: THC_y at (i, j) with i >= j, or its
mirror HTC_y at (j, i). The head is column j, the tail is row i. From
the head, a depth-first search follows edges a -> b that carry BOTH
NNC at (a, b) and PNC at (b, a); every path that reaches the tail is
one mention of type y. Contiguous mode (the default) restricts steps to
b = a + 1; discontinuous mode allows any b in (a, tail], never past the
tail. `brute_force_decode` checks the same acceptance rule by plain
enumeration and exists purely to cross-validate the search.
"""

from __future__ import annotations

from itertools import combinations

from .corpus import EntityMention, TagGrid, TagVocabulary


def _triggers(grid: TagGrid, vocab: TagVocabulary):
    """Yield distinct (head, tail, type) triples found in the grid."""
    seen = set()
    for (a, b), tags in grid.cells.items():
        for tag in tags:
            etype = vocab.type_of(tag)
            if etype is None:
                continue
            name = vocab.tag_name(tag)
            if name.startswith("THC_") and a >= b:
                trip = (b, a, etype)
            elif name.startswith("HTC_") and a <= b:
                trip = (a, b, etype)
            else:
                continue
            if trip not in seen:
                seen.add(trip)
                yield trip


def _edge(grid: TagGrid, vocab: TagVocabulary, a: int, b: int) -> bool:
    return grid.has(a, b, vocab.nnc_id) and grid.has(b, a, vocab.pnc_id)


def decode_grid(
    grid: TagGrid, vocab: TagVocabulary, contiguous: bool = True
) -> set[EntityMention]:
    """All entity mentions encoded by a (possibly noisy) predicted grid."""
    found: set[EntityMention] = set()
    for head, tail, etype in _triggers(grid, vocab):
        if head == tail:
            found.add(EntityMention((head,), etype))
            continue
        # Iterative DFS over strictly increasing paths from head to tail.
        stack = [(head,)]
        while stack:
            path = stack.pop()
            a = path[-1]
            nxt = (a + 1,) if contiguous else range(a + 1, tail + 1)
            for b in nxt:
                if b > tail or not _edge(grid, vocab, a, b):
                    continue
                if b == tail:
                    found.add(EntityMention(path + (b,), etype))
                else:
                    stack.append(path + (b,))
    return found


def brute_force_decode(
    grid: TagGrid,
    vocab: TagVocabulary,
    max_len: int | None = None,
    contiguous: bool = True,
) -> set[EntityMention]:
    """Enumerate every candidate index sequence and test the tag rule.

    Exponential in grid size; refuses n > 12. Accepts [c_1..c_m] with
    type y iff THC_y sits at (c_m, c_1) or HTC_y at (c_1, c_m), and every
    consecutive pair carries NNC/PNC (vacuous for m = 1).
    """
    n = grid.n
    if n > 12:
        raise ValueError(f"grid side {n} too large for brute force (max 12)")
    if max_len is None:
        max_len = n

    def candidates():
        if contiguous:
            for i in range(n):
                for j in range(i, min(n, i + max_len)):
                    yield tuple(range(i, j + 1))
        else:
            for m in range(1, max_len + 1):
                yield from combinations(range(n), m)

    found: set[EntityMention] = set()
    for seq in candidates():
        head, tail = seq[0], seq[-1]
        triggered = {
            y
            for y in vocab.entity_types
            if grid.has(tail, head, vocab.thc_id(y)) or grid.has(head, tail, vocab.htc_id(y))
        }
        if not triggered:
            continue
        if all(_edge(grid, vocab, a, b) for a, b in zip(seq, seq[1:])):
            for y in triggered:
                found.add(EntityMention(seq, y))
    return found
