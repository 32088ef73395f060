"""Liveness, density and density amplification over tagged sorted runs.

An entry is *live* at version w, relative to its containing array, when
its version is an ancestor-or-self of w and no other entry in the array
with the same key sits strictly closer to w on the ancestry path.
Tombstones count as live: they carry deletion information for w.

The density of an array A tagged with version set W is, for each w in
W, the fraction of A's entries live at w; the array's density is the
minimum over W. Amplification splits a low-density array into several
dense pieces by extracting version subtrees, duplicating shared
ancestor entries into each piece that needs them.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .model import Entry
from .versions import VersionTree


@dataclass(frozen=True)
class DensityReport:
    per_version: dict[int, tuple[int, float]]  # w -> (live_count, fraction)
    min_density: float
    total: int


def key_groups(entries):
    """Yield (start, end) index ranges of equal-key runs in a sorted list."""
    i, n = 0, len(entries)
    while i < n:
        j = i + 1
        key = entries[i][0]
        while j < n and entries[j][0] == key:
            j += 1
        yield i, j
        i = j


class _ArrayView:
    """Per-array liveness structure shared by density/extract/amplify.

    Splits the array into singleton key groups (histogrammed by version)
    and multi-entry key groups (resolved per query version). Equal-key
    entries are contiguous in any sorted run, so one pass suffices.
    """

    def __init__(self, entries, tree: VersionTree):
        self.entries = entries
        self.tree = tree
        self.version_hist: dict[int, int] = {}
        self.multi_groups: list[tuple[int, int, tuple[int, ...]]] = []
        self._live_memo: dict[int, int] = {}
        hist = self.version_hist
        for start, end in key_groups(entries):
            if end - start == 1:
                v = entries[start][1]
                hist[v] = hist.get(v, 0) + 1
            else:
                self.multi_groups.append(
                    (start, end, tuple(e[1] for e in entries[start:end]))
                )

    def live_count(self, w: int) -> int:
        """Number of entries live at w."""
        cached = self._live_memo.get(w)
        if cached is not None:
            return cached
        anc = self.tree.ancestor_set(w)
        hist = self.version_hist
        count = sum(n for v, n in hist.items() if v in anc)
        for _, _, versions in self.multi_groups:
            if any(v in anc for v in versions):
                count += 1
        self._live_memo[w] = count
        return count

    def winner_index(self, group: tuple[int, int, tuple[int, ...]], w: int) -> int | None:
        """Index (into entries) of the group's live entry at w, if any.

        Versions within a key group are ascending; the live entry is the
        one whose version lies deepest on w's ancestry path.
        """
        path = self.tree.path(w)
        start, _, versions = group
        present = set(versions)
        for u in path:  # path runs from w toward the root: deepest first
            if u in present:
                return start + versions.index(u)
        return None

    def live_index_set(self, targets) -> set[int]:
        """Indices of entries live at some version in ``targets``."""
        tree = self.tree
        union_anc = frozenset().union(*(tree.ancestor_set(w) for w in targets))
        keep: set[int] = set()
        entries = self.entries
        multi_spans = [(s, e) for s, e, _ in self.multi_groups]
        span_starts = {s for s, _ in multi_spans}
        span_members: set[int] = set()
        for s, e in multi_spans:
            span_members.update(range(s, e))
        for i, entry in enumerate(entries):
            if i in span_members:
                continue
            if entry[1] in union_anc:
                keep.add(i)
        for group in self.multi_groups:
            for w in targets:
                idx = self.winner_index(group, w)
                if idx is not None:
                    keep.add(idx)
        return keep

    def extract_size(self, targets) -> int:
        """len(extract(A, targets)) without materializing the piece."""
        tree = self.tree
        union_anc = frozenset().union(*(tree.ancestor_set(w) for w in targets))
        hist = self.version_hist
        size = sum(n for v, n in hist.items() if v in union_anc)
        for group in self.multi_groups:
            winners = {self.winner_index(group, w) for w in targets}
            winners.discard(None)
            size += len(winners)
        return size


def is_live(entry: Entry, w: int, entries, tree: VersionTree) -> bool:
    """Liveness of one entry at version w, relative to the sorted run."""
    anc = tree.ancestor_set(w)
    if entry[1] not in anc:
        return False
    # another entry with the same key strictly closer to w shadows it
    for u in tree.path(w):
        if u == entry[1]:
            return True
        for other in entries:
            if other[0] == entry[0] and other[1] == u:
                return False
    return False


def density(entries, tag, tree: VersionTree) -> DensityReport:
    """Per-version live counts and the minimum density over the tag."""
    if not entries:
        raise ValueError("density is undefined for an empty array")
    view = _ArrayView(entries, tree)
    total = len(entries)
    per_version: dict[int, tuple[int, float]] = {}
    min_density = 1.0
    for w in sorted(tag):
        live = view.live_count(w)
        frac = live / total
        per_version[w] = (live, frac)
        if frac < min_density:
            min_density = frac
    return DensityReport(per_version=per_version, min_density=min_density, total=total)


def extract(entries, targets, tree: VersionTree) -> list[Entry]:
    """Entries live at some version in ``targets``, in entry order.

    The input is never mutated; the result may duplicate entries that
    other extracts over sibling subtrees also claim.
    """
    if not targets:
        raise ValueError("extract requires a non-empty version set")
    view = _ArrayView(entries, tree)
    keep = view.live_index_set(targets)
    return [entries[i] for i in sorted(keep)]


def _forest_roots(members: frozenset[int], tree: VersionTree) -> list[int]:
    """Members with no strict ancestor inside the set, ascending by id."""
    roots = []
    for w in members:
        parent = tree.parent(w)
        if parent is None or tree.closest_ancestor_in(parent, members) is None:
            roots.append(w)
    roots.sort()
    return roots


def _dense_enough(view: _ArrayView, targets, delta_min: Fraction) -> bool:
    """Would extract(A, targets) meet the density floor for every target?

    Liveness at w inside the extracted piece equals liveness inside the
    parent array (a shadowing entry live at w is itself extracted), so
    the check needs only the parent-array live counts and the piece size.
    """
    size = view.extract_size(targets)
    if size == 0:
        return False
    num, den = delta_min.numerator, delta_min.denominator
    return all(view.live_count(w) * den >= num * size for w in targets)


def _choose_dense_subset(view: _ArrayView, members: frozenset[int], delta_min: Fraction) -> frozenset[int]:
    """Pick the next version subset to extract into a dense piece.

    Preference order: an amalgamated group of sibling subtrees, then a
    single root subtree, then (recursively) subsets of the first root's
    subtree. A singleton bottoms out the recursion: its extract contains
    only entries live at that version, so its density is exactly 1.
    """
    tree = view.tree
    roots = _forest_roots(members, tree)
    by_parent: dict[int | None, list[int]] = {}
    for v in roots:
        by_parent.setdefault(tree.parent(v), []).append(v)
    sibling_groups = [by_parent[p] for p in sorted(by_parent, key=lambda x: (x is None, x))]

    for group in sibling_groups:
        union: set[int] = set()
        for v in group:
            union |= tree.subtree_members(v, members)
        candidate = frozenset(union)
        if _dense_enough(view, candidate, delta_min):
            return candidate
    for v in roots:
        candidate = frozenset(tree.subtree_members(v, members))
        if _dense_enough(view, candidate, delta_min):
            return candidate
    v0 = roots[0]
    sub = frozenset(tree.subtree_members(v0, members) - {v0})
    if sub:
        return _choose_dense_subset(view, sub, delta_min)
    return frozenset((v0,))


def _flagged(entries, owned: frozenset[int]) -> list[Entry]:
    """Mark entries whose version the piece does not own as shadow copies.

    The mark is sticky: once an entry travels as an extraction copy it
    can never again be mistaken for the authoritative lineage of its
    (key, version), even if a later merge's tag covers that version.
    """
    out = []
    for e in entries:
        if not e[3] and e[1] not in owned:
            out.append(e._replace(shadow=True))
        else:
            out.append(e)
    return out


def amplify(entries, tag, tree: VersionTree, delta_min: Fraction) -> list[tuple[list[Entry], frozenset[int]]]:
    """Split (entries, tag) into dense pieces (A_i, W_i).

    The W_i partition the surviving tag (versions with no live entry are
    dropped); each A_i is extract(entries, W_i) and meets the density
    floor, with entries duplicated into pieces not owning their version
    marked as shadow copies. A tag that is already dense comes back as
    the single piece (entries, tag). Deterministic for fixed inputs.
    """
    if not entries:
        return []
    view = _ArrayView(entries, tree)
    members = frozenset(w for w in tag if view.live_count(w) > 0)
    if not members:
        return []

    num, den = delta_min.numerator, delta_min.denominator
    total = len(entries)
    if all(view.live_count(w) * den >= num * total for w in members):
        return [(_flagged(entries, members), members)]

    pieces: list[tuple[list[Entry], frozenset[int]]] = []
    remaining = members
    while remaining:
        subset = _choose_dense_subset(view, remaining, delta_min)
        piece = [entries[i] for i in sorted(view.live_index_set(subset))]
        pieces.append((_flagged(piece, subset), subset))
        remaining = remaining - subset
    return pieces
