"""Bubble graphs, the two-generator group acting on them, and the
permutational wreath walk whose lamps are updated along the inverted orbit.

Construction: a rooted binary tree with forward degrees (1, 2, 2, ...) has
each level-k edge replaced by a cycle of length 2*alpha_k (a "bubble") and
each level-k vertex blown up to a 3-cycle (a "branching cycle"); vertices
on a bubble only carry a self loop for the second generator.  Generator
``a`` rotates bubbles, ``b`` rotates branching cycles.

Resistance conventions: unit conductance per a-edge.  The closed-form
resistance to a level set treats branching cycles as single nodes, and the
harmonic solver contracts them accordingly (the variant with unit b-edges
is also available; it disagrees with the closed form by the bounded
triangle contribution and is reported as a diagnostic).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    GrwalkError,
    OutOfRangeError,
    TruncationError,
    UsageError,
)
from .groups import Group, _pack_int, _unpack_int
from .rng import stream

__all__ = [
    "ScalingSequence",
    "BubbleGraph",
    "build_graph",
    "BubbleWreath",
    "effective_resistance",
    "effective_resistance_numeric",
    "hitting_probability_mc",
    "recurrence_check",
    "OrbitStats",
    "wreath_walk",
    "entropy_lower_bound",
    "wilson_lower",
    "ball_volume",
    "exponent_report",
    "return_time_tail",
    "level_set_radius",
]


@dataclass(frozen=True)
class ScalingSequence:
    """Bubble half-lengths alpha_1..alpha_L, explicit or geometric 2^(theta k)."""

    alphas: tuple
    theta: float | None = None

    def __post_init__(self):
        if len(self.alphas) < 1:
            raise UsageError("need at least one bubble level")
        if any(a < 2 for a in self.alphas):
            raise UsageError("all alpha_k must be >= 2")

    @classmethod
    def explicit(cls, alphas):
        return cls(tuple(int(a) for a in alphas))

    @classmethod
    def geometric(cls, theta: float, length: int):
        if theta <= 1:
            raise UsageError("geometric sequences need theta > 1")
        alphas = tuple(round(2 ** (theta * k)) for k in range(1, length + 1))
        return cls(alphas, theta)

    @property
    def levels(self) -> int:
        return len(self.alphas)

    def with_levels(self, L: int) -> "ScalingSequence":
        if L <= self.levels:
            return self
        if self.theta is None:
            raise TruncationError(
                f"explicit sequence of length {self.levels} cannot cover {L} levels"
            )
        return ScalingSequence.geometric(self.theta, L)

    def ratio_inf(self) -> float:
        return min(b / a for a, b in zip(self.alphas, self.alphas[1:])) \
            if self.levels > 1 else math.inf

    def describe(self) -> str:
        if self.theta is not None:
            return f"geometric(theta={self.theta},L={self.levels})"
        return "explicit(" + ",".join(map(str, self.alphas)) + ")"


def level_set_radius(seq: ScalingSequence, k: int, ell: int) -> int:
    """Graph distance of the level set indexed by (k, ell) from the root."""
    return ell + sum(seq.alphas[:k]) + k


class BubbleGraph:
    """Truncated bubble graph with complete generator action tables."""

    def __init__(self, seq: ScalingSequence):
        self.seq = seq
        alphas = seq.alphas
        L = seq.levels
        level, kind = [], []  # kind: 0 bubble-only, 1 branching
        a_next: list[int] = []
        triangles: list[tuple] = []
        boundary: list[int] = []

        def new_vertex(lvl):
            level.append(lvl)
            kind.append(0)
            a_next.append(-1)
            return len(level) - 1

        o = new_vertex(1)
        stack = [(1, o)]
        while stack:
            k, attach = stack.pop()
            alpha = alphas[k - 1]
            ring = [attach] + [new_vertex(k) for _ in range(2 * alpha - 1)]
            for i in range(2 * alpha):
                a_next[ring[i]] = ring[(i + 1) % (2 * alpha)]
            antipode = ring[alpha]
            if k < L:
                u1 = new_vertex(k + 1)
                u2 = new_vertex(k + 1)
                triangles.append((antipode, u1, u2))
                kind[antipode] = kind[u1] = kind[u2] = 1
                stack.append((k + 1, u2))
                stack.append((k + 1, u1))
            else:
                boundary.append(antipode)

        n = len(level)
        self.n_vertices = n
        self.root = o
        self.level = np.asarray(level, dtype=np.int16)
        self.kind = np.asarray(kind, dtype=np.int8)
        self.a_next = np.asarray(a_next, dtype=np.int32)
        self.a_prev = np.empty(n, dtype=np.int32)
        self.a_prev[self.a_next] = np.arange(n, dtype=np.int32)
        b_next = np.arange(n, dtype=np.int32)
        for w, u1, u2 in triangles:
            b_next[w], b_next[u1], b_next[u2] = u1, u2, w
        self.b_next = b_next
        self.b_prev = np.empty(n, dtype=np.int32)
        self.b_prev[self.b_next] = np.arange(n, dtype=np.int32)
        self.triangles = triangles
        self.is_boundary = np.zeros(n, dtype=bool)
        self.is_boundary[boundary] = True
        self._dist = None
        self._contract = None

    # generator action tables: order [a, a^-1, b, b^-1]
    def forward_tables(self) -> np.ndarray:
        return np.stack([self.a_next, self.a_prev, self.b_next, self.b_prev])

    def inverse_tables(self) -> np.ndarray:
        return np.stack([self.a_prev, self.a_next, self.b_prev, self.b_next])

    @property
    def dist(self) -> np.ndarray:
        """BFS distance from the root (all four moves, self loops inert)."""
        if self._dist is None:
            n = self.n_vertices
            dist = np.full(n, -1, dtype=np.int32)
            dist[self.root] = 0
            frontier = np.array([self.root], dtype=np.int32)
            tables = self.forward_tables()
            d = 0
            while frontier.size:
                d += 1
                nxt = np.unique(tables[:, frontier])
                nxt = nxt[dist[nxt] < 0]
                dist[nxt] = d
                frontier = nxt
            self._dist = dist
        return self._dist

    def level_set(self, r: int) -> np.ndarray:
        return np.flatnonzero(self.dist == r)

    def max_valid_radius(self) -> int:
        """Largest radius whose ball equals the untruncated graph's ball."""
        return int(self.dist[self.is_boundary].min())

    def contracted(self):
        """Node relabeling with branching cycles merged to single nodes."""
        if self._contract is None:
            n = self.n_vertices
            cn = np.arange(n, dtype=np.int32)
            for w, u1, u2 in self.triangles:
                m = min(w, u1, u2)
                cn[w] = cn[u1] = cn[u2] = m
            uniq, cn = np.unique(cn, return_inverse=True)
            self._contract = (cn.astype(np.int32), len(uniq))
        return self._contract

    def export_rows(self):
        kinds = {0: "bubble", 1: "branching"}
        for v in range(self.n_vertices):
            yield {
                "vertex": v,
                "level": int(self.level[v]),
                "kind": kinds[int(self.kind[v])],
                "a_target": int(self.a_next[v]),
                "b_target": int(self.b_next[v]),
            }


def build_graph(seq: ScalingSequence) -> BubbleGraph:
    return BubbleGraph(seq)


class BubbleWreath(Group):
    """Integer lamps over the bubble graph, permuted by the acting group.

    Elements are (lamps, perm) with ``lamps`` a sorted tuple of
    (vertex, value) and ``perm`` the action table of the permutation part
    on the truncated vertex set.  Equality is equality of both parts; the
    truncation must be deep enough for the words in play (validated
    empirically in the tests, see README).  Only small truncations are
    meant to be materialized this way; the walk machinery below never
    builds elements.
    """

    family = "bubble"

    def __init__(self, seq: ScalingSequence):
        self.seq = seq
        self.graph = build_graph(seq)
        self._id_perm = tuple(range(self.graph.n_vertices))
        g = self.graph
        self._gen_perms = {
            "a": tuple(int(x) for x in g.a_next),
            "A": tuple(int(x) for x in g.a_prev),
            "b": tuple(int(x) for x in g.b_next),
            "B": tuple(int(x) for x in g.b_prev),
        }

    def identity(self):
        return ((), self._id_perm)

    def multiply(self, x, y):
        lamps_x, perm_x = x
        lamps_y, perm_y = y
        if lamps_y:
            acc = dict(lamps_x)
            for site, val in lamps_y:
                s = perm_x[site]
                v = acc.get(s, 0) + val
                if v:
                    acc[s] = v
                else:
                    del acc[s]
            lamps = tuple(sorted(acc.items()))
        else:
            lamps = lamps_x
        if perm_y == self._id_perm:
            perm = perm_x
        else:
            perm = tuple(perm_x[p] for p in perm_y)
        return (lamps, perm)

    def inverse(self, x):
        lamps, perm = x
        inv_perm = [0] * len(perm)
        for i, p in enumerate(perm):
            inv_perm[p] = i
        inv_lamps = tuple(sorted((inv_perm[s], -v) for s, v in lamps))
        return (inv_lamps, tuple(inv_perm))

    def lamp_element(self, value: int):
        if value == 0:
            return self.identity()
        return (((self.graph.root, value),), self._id_perm)

    def base_element(self, label: str):
        try:
            return ((), self._gen_perms[label])
        except KeyError:
            raise UsageError(f"unknown generator label {label!r}") from None

    def generators(self):
        return [self.base_element(l) for l in ("a", "A", "b", "B")] + [
            self.lamp_element(1),
            self.lamp_element(-1),
        ]

    def generator_labels(self):
        return ["a", "a-", "b", "b-", "s+", "s-"]

    def describe(self):
        return f"bubble({self.seq.describe()})"

    def encode_element(self, g):
        lamps, perm = g
        out = [np.asarray(perm, dtype=np.int32).tobytes()]
        out.append(_pack_int(len(lamps)))
        for s, v in lamps:
            out.append(_pack_int(s))
            out.append(_pack_int(v))
        return b"".join(out)

    def decode_element(self, buf):
        n = self.graph.n_vertices
        mv = memoryview(buf)
        perm = tuple(int(x) for x in np.frombuffer(mv[: 4 * n], dtype=np.int32))
        off = 4 * n
        cnt, off = _unpack_int(mv, off)
        lamps = []
        for _ in range(cnt):
            s, off = _unpack_int(mv, off)
            v, off = _unpack_int(mv, off)
            lamps.append((s, v))
        return (tuple(lamps), perm)


# ---------------------------------------------------------------------------
# Effective resistance
# ---------------------------------------------------------------------------

def effective_resistance(seq: ScalingSequence, k: int, ell: int) -> float:
    """Closed-form resistance from the root to the level set (k, ell).

    The set sits ell edges into the level-(k+1) bubbles (0 <= ell <=
    alpha_(k+1)); branching cycles count as single nodes.
    """
    if k < 0 or ell < 0:
        raise OutOfRangeError("need k >= 0 and ell >= 0")
    if k == 0 and ell == 0:
        return 0.0
    if k > seq.levels - 1:
        raise OutOfRangeError(f"level {k} beyond truncation {seq.levels}")
    if ell > 0 and ell > seq.alphas[k]:
        raise OutOfRangeError(f"ell={ell} exceeds alpha_{k+1}={seq.alphas[k]}")
    return 2.0 ** (-k - 1) * ell + sum(
        2.0 ** (-j) * seq.alphas[j - 1] for j in range(1, k + 1)
    )


def _component_solve(adj_rows, adj_cols, n_nodes, source, grounded_mask):
    """Potential at the source injecting unit current, ground at 0."""
    adj = sp.csr_matrix(
        (np.ones(len(adj_rows)), (adj_rows, adj_cols)), shape=(n_nodes, n_nodes)
    )
    adj = adj + adj.T
    # component of the source avoiding grounded nodes
    seen = np.zeros(n_nodes, dtype=bool)
    seen[source] = True
    frontier = [source]
    while frontier:
        nxt = []
        for v in frontier:
            for w in adj.indices[adj.indptr[v] : adj.indptr[v + 1]]:
                if not seen[w]:
                    seen[w] = True
                    if not grounded_mask[w]:
                        nxt.append(w)
        frontier = nxt
    live = np.flatnonzero(seen & ~grounded_mask)
    if grounded_mask[source]:
        return 0.0
    if not (seen & grounded_mask).any():
        raise GrwalkError("level set not reachable from the root")
    sub = adj[np.ix_(live, live)]
    deg = np.asarray(adj.sum(axis=1)).ravel()[live]
    lap = sp.diags(deg) - sub
    rhs = np.zeros(len(live))
    idx = {v: i for i, v in enumerate(live)}
    rhs[idx[source]] = 1.0
    x = spla.spsolve(lap.tocsc(), rhs)
    return float(x[idx[source]])


def effective_resistance_numeric(
    graph: BubbleGraph, k: int, ell: int, convention: str = "contracted"
) -> float:
    """Resistance by solving the current-flow equations on the built graph.

    ``contracted`` merges branching cycles (matches the closed form);
    ``unit-b`` keeps unit conductance on the 3-cycle edges (diagnostic).
    Self loops never carry current.
    """
    r = level_set_radius(graph.seq, k, ell)
    if k == 0 and ell == 0:
        return 0.0
    sr = graph.level_set(r)
    if sr.size == 0:
        raise OutOfRangeError(f"no vertices at distance {r}; beyond truncation")
    n = graph.n_vertices
    arange = np.arange(n, dtype=np.int64)
    if convention == "contracted":
        cn, n_nodes = graph.contracted()
        rows, cols = cn[arange], cn[graph.a_next]
        grounded = np.zeros(n_nodes, dtype=bool)
        grounded[cn[sr]] = True
        return _component_solve(rows, cols, n_nodes, int(cn[graph.root]), grounded)
    if convention == "unit-b":
        rows = np.concatenate([arange, arange[graph.b_next != arange]])
        cols = np.concatenate(
            [graph.a_next.astype(np.int64), graph.b_next[graph.b_next != arange]]
        )
        grounded = np.zeros(n, dtype=bool)
        grounded[sr] = True
        return _component_solve(rows, cols, n, graph.root, grounded)
    raise UsageError(f"unknown convention {convention!r}")


def hitting_probability_mc(
    graph: BubbleGraph, k: int, ell: int, samples: int, seed: int,
    chunk: int = 65536, max_rounds: int = 10_000_000,
) -> dict:
    """Monte Carlo escape probability of the resistance-network chain.

    The chain walks the contracted network (uniform over incident a-edges,
    branching cycles merged, self loops dropped); its probability of
    hitting the level set (k, ell) before returning to the root is exactly
    1/(2 R), the quantity the closed-form resistance certifies.  The
    literal induced chain (laziness, triangle edges) is reported separately
    by :func:`wreath_walk`.
    """
    r = level_set_radius(graph.seq, k, ell)
    sr = graph.level_set(r)
    if sr.size == 0:
        raise OutOfRangeError(f"no vertices at distance {r}")
    cn, n_nodes = graph.contracted()
    # neighbor table over contracted nodes (a-edges only)
    ends = np.stack([cn[np.arange(graph.n_vertices)], cn[graph.a_next]])
    order = np.lexsort((ends[1], ends[0]))
    nbrs_of = [[] for _ in range(n_nodes)]
    for e in order:
        u, v = int(ends[0, e]), int(ends[1, e])
        nbrs_of[u].append(v)
        nbrs_of[v].append(u)
    deg = np.array([len(x) for x in nbrs_of], dtype=np.int32)
    maxdeg = int(deg.max())
    nbr = np.zeros((n_nodes, maxdeg), dtype=np.int32)
    for u, lst in enumerate(nbrs_of):
        nbr[u, : len(lst)] = lst
    target = np.zeros(n_nodes, dtype=bool)
    target[cn[sr]] = True
    root = int(cn[graph.root])
    if target[root]:
        raise UsageError("level set contains the root")

    hits = 0
    done_total = 0
    idx = 0
    while done_total < samples:
        m = min(chunk, samples - done_total)
        rng = stream(seed, idx)
        idx += 1
        pos = np.full(m, root, dtype=np.int32)
        active = np.ones(m, dtype=bool)
        rounds = 0
        while active.any():
            rounds += 1
            if rounds > max_rounds:
                raise GrwalkError("hitting walk failed to absorb")
            act = np.flatnonzero(active)
            p = pos[act]
            choice = rng.integers(0, deg[p])
            p = nbr[p, choice]
            pos[act] = p
            hit = target[p]
            back = p == root
            hits += int(hit.sum())
            active[act[hit | back]] = False
        done_total += m
    p_hat = hits / samples
    se = math.sqrt(max(p_hat * (1 - p_hat), 1e-300) / samples)
    return {"k": k, "ell": ell, "radius": r, "p_hat": p_hat, "se": se,
            "samples": samples}


def recurrence_check(seq: ScalingSequence, K: int | None = None) -> dict:
    """Partial sums of alpha_k / 2^k and the growth class of the tail.

    The underlying graph is recurrent exactly when the series diverges.
    For geometric sequences the class follows from theta (terms scale like
    2^((theta-1) k)); explicit lists get a fitted log-slope of the terms.
    """
    K = seq.levels if K is None else K
    if K > seq.levels:
        raise OutOfRangeError(f"K={K} beyond declared length {seq.levels}")
    terms = [seq.alphas[k - 1] / 2.0**k for k in range(1, K + 1)]
    partial = np.cumsum(terms)
    if seq.theta is not None:
        divergent = seq.theta >= 1.0
        method = f"closed form: terms ~ 2^(({seq.theta}-1) k)"
    else:
        ks = np.arange(1, K + 1, dtype=float)
        slope = np.polyfit(ks, np.log(terms), 1)[0] if K >= 2 else 0.0
        divergent = slope >= -1e-9
        method = f"fitted log-slope {slope:.4f}"
    return {
        "terms": terms,
        "partial_sums": list(partial),
        "divergent": bool(divergent),
        "verdict": "recurrent" if divergent else "transient",
        "method": method,
    }


# ---------------------------------------------------------------------------
# The wreath walk: induced chain plus the inverted orbit
# ---------------------------------------------------------------------------

@dataclass
class OrbitStats:
    """Ensemble statistics of the switch-walk-switch wreath walk."""

    seq_desc: str
    n: int
    samples: int
    seed: int
    levels: int
    grid: list
    sum_log_q: np.ndarray        # samples x len(grid)
    distinct: np.ndarray         # samples x len(grid)
    t_exceeds: np.ndarray        # samples x len(grid): T > m indicator
    return_time: np.ndarray      # samples; n+1 encodes T > n
    hit_records: list = field(default_factory=list)
    lamp_support: np.ndarray | None = None
    lamp_max_abs: np.ndarray | None = None
    q_example: dict | None = None

    def p_t_greater(self, j: int) -> tuple[float, float]:
        col = self.t_exceeds[:, j]
        p = float(col.mean())
        se = math.sqrt(max(p * (1 - p), 1e-300) / len(col))
        return p, se


def _orbit_sweep(fwd: np.ndarray, letters: np.ndarray, root: int) -> np.ndarray:
    """Positions of the inverted orbit for every prefix of every word.

    Row-sweeps the triangular family (X_i ... X_j) applied to the root:
    after sweeping i = n..1, column j holds X_1 ... X_j acting on the root.
    """
    m, n = letters.shape
    R = np.full((m, n + 1), root, dtype=np.int32)
    for i in range(n, 0, -1):
        R[:, i:] = fwd[letters[:, i - 1][:, None], R[:, i:]]
    return R


def wreath_walk(
    seq: ScalingSequence,
    n: int,
    samples: int,
    seed: int,
    grid=None,
    hit_radii=None,
    want_lamps: bool = False,
    chunk: int = 512,
    validate_coupling: bool = True,
) -> OrbitStats:
    """Sample the wreath walk: per-sample inverted orbit, its occupation
    counts, first return time of the induced chain, and level-set hits.

    The truncation is deepened automatically (geometric sequences) until
    the distance budget sum(alpha_j + 1) exceeds n; touching a truncation
    boundary vertex raises :class:`TruncationError`.
    """
    work_seq = seq
    while sum(work_seq.alphas) + work_seq.levels <= n:
        work_seq = work_seq.with_levels(work_seq.levels + 1)
    graph = build_graph(work_seq)
    fwd = graph.forward_tables()
    inv = graph.inverse_tables()
    root = graph.root
    grid = sorted(set(grid or [n]))
    if grid[-1] > n:
        raise UsageError("grid entries must be <= n")
    hit_radii = list(hit_radii or [])
    dist = graph.dist if hit_radii else None
    boundary = graph.is_boundary

    n_grid = len(grid)
    sum_log_q = np.zeros((samples, n_grid))
    distinct = np.zeros((samples, n_grid), dtype=np.int64)
    t_exceeds = np.zeros((samples, n_grid), dtype=bool)
    return_time = np.zeros(samples, dtype=np.int64)
    hit_rows = {r: {"hit_before_return": 0, "hit": 0} for r in hit_radii}
    lamp_support = np.zeros(samples, dtype=np.int64) if want_lamps else None
    lamp_max = np.zeros(samples, dtype=np.int64) if want_lamps else None
    q_example = None

    done = 0
    chunk_idx = 0
    while done < samples:
        m = min(chunk, samples - done)
        rng = stream(seed, chunk_idx)
        letters = rng.integers(0, 4, size=(m, n), dtype=np.uint8)

        # induced chain (pointwise Markov): v <- s^-1 . v
        v = np.full(m, root, dtype=np.int32)
        t_first = np.full(m, n + 1, dtype=np.int64)
        hit_time = {r: np.full(m, n + 1, dtype=np.int64) for r in hit_radii}
        vpath = np.empty((m, n + 1), dtype=np.int32) if validate_coupling else None
        if vpath is not None:
            vpath[:, 0] = root
        touched_boundary = False
        for j in range(1, n + 1):
            v = inv[letters[:, j - 1], v]
            if vpath is not None:
                vpath[:, j] = v
            back = (v == root) & (t_first > n)
            if back.any():
                t_first[back] = j
            for r in hit_radii:
                newly = (dist[v] >= r) & (hit_time[r] > n)
                if newly.any():
                    hit_time[r][newly] = j
            if boundary[v].any():
                touched_boundary = True
        if touched_boundary:
            raise TruncationError(
                "induced chain touched the truncation boundary; deepen levels"
            )

        orbit = _orbit_sweep(fwd, letters, root)
        if boundary[orbit].any():
            raise TruncationError(
                "inverted orbit touched the truncation boundary; deepen levels"
            )
        if validate_coupling:
            # returns of the orbit and of the induced chain coincide pointwise
            if not np.array_equal(orbit == root, vpath == root):
                raise GrwalkError("orbit/induced-chain return sets disagree")
            validate_coupling = False

        sl = slice(done, done + m)
        return_time[sl] = t_first
        for gi, g_n in enumerate(grid):
            t_exceeds[sl, gi] = t_first > g_n
        for r in hit_radii:
            hit_rows[r]["hit"] += int((hit_time[r] <= n).sum())
            hit_rows[r]["hit_before_return"] += int(
                (hit_time[r] < t_first).sum()
            )
        for s in range(m):
            row = orbit[s]
            for gi, g_n in enumerate(grid):
                _, counts = np.unique(row[: g_n + 1], return_counts=True)
                if counts.sum() != g_n + 1:
                    raise GrwalkError("occupation counts lost mass")
                sum_log_q[done + s, gi] = float(np.log1p(counts).sum())
                distinct[done + s, gi] = len(counts)
        if want_lamps:
            z = rng.integers(0, 2, size=(m, 2 * n), dtype=np.int8) * 2 - 1
            w = np.empty((m, n + 1), dtype=np.int64)
            w[:, 0] = z[:, 0]
            if n >= 1:
                w[:, n] = z[:, 2 * n - 1]
            for j in range(1, n):
                w[:, j] = z[:, 2 * j - 1] + z[:, 2 * j]
            for s in range(m):
                verts, inverse = np.unique(orbit[s], return_inverse=True)
                vals = np.zeros(len(verts), dtype=np.int64)
                np.add.at(vals, inverse, w[s])
                lamp_support[done + s] = int(np.count_nonzero(vals))
                lamp_max[done + s] = int(np.abs(vals).max())
        if q_example is None:
            verts, counts = np.unique(orbit[0], return_counts=True)
            q_example = {int(a): int(c) for a, c in zip(verts, counts)}
        done += m
        chunk_idx += 1

    hit_records = [
        {"radius": r, "p_hit_before_return": hit_rows[r]["hit_before_return"] / samples,
         "p_hit": hit_rows[r]["hit"] / samples}
        for r in hit_radii
    ]
    return OrbitStats(
        seq_desc=work_seq.describe(), n=n, samples=samples, seed=seed,
        levels=work_seq.levels, grid=grid, sum_log_q=sum_log_q,
        distinct=distinct, t_exceeds=t_exceeds, return_time=return_time,
        hit_records=hit_records, lamp_support=lamp_support,
        lamp_max_abs=lamp_max, q_example=q_example,
    )


def wilson_lower(successes: int, trials: int, z: float = 1.6449) -> float:
    """One-sided lower confidence bound for a binomial proportion."""
    if trials == 0:
        return 0.0
    p = successes / trials
    denom = 1 + z**2 / trials
    center = p + z**2 / (2 * trials)
    rad = z * math.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2))
    return max(0.0, (center - rad) / denom)


def entropy_lower_bound(stats: OrbitStats, c0: float = 0.5) -> list[dict]:
    """Monte Carlo entropy floor per grid point.

    Reports c0 * E[sum over x of ln(1 + Q_n(x))] with its standard error,
    and the analytic floor n p ln(1 + 1/p)/16 at the lower confidence
    bound for P(T > n); both sides come from the same ensemble.
    """
    rows = []
    for gi, g_n in enumerate(stats.grid):
        col = stats.sum_log_q[:, gi]
        mean = float(col.mean())
        se = float(col.std(ddof=1) / math.sqrt(len(col))) if len(col) > 1 else 0.0
        hits = int(stats.t_exceeds[:, gi].sum())
        p_lo = wilson_lower(hits, stats.samples)
        floor = g_n * p_lo * math.log(1 + 1 / p_lo) / 16.0 if p_lo > 0 else 0.0
        rows.append({
            "n": g_n,
            "estimate": c0 * mean,
            "estimate_se": c0 * se,
            "raw_sum_log_q": mean,
            "raw_se": se,
            "p_t_greater": hits / stats.samples,
            "p_t_lower95": p_lo,
            "floor": floor,
            "floor_times_c0": c0 * floor,
            "holds": mean >= floor,
        })
    return rows


def ball_volume(graph: BubbleGraph, r: int) -> int:
    """Ball size in the graph metric; valid only below the truncation."""
    if r < 0:
        raise UsageError("radius must be >= 0")
    if r > graph.max_valid_radius():
        raise OutOfRangeError(
            f"radius {r} beyond valid truncation radius {graph.max_valid_radius()}"
        )
    return int((graph.dist <= r).sum())


def exponent_report(theta: float, graph: BubbleGraph | None = None,
                    r_max: int | None = None) -> dict:
    """Predicted exponents for geometric scaling 2^(theta k), theta > 1.

    Includes the numeric inverse of r -> r^2 |B(o,r)| ln r from measured
    ball volumes when a graph is supplied, with the fitted log-log slope of
    n / phi(n)^2 (the predicted return exponent is (theta+1)/(3 theta+1)).
    """
    if theta <= 1:
        raise UsageError("exponent predictions need theta > 1")
    out = {
        "theta": theta,
        "beta_return": (theta + 1) / (3 * theta + 1),
        "log_correction": 2 * theta / (3 * theta + 1),
        "entropy_exponent": (theta + 1) / (2 * theta),
    }
    if graph is not None:
        rmax = min(r_max or graph.max_valid_radius(), graph.max_valid_radius())
        rs = np.arange(2, rmax + 1)
        vols = np.array([ball_volume(graph, int(r)) for r in rs], dtype=float)
        g = rs**2 * vols * np.log(rs)
        # phi = g^-1 on the computed range; evaluate on a log grid of n
        ln_g, ln_r = np.log(g), np.log(rs)
        ns = np.exp(np.linspace(ln_g[0], ln_g[-1], 60))
        phi = np.exp(np.interp(np.log(ns), ln_g, ln_r))
        decay = ns / phi**2
        slope = float(np.polyfit(np.log(ns), np.log(decay), 1)[0])
        out["phi_table"] = {"n": ns.tolist(), "phi": phi.tolist()}
        out["ball_volumes"] = {"r": rs.tolist(), "volume": vols.tolist()}
        out["measured_return_exponent"] = slope
        out["r_max"] = int(rmax)
    return out


def return_time_tail(
    seq: ScalingSequence, k: int, ell: int, samples: int, seed: int,
    c_max: float = 4.0, chunk: int = 4096,
) -> dict:
    """Empirical tail of the first return time of the induced chain.

    Reports P(T > n) on a grid up to c_max (alpha_k^2 + ell^2), the
    comparison level 2^k/(16 (alpha_k + ell)), and the largest fitted c
    with P(T > c (alpha_k^2 + ell^2)) above that level.  If the sequence
    violates inf alpha_(k+1)/alpha_k > 2 the diagnostic still runs with a
    warning flag.
    """
    if k < 1 or k > seq.levels:
        raise OutOfRangeError("k must index a bubble level")
    alpha_k = seq.alphas[k - 1]
    scale = alpha_k**2 + ell**2
    n_max = int(math.ceil(c_max * scale))
    work = seq
    while sum(work.alphas) + work.levels <= n_max:
        work = work.with_levels(work.levels + 1)
    graph = build_graph(work)
    inv = graph.inverse_tables()
    root = graph.root
    warn = work.ratio_inf() <= 2.0

    survivors = np.zeros(n_max + 1, dtype=np.int64)
    done = 0
    idx = 0
    while done < samples:
        m = min(chunk, samples - done)
        rng = stream(seed, idx)
        idx += 1
        v = np.full(m, root, dtype=np.int32)
        alive = np.ones(m, dtype=bool)
        survivors[0] += m
        for j in range(1, n_max + 1):
            act = np.flatnonzero(alive)
            if act.size == 0:
                break
            letters = rng.integers(0, 4, size=act.size, dtype=np.uint8)
            v_act = inv[letters, v[act]]
            v[act] = v_act
            alive[act[v_act == root]] = False
            survivors[j] += int(alive.sum())
        done += m
        idx_boundary = graph.is_boundary[v].any()
        if idx_boundary:
            raise TruncationError("return-time walk touched the boundary")
    tail = survivors / samples
    level = 2.0**k / (16.0 * (alpha_k + ell))
    above = np.flatnonzero(tail >= level)
    c_hat = float(above[-1]) / scale if above.size else 0.0
    return {
        "k": k, "ell": ell, "alpha_k": alpha_k, "scale": scale,
        "tail_n": list(range(0, n_max + 1)),
        "tail_p": tail.tolist(),
        "comparison_level": level,
        "c_hat": c_hat,
        "ratio_warning": bool(warn),
        "samples": samples,
    }
