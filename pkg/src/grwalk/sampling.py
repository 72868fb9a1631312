"""Monte Carlo path sampling with reproducible seeded sub-streams.

Vectorized engines cover the lattice families and the lamplighter over a
line (where word lengths follow the validated traversal formula); a
generic element-by-element engine backs every family at oracle scale.
Chunks draw from independent Philox sub-streams of fixed size, so results
are bit-identical no matter how chunks are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .groups import BallCache, Group, Lamplighter, ZPow
from .rng import stream
from .walk import StepMeasure

CHUNK = 20_000

__all__ = ["PathStats", "sample_paths"]


@dataclass
class PathStats:
    """Displacement statistics over sampled paths."""

    group_desc: str
    n: int
    count: int
    seed: int
    engine: str
    alphas: tuple
    mean_final: float
    se_final: float
    mean_max_pow: dict
    se_max_pow: dict
    exit_prob: float | None = None
    exit_se: float | None = None
    notes: list = field(default_factory=list)


def _finalize(group, n, count, seed, engine, alphas, finals, maxpows,
              exits=None, notes=()):
    finals = np.concatenate(finals)
    mean_final = float(finals.mean())
    se_final = float(finals.std(ddof=1) / math.sqrt(count)) if count > 1 else 0.0
    mean_max, se_max = {}, {}
    for a in alphas:
        arr = np.concatenate(maxpows[a])
        mean_max[a] = float(arr.mean())
        se_max[a] = float(arr.std(ddof=1) / math.sqrt(count)) if count > 1 else 0.0
    exit_prob = exit_se = None
    if exits is not None:
        arr = np.concatenate(exits)
        exit_prob = float(arr.mean())
        exit_se = float(arr.std(ddof=1) / math.sqrt(count)) if count > 1 else 0.0
    return PathStats(group.describe(), n, count, seed, engine, tuple(alphas),
                     mean_final, se_final, mean_max, se_max, exit_prob,
                     exit_se, list(notes))


def sample_paths(
    group: Group,
    step: StepMeasure,
    n: int,
    count: int,
    seed: int,
    alphas=(1.0,),
    exit_set: set | None = None,
    metric_cache: BallCache | None = None,
    chunk: int = CHUNK,
) -> PathStats:
    """Estimate E|W_n|, E max_k |W_k|^alpha and optional exit events.

    ``exit_set`` triggers tracking of {exists k <= n : W_k outside the set}
    (generic engine only).  A fixed seed gives bit-identical statistics.
    """
    if count < 1 or n < 0:
        raise UsageError("need count >= 1 and n >= 0")
    if n == 0:
        zeros = {a: [np.zeros(count)] for a in alphas}
        return _finalize(group, 0, count, seed, "degenerate", alphas,
                         [np.zeros(count)], zeros,
                         [np.zeros(count)] if exit_set is not None else None)
    if exit_set is None and isinstance(group, ZPow):
        return _sample_lattice(group, step, n, count, seed, alphas, chunk)
    if (exit_set is None and isinstance(group, Lamplighter) and group.d == 1):
        return _sample_lamplighter_line(group, step, n, count, seed, alphas, chunk)
    return _sample_generic(group, step, n, count, seed, alphas, exit_set,
                           metric_cache, chunk)


def _step_arrays(step: StepMeasure):
    elems = list(step.probs.keys())
    probs = np.array([step.probs[e] for e in elems])
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    return elems, cum


def _draw_indices(rng, cum, size):
    u = rng.random(size)
    return np.searchsorted(cum, u, side="right")


def _sample_lattice(group: ZPow, step, n, count, seed, alphas, chunk):
    """Incremental positions; word length is the L1 norm (closed form for
    the standard generators, BFS-validated)."""
    elems, cum = _step_arrays(step)
    d = group.d
    offsets = np.array([(e,) if d == 1 else e for e in elems], dtype=np.int64)
    finals, maxpows = [], {a: [] for a in alphas}
    done, ci = 0, 0
    while done < count:
        m = min(chunk, count - done)
        rng = stream(seed, ci)
        ci += 1
        idx_all = _draw_indices(rng, cum, (m, n)).astype(np.int16)
        pos = np.zeros((m, d), dtype=np.int64)
        best_max = {a: np.zeros(m) for a in alphas}
        norm = np.zeros(m)
        for j in range(n):
            pos += offsets[idx_all[:, j]]
            norm = np.abs(pos).sum(axis=1).astype(float)
            for a in alphas:
                np.maximum(best_max[a], norm**a, out=best_max[a])
        finals.append(norm)
        for a in alphas:
            maxpows[a].append(best_max[a])
        done += m
    return _finalize(group, n, count, seed, "lattice", alphas, finals, maxpows)


def _sample_lamplighter_line(group: Lamplighter, step, n, count, seed,
                             alphas, chunk):
    """Lamp grid over a line base; word lengths from the traversal formula.

    Support extremes are maintained incrementally; a toggle that clears a
    lamp at the current minimum or maximum triggers a rescan of those rows.
    """
    elems, cum = _step_arrays(step)
    # per step element: fixed-width edit table (site offset, delta, active)
    max_edits = max((len(lamps) for lamps, _ in elems), default=0)
    n_elems = len(elems)
    edit_site = np.zeros((n_elems, max_edits), dtype=np.int64)
    edit_delta = np.zeros((n_elems, max_edits), dtype=np.int64)
    edit_mask = np.zeros((n_elems, max_edits), dtype=bool)
    moves = np.zeros(n_elems, dtype=np.int64)
    for i, (lamps, pos) in enumerate(elems):
        moves[i] = pos
        for e, (s, v) in enumerate(lamps):
            edit_site[i, e], edit_delta[i, e], edit_mask[i, e] = s, v, True
    reach = int(np.abs(moves).max()) if n_elems else 1
    width = n * max(reach, 1) + 1
    mod = group.m
    gdtype = np.int8 if (mod is not None and mod < 100) else np.int32

    finals, maxpows = [], {a: [] for a in alphas}
    done, ci = 0, 0
    while done < count:
        m = min(chunk, count - done)
        rng = stream(seed, ci)
        ci += 1
        grid = np.zeros((m, 2 * width + 1), dtype=gdtype)
        pos = np.zeros(m, dtype=np.int64)
        lo = np.full(m, width + 1, dtype=np.int64)   # support min (empty: +inf side)
        hi = np.full(m, -width - 1, dtype=np.int64)  # support max
        presses = np.zeros(m, dtype=np.int64)
        best_max = {a: np.zeros(m) for a in alphas}
        norm = np.zeros(m)
        idx_all = _draw_indices(rng, cum, (m, n)).astype(np.int16)
        for j in range(n):
            idx = idx_all[:, j]
            for e in range(max_edits):
                which = np.flatnonzero(edit_mask[idx, e])
                if which.size == 0:
                    continue
                sel = idx[which]
                sites = edit_site[sel, e] + pos[which]
                deltas = edit_delta[sel, e]
                cols = sites + width
                old = grid[which, cols].astype(np.int64)
                new = (old + deltas) % mod if mod is not None else old + deltas
                grid[which, cols] = new.astype(gdtype)
                if mod is not None:
                    old_cost = np.minimum(old, mod - old)
                    new_cost = np.minimum(new, mod - new)
                else:
                    old_cost, new_cost = np.abs(old), np.abs(new)
                presses[which] += new_cost - old_cost
                turned_on = (old == 0) & (new != 0)
                if turned_on.any():
                    w_on = which[turned_on]
                    s_on = sites[turned_on]
                    lo[w_on] = np.minimum(lo[w_on], s_on)
                    hi[w_on] = np.maximum(hi[w_on], s_on)
                turned_off = (old != 0) & (new == 0)
                if turned_off.any():
                    w_off = which[turned_off]
                    s_off = sites[turned_off]
                    need = (s_off == lo[w_off]) | (s_off == hi[w_off])
                    rows = w_off[need]
                    if rows.size:
                        sub = grid[rows] != 0
                        any_nz = sub.any(axis=1)
                        first = sub.argmax(axis=1).astype(np.int64)
                        last = sub.shape[1] - 1 - sub[:, ::-1].argmax(axis=1)
                        lo[rows] = np.where(any_nz, first - width, width + 1)
                        hi[rows] = np.where(any_nz, last - width, -width - 1)
            pos += moves[idx]
            empty = lo > hi
            mmin = np.minimum(np.where(empty, 0, lo), np.minimum(pos, 0))
            mmax = np.maximum(np.where(empty, 0, hi), np.maximum(pos, 0))
            norm = (presses + 2 * (mmax - mmin) - np.abs(pos)).astype(float)
            for a in alphas:
                np.maximum(best_max[a], norm**a, out=best_max[a])
        finals.append(norm)
        for a in alphas:
            maxpows[a].append(best_max[a])
        done += m
    notes = ["word lengths from the line-traversal formula (BFS-validated)"]
    return _finalize(group, n, count, seed, "lamp-grid", alphas, finals,
                     maxpows, notes=notes)


def _sample_generic(group, step, n, count, seed, alphas, exit_set,
                    metric_cache, chunk):
    """Element-by-element sampler for any family (oracle scale)."""
    elems, cum = _step_arrays(step)

    def norm_of(g):
        if metric_cache is not None:
            return metric_cache.word_length(g)
        v = group.norm_exact(g)
        if v is None:
            raise UsageError(
                "no metric source: pass a ball cache or use a family with "
                "an exact norm"
            )
        return v

    finals, exits = [], [] if exit_set is not None else None
    maxpows = {a: [] for a in alphas}
    mul = group.multiply
    done, ci = 0, 0
    while done < count:
        m = min(chunk, count - done)
        rng = stream(seed, ci)
        ci += 1
        idx = _draw_indices(rng, cum, (m, n))
        fin = np.empty(m)
        mx = {a: np.empty(m) for a in alphas}
        exi = np.zeros(m) if exit_set is not None else None
        for s in range(m):
            g = group.identity()
            best = {a: 0.0 for a in alphas}
            exited = False
            last = 0.0
            for j in range(n):
                g = mul(g, elems[idx[s, j]])
                if exit_set is not None and not exited and g not in exit_set:
                    exited = True
                last = float(norm_of(g))
                for a in alphas:
                    v = last**a
                    if v > best[a]:
                        best[a] = v
            fin[s] = last
            for a in alphas:
                mx[a][s] = best[a]
            if exi is not None:
                exi[s] = 1.0 if exited else 0.0
        finals.append(fin)
        for a in alphas:
            maxpows[a].append(mx[a])
        if exits is not None:
            exits.append(exi)
        done += m
    return _finalize(group, n, count, seed, "generic", alphas, finals,
                     maxpows, exits)
