"""Canonical-form arithmetic, word metric and ball enumeration for the
supported group families.

Elements are plain hashable payloads (ints / nested tuples); each family
class interprets them.  Equal group elements always compare equal as
payloads, so dictionaries keyed by elements behave like measures on the
group.

Conventions per family:

* ``ZPow(d)``        -- int for d=1, tuple of d ints otherwise.
* ``Heisenberg``     -- triple (x, y, z), product
                        (x,y,z)(x',y',z') = (x+x', y+y', z+z'+x*y').
* ``Lamplighter``    -- pair (lamps, pos); ``lamps`` is a sorted tuple of
                        (site, value) with nonzero values, ``pos`` a base
                        point.  Lamp values live in Z_m (``lamp_order=m``)
                        or in Z (``lamp_order=None``), stored as exact ints.
* ``BaumslagSolitar``-- triple (t, num, k) encoding the affine map
                        z -> q^t z + num/q^k with k minimal.

The bubble-graph wreath family lives in :mod:`grwalk.bubble` (it needs the
Schreier graph to act on) and subclasses :class:`Group`.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from .errors import OutOfRangeError, ResourceCapError, UsageError

__all__ = [
    "Group",
    "ZPow",
    "Heisenberg",
    "Lamplighter",
    "BaumslagSolitar",
    "BallCache",
    "ball",
]


def _pack_int(v: int) -> bytes:
    """Length-prefixed signed big-endian encoding; exact for any int."""
    raw = v.to_bytes((v.bit_length() + 8) // 8, "big", signed=True)
    return struct.pack("<H", len(raw)) + raw


def _unpack_int(buf: memoryview, off: int) -> tuple[int, int]:
    (n,) = struct.unpack_from("<H", buf, off)
    off += 2
    v = int.from_bytes(buf[off : off + n], "big", signed=True)
    return v, off + n


class Group:
    """Base class: identity / multiply / inverse plus metadata.

    Subclasses are immutable value objects; two instances with the same
    description behave identically.
    """

    family = "abstract"

    def identity(self):
        raise NotImplementedError

    def multiply(self, a, b):
        raise NotImplementedError

    def inverse(self, a):
        raise NotImplementedError

    def generators(self) -> list:
        """Symmetric generating set, deduplicated, identity excluded."""
        raise NotImplementedError

    def generator_labels(self) -> list[str]:
        raise NotImplementedError

    def describe(self) -> str:
        """Canonical one-line description (used for digests and manifests)."""
        raise NotImplementedError

    def norm_exact(self, g):
        """Closed-form word length for the standard generators, or None.

        Validated against BFS layers in the test suite; used by samplers
        whose scale puts elements far beyond any feasible BFS cache.
        """
        return None

    def encode_element(self, g) -> bytes:
        raise NotImplementedError

    def decode_element(self, buf: bytes):
        raise NotImplementedError

    def digest(self) -> str:
        return hashlib.sha256(self.describe().encode()).hexdigest()[:16]

    def check_same(self, other: "Group"):
        if self.describe() != other.describe():
            raise UsageError(
                f"mixed-family operands: {self.describe()} vs {other.describe()}"
            )

    def __repr__(self):
        return f"<{type(self).__name__} {self.describe()}>"

    def __eq__(self, other):
        return isinstance(other, Group) and self.describe() == other.describe()

    def __hash__(self):
        return hash(self.describe())


class ZPow(Group):
    """Free abelian lattice Z^d with generators +-e_i."""

    family = "zd"

    def __init__(self, d: int):
        if d < 1:
            raise UsageError("dimension must be >= 1")
        self.d = d

    def identity(self):
        return 0 if self.d == 1 else (0,) * self.d

    def multiply(self, a, b):
        if self.d == 1:
            return a + b
        return tuple(x + y for x, y in zip(a, b))

    def inverse(self, a):
        if self.d == 1:
            return -a
        return tuple(-x for x in a)

    def generators(self):
        if self.d == 1:
            return [1, -1]
        gens = []
        for i in range(self.d):
            for s in (1, -1):
                e = [0] * self.d
                e[i] = s
                gens.append(tuple(e))
        return gens

    def generator_labels(self):
        if self.d == 1:
            return ["t+", "t-"]
        return [f"e{i}{s}" for i in range(self.d) for s in ("+", "-")]

    def describe(self):
        return f"zd(d={self.d})"

    def norm_exact(self, g):
        if self.d == 1:
            return abs(g)
        return sum(abs(x) for x in g)

    def encode_element(self, g):
        coords = (g,) if self.d == 1 else g
        return b"".join(_pack_int(c) for c in coords)

    def decode_element(self, buf):
        mv, off, coords = memoryview(buf), 0, []
        for _ in range(self.d):
            v, off = _unpack_int(mv, off)
            coords.append(v)
        return coords[0] if self.d == 1 else tuple(coords)


class Heisenberg(Group):
    """Discrete Heisenberg group (integer upper unitriangular 3x3)."""

    family = "heisenberg"

    def identity(self):
        return (0, 0, 0)

    def multiply(self, a, b):
        return (a[0] + b[0], a[1] + b[1], a[2] + b[2] + a[0] * b[1])

    def inverse(self, a):
        x, y, z = a
        return (-x, -y, -z + x * y)

    def generators(self):
        return [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0)]

    def generator_labels(self):
        return ["x+", "x-", "y+", "y-"]

    def describe(self):
        return "heisenberg"

    def encode_element(self, g):
        return b"".join(_pack_int(c) for c in g)

    def decode_element(self, buf):
        mv, off, coords = memoryview(buf), 0, []
        for _ in range(3):
            v, off = _unpack_int(mv, off)
            coords.append(v)
        return tuple(coords)


class Lamplighter(Group):
    """Wreath product (lamp group) wr Z^d.

    ``lamp_order=m`` gives Z_m lamps (m >= 2); ``lamp_order=None`` gives Z
    lamps with exact integer values.  Generators: lattice translations and
    a lamp increment at the walker's position.
    """

    family = "lamplighter"

    def __init__(self, base_dim: int = 1, lamp_order: int | None = 2):
        if base_dim < 1:
            raise UsageError("base dimension must be >= 1")
        if lamp_order is not None and lamp_order < 2:
            raise UsageError("lamp order must be >= 2 (or None for Z lamps)")
        self.d = base_dim
        self.m = lamp_order

    # -- base point helpers -------------------------------------------------
    def _origin(self):
        return 0 if self.d == 1 else (0,) * self.d

    def _shift(self, site, pos):
        if self.d == 1:
            return site + pos
        return tuple(s + p for s, p in zip(site, pos))

    def _neg(self, pos):
        if self.d == 1:
            return -pos
        return tuple(-p for p in pos)

    def _lampval(self, v):
        return v % self.m if self.m is not None else v

    # -- group operations ---------------------------------------------------
    def identity(self):
        return ((), self._origin())

    def multiply(self, a, b):
        lamps_a, pos_a = a
        lamps_b, pos_b = b
        if not lamps_b:
            merged = lamps_a
        else:
            acc = dict(lamps_a)
            for site, val in lamps_b:
                s = self._shift(site, pos_a)
                v = self._lampval(acc.get(s, 0) + val)
                if v:
                    acc[s] = v
                else:
                    acc.pop(s, None)
            merged = tuple(sorted(acc.items()))
        return (merged, self._shift(pos_b, pos_a))

    def inverse(self, a):
        lamps, pos = a
        npos = self._neg(pos)
        inv = tuple(
            sorted((self._shift(site, npos), self._lampval(-val)) for site, val in lamps)
        )
        return (inv, npos)

    def lamp_element(self, value: int):
        """Embedded lamp increment at the origin."""
        v = self._lampval(value)
        if not v:
            return self.identity()
        return (((self._origin(), v),), self._origin())

    def base_element(self, offset):
        """Embedded lattice translation."""
        return ((), offset)

    def generators(self):
        gens = []
        for i in range(self.d):
            for s in (1, -1):
                if self.d == 1:
                    gens.append(self.base_element(s))
                else:
                    e = [0] * self.d
                    e[i] = s
                    gens.append(self.base_element(tuple(e)))
        gens.append(self.lamp_element(1))
        minus = self.lamp_element(-1)
        if minus != self.lamp_element(1):
            gens.append(minus)
        return gens

    def generator_labels(self):
        labs = [f"t{i}{s}" for i in range(self.d) for s in ("+", "-")]
        labs.append("s+")
        if self.lamp_element(-1) != self.lamp_element(1):
            labs.append("s-")
        return labs

    def describe(self):
        lamp = "Z" if self.m is None else f"Z{self.m}"
        return f"lamplighter(lamps={lamp},base_dim={self.d})"

    def norm_exact(self, g):
        """Travelling-salesman word length; exact only over a line base."""
        if self.d != 1:
            return None
        lamps, pos = g
        presses = 0
        for _, v in lamps:
            presses += abs(v) if self.m is None else min(v, self.m - v)
        sites = [s for s, _ in lamps]
        lo = min(sites + [0, pos]) if sites else min(0, pos)
        hi = max(sites + [0, pos]) if sites else max(0, pos)
        return presses + 2 * (hi - lo) - abs(pos)

    def encode_element(self, g):
        lamps, pos = g
        out = [struct.pack("<I", len(lamps))]
        for site, val in lamps:
            coords = (site,) if self.d == 1 else site
            out.extend(_pack_int(c) for c in coords)
            out.append(_pack_int(val))
        coords = (pos,) if self.d == 1 else pos
        out.extend(_pack_int(c) for c in coords)
        return b"".join(out)

    def decode_element(self, buf):
        mv = memoryview(buf)
        (nlamps,) = struct.unpack_from("<I", mv, 0)
        off = 4
        lamps = []
        for _ in range(nlamps):
            coords = []
            for _ in range(self.d):
                v, off = _unpack_int(mv, off)
                coords.append(v)
            val, off = _unpack_int(mv, off)
            site = coords[0] if self.d == 1 else tuple(coords)
            lamps.append((site, val))
        coords = []
        for _ in range(self.d):
            v, off = _unpack_int(mv, off)
            coords.append(v)
        pos = coords[0] if self.d == 1 else tuple(coords)
        return (tuple(lamps), pos)


class BaumslagSolitar(Group):
    """Solvable Baumslag-Solitar group BS(1, q), q >= 2.

    Elements are affine maps z -> q^t z + r with r in Z[1/q]; r is stored
    as (num, k) with r = num / q^k and k minimal.
    """

    family = "bs"

    def __init__(self, q: int):
        if q < 2:
            raise UsageError("q must be >= 2")
        self.q = q

    def _reduce(self, num: int, k: int):
        q = self.q
        if num == 0:
            return 0, 0
        while k > 0 and num % q == 0:
            num //= q
            k -= 1
        return num, k

    def identity(self):
        return (0, 0, 0)

    def multiply(self, a, b):
        # (t1, r1) * (t2, r2) = (t1 + t2, r1 + q^t1 r2)
        t1, n1, k1 = a
        t2, n2, k2 = b
        q = self.q
        # q^t1 * n2/q^k2 = n2 * q^(t1-k2); bring to common denominator.
        e = t1 - k2
        if e >= 0:
            num2, kk2 = n2 * q**e, 0
        else:
            num2, kk2 = n2, -e
        k = max(k1, kk2)
        num = n1 * q ** (k - k1) + num2 * q ** (k - kk2)
        num, k = self._reduce(num, k)
        return (t1 + t2, num, k)

    def inverse(self, a):
        t, n, k = a
        # inverse of z -> q^t z + n/q^k is z -> q^-t z - n/q^(k+t)
        num, kk = self._reduce(-n, k + t) if k + t >= 0 else (-n * self.q ** (-(k + t)), 0)
        return (-t, num, kk)

    def generators(self):
        return [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0)]

    def generator_labels(self):
        return ["t+", "t-", "x+", "x-"]

    def describe(self):
        return f"bs(1,{self.q})"

    def encode_element(self, g):
        return b"".join(_pack_int(c) for c in g)

    def decode_element(self, buf):
        mv, off, coords = memoryview(buf), 0, []
        for _ in range(3):
            v, off = _unpack_int(mv, off)
            coords.append(v)
        return tuple(coords)


@dataclass
class BallCache:
    """BFS layers of the Cayley graph around the identity.

    ``layers[r]`` holds the elements at word distance exactly r; ``index``
    maps every cached element to its distance.
    """

    group: Group
    layers: list = field(default_factory=list)
    index: dict = field(default_factory=dict)

    @property
    def radius(self) -> int:
        return len(self.layers) - 1

    def __contains__(self, g):
        return g in self.index

    def __len__(self):
        return len(self.index)

    def word_length(self, g) -> int:
        try:
            return self.index[g]
        except KeyError:
            raise OutOfRangeError(
                f"element beyond computed radius {self.radius}; extend the ball"
            ) from None

    def elements(self):
        for layer in self.layers:
            yield from layer

    def ball_sizes(self) -> list[int]:
        sizes, total = [], 0
        for layer in self.layers:
            total += len(layer)
            sizes.append(total)
        return sizes


def ball(group: Group, r: int, cap: int | None = None) -> BallCache:
    """Exact ball of radius r by breadth-first exploration from the identity.

    ``cap`` bounds the total element count; exceeding it raises
    :class:`ResourceCapError` carrying the cache completed so far.
    """
    if r < 0:
        raise UsageError("radius must be >= 0")
    gens = group.generators()
    cache = BallCache(group)
    ident = group.identity()
    cache.layers.append({ident})
    cache.index[ident] = 0
    frontier = [ident]
    for dist in range(1, r + 1):
        nxt = []
        for g in frontier:
            for s in gens:
                h = group.multiply(g, s)
                if h not in cache.index:
                    cache.index[h] = dist
                    nxt.append(h)
        cache.layers.append(set(nxt))
        frontier = nxt
        if cap is not None and len(cache.index) > cap:
            raise ResourceCapError(
                f"ball size cap {cap} exceeded at radius {dist} "
                f"({len(cache.index)} elements)",
                partial=cache,
            )
    return cache
