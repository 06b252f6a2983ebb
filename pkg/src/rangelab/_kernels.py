"""Hot loops: hashed visited-site counting and conditioned block sampling.

Sites are packed into one uint64 key (two offset 32-bit coordinates) and
inserted into an open-addressing table with linear probing.  The table is
an arena stamped with a generation counter, so clearing between samples is
free; walks of up to 2**31 - 1 steps fit the packing.
"""
from __future__ import annotations

import numpy as np
import numba as nb

U64 = np.uint64
_OFF = 2147483648  # 1 << 31


@nb.njit(nb.uint64(nb.uint64), inline="always", cache=True)
def _mix(z):
    # splitmix64 finalizer; good avalanche for packed lattice keys
    z = (z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    return z ^ (z >> U64(31))


@nb.njit(nb.uint64(nb.int64, nb.int64), inline="always", cache=True)
def _pack(x, y):
    return (np.uint64(x + _OFF) << U64(32)) | np.uint64(y + _OFF)


@nb.njit(
    nb.types.Tuple((nb.int64, nb.boolean))(
        nb.uint64, nb.uint64[::1], nb.uint32[::1], nb.uint32, nb.int64
    ),
    inline="always",
    cache=True,
)
def _insert(key, keys, stamps, gen, count):
    slot = _mix(key) & U64(keys.shape[0] - 1)
    while True:
        if stamps[slot] != gen:
            stamps[slot] = gen
            keys[slot] = key
            return count + 1, True
        if keys[slot] == key:
            return count, False
        slot = (slot + U64(1)) & U64(keys.shape[0] - 1)


@nb.njit(
    nb.int64(nb.uint8[::1], nb.int64[::1], nb.int64[::1], nb.uint64[::1], nb.uint32[::1], nb.uint32),
    cache=True,
)
def visit_count(codes, adx, ady, keys, stamps, gen):
    """Distinct sites of the walk started at the origin, start included."""
    x = np.int64(0)
    y = np.int64(0)
    count, _ = _insert(_pack(x, y), keys, stamps, gen, np.int64(0))
    for i in range(codes.shape[0]):
        c = codes[i]
        x += adx[c]
        y += ady[c]
        count, _ = _insert(_pack(x, y), keys, stamps, gen, count)
    return count


@nb.njit(
    nb.int64[::1](nb.uint8[:, ::1], nb.int64[::1], nb.int64[::1], nb.uint64[::1], nb.uint32[::1], nb.uint32),
    cache=True,
)
def visit_count_batch(codes2d, adx, ady, keys, stamps, gen0):
    out = np.empty(codes2d.shape[0], np.int64)
    for s in range(codes2d.shape[0]):
        out[s] = visit_count(codes2d[s], adx, ady, keys, stamps, gen0 + np.uint32(s))
    return out


@nb.njit(
    nb.int64(nb.uint8[::1], nb.int64[::1], nb.int64[::1], nb.uint64[::1], nb.uint32[::1], nb.uint32, nb.int64),
    cache=True,
)
def crossing_step(codes, adx, ady, keys, stamps, gen, level):
    """First step index t with more than ``level`` distinct sites in S_0..S_t.

    Returns -1 when the whole path stays at or below ``level``.
    """
    x = np.int64(0)
    y = np.int64(0)
    count, _ = _insert(_pack(x, y), keys, stamps, gen, np.int64(0))
    if count > level:
        return 0
    for i in range(codes.shape[0]):
        c = codes[i]
        x += adx[c]
        y += ady[c]
        count, _ = _insert(_pack(x, y), keys, stamps, gen, count)
        if count > level:
            return i + 1
    return np.int64(-1)


@nb.njit(
    nb.types.Tuple((nb.int64, nb.int64, nb.int64))(
        nb.uint8[::1],
        nb.int64[::1],
        nb.int64[::1],
        nb.uint64[::1],
        nb.uint32[::1],
        nb.uint32,
        nb.int64,
        nb.int64,
        nb.int64,
    ),
    cache=True,
)
def visit_count_resume(codes, adx, ady, keys, stamps, gen, x, y, count):
    """Streaming continuation: consume a chunk, return updated (x, y, count).

    The caller owns the arena and must keep ``gen`` fixed for the whole
    stream.  A fresh stream passes count = -1 so the start site is counted.
    """
    if count < 0:
        count, _ = _insert(_pack(x, y), keys, stamps, gen, np.int64(0))
    for i in range(codes.shape[0]):
        c = codes[i]
        x += adx[c]
        y += ady[c]
        count, _ = _insert(_pack(x, y), keys, stamps, gen, count)
    return x, y, count


@nb.njit(
    nb.int64(nb.uint64[::1], nb.uint32[::1], nb.uint32, nb.uint64[::1], nb.uint32[::1], nb.uint32),
    cache=True,
)
def rehash_live(old_keys, old_stamps, old_gen, new_keys, new_stamps, new_gen):
    count = np.int64(0)
    for i in range(old_keys.shape[0]):
        if old_stamps[i] == old_gen:
            count, _ = _insert(old_keys[i], new_keys, new_stamps, new_gen, count)
    return count


@nb.njit(
    nb.uint8[::1](
        nb.float64[:, ::1],  # uniforms, shape (steps, 2)
        nb.float64[:, ::1],  # h, shape (horizon, nstates)
        nb.int64,            # lo: x value of state 0
        nb.int64[::1],       # dx value per group
        nb.float64[::1],     # marginal probability per group
        nb.int64[::1],       # group offsets into flattened atom tables
        nb.uint8[::1],       # atom codes, grouped by dx
        nb.float64[::1],     # conditional cdf within each group
    ),
    cache=True,
)
def sample_block_codes(uniforms, h, lo, gdx, gprob, goff, gcodes, gcdf):
    """Draw block increments conditioned on the confinement event.

    The first coordinate follows the Doob transform of the marginal
    x-walk given by the backward table ``h`` (zero outside the allowed
    strip); the remaining randomness per step picks an atom from the
    conditional law given the chosen x-increment.
    """
    steps = uniforms.shape[0]
    nstates = h.shape[1]
    ngroups = gdx.shape[0]
    out = np.empty(steps, np.uint8)
    xidx = -lo  # state index of x = 0
    for t in range(steps):
        total = 0.0
        for j in range(ngroups):
            nxt = xidx + gdx[j]
            if 0 <= nxt < nstates:
                total += gprob[j] * h[t + 1, nxt]
        u = uniforms[t, 0] * total
        acc = 0.0
        pick = ngroups - 1
        for j in range(ngroups):
            nxt = xidx + gdx[j]
            if 0 <= nxt < nstates:
                acc += gprob[j] * h[t + 1, nxt]
                if u < acc:
                    pick = j
                    break
        # conditional atom choice inside the picked dx group
        u2 = uniforms[t, 1]
        a = goff[pick]
        b = goff[pick + 1]
        code = gcodes[b - 1]
        for k in range(a, b):
            if u2 < gcdf[k]:
                code = gcodes[k]
                break
        out[t] = code
        xidx += gdx[pick]
    return out


def _table_size(capacity: int) -> int:
    size = 64
    while size < 2 * (capacity + 1):
        size *= 2
    return size


class VisitArena:
    """Reusable open-addressing table with generation stamping."""

    def __init__(self, capacity: int = 4096):
        size = _table_size(capacity)
        self.keys = np.zeros(size, dtype=np.uint64)
        self.stamps = np.zeros(size, dtype=np.uint32)
        self.gen = 0

    @property
    def size(self) -> int:
        return self.keys.shape[0]

    def ensure(self, capacity: int) -> None:
        """Grow so ``capacity`` distinct sites keep load factor under 1/2."""
        needed = _table_size(capacity)
        if needed > self.size:
            self.keys = np.zeros(needed, dtype=np.uint64)
            self.stamps = np.zeros(needed, dtype=np.uint32)
            self.gen = 0

    def next_gen(self) -> np.uint32:
        self.gen += 1
        if self.gen >= 2**32 - 1:
            self.stamps.fill(0)
            self.gen = 1
        return np.uint32(self.gen)

    def reserve(self, count: int) -> np.uint32:
        """Starting generation for a batch of ``count`` independent counts."""
        if self.gen + count >= 2**32 - 1:
            self.stamps.fill(0)
            self.gen = 0
        start = np.uint32(self.gen + 1)
        self.gen += count
        return start

    def grow_stream(self, live_gen: np.uint32, live_count: int):
        """Double the table mid-stream, keeping live keys. Returns new gen."""
        old_keys, old_stamps = self.keys, self.stamps
        self.keys = np.zeros(self.size * 2, dtype=np.uint64)
        self.stamps = np.zeros(self.size * 2, dtype=np.uint32)
        self.gen = 1
        moved = rehash_live(old_keys, old_stamps, live_gen, self.keys, self.stamps, np.uint32(1))
        assert moved == live_count
        return np.uint32(1)
