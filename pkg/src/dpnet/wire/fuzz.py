"""Random-mutation fuzzing of the frame codec."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frame import FrameError, decode_frame


@dataclass
class FuzzReport:
    mutations: int = 0
    unchanged: int = 0  # mutation happened to reproduce the original bytes
    rejected: dict = field(default_factory=dict)  # error code -> count
    misdecoded: int = 0  # altered bytes that decoded without error

    @property
    def ok(self):
        return self.misdecoded == 0


def mutate(data, rng):
    """One random corruption: bit flips, byte overwrite, truncation, extension or a splice."""
    b = bytearray(data)
    kind = rng.integers(5)
    if kind == 0:
        for _ in range(rng.integers(1, 4)):
            i = rng.integers(len(b))
            b[i] ^= 1 << int(rng.integers(8))
    elif kind == 1:
        i = rng.integers(len(b))
        n = int(rng.integers(1, 9))
        b[i : i + n] = rng.integers(0, 256, min(n, len(b) - i), dtype=np.uint8).tobytes()
    elif kind == 2:
        del b[rng.integers(len(b)) :]
    elif kind == 3:
        b += rng.integers(0, 256, int(rng.integers(1, 16)), dtype=np.uint8).tobytes()
    else:
        i, j = sorted(rng.integers(len(b), size=2))
        del b[i : j + 1]
    return bytes(b)


def fuzz_codec(frames, n_mutations, seed=0):
    """Mutate encoded ``frames`` ``n_mutations`` times; any altered input that decodes counts as a mis-decode."""
    rng = np.random.default_rng(seed)
    rep = FuzzReport()
    for _ in range(n_mutations):
        original = frames[rng.integers(len(frames))]
        data = mutate(original, rng)
        rep.mutations += 1
        if data == original:
            rep.unchanged += 1
            continue
        try:
            decode_frame(data)
        except FrameError as exc:
            rep.rejected[exc.code] = rep.rejected.get(exc.code, 0) + 1
        else:
            rep.misdecoded += 1
    return rep
