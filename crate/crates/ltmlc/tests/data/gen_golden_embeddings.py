#!/usr/bin/env python3
"""Independent reference for the synthetic class embeddings.

Implements the documented chain from scratch (FNV-1a 64-bit seed,
SplitMix64 stream, Box-Muller normals consumed cos-then-sin, first d
values L2-normalized) and freezes reference vectors into
golden_embeddings.json. Regenerate with: python3 gen_golden_embeddings.py
"""

import json
import math
import os

MASK = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & MASK
    return h


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK
        self.cached = None

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def next_f64(self) -> float:  # [0, 1)
        return (self.next_u64() >> 11) * 2.0**-53

    def next_open(self) -> float:  # (0, 1]
        return ((self.next_u64() >> 11) + 1) * 2.0**-53

    def next_normal(self) -> float:
        if self.cached is not None:
            z, self.cached = self.cached, None
            return z
        u1 = self.next_open()
        u2 = self.next_f64()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self.cached = r * math.sin(theta)
        return r * math.cos(theta)


def synthetic_embedding(name: str, d: int):
    rng = SplitMix64(fnv1a64(name.encode("utf-8")))
    values = [rng.next_normal() for _ in range(d)]
    norm = math.sqrt(sum(v * v for v in values))
    return [v / norm for v in values]


def main():
    cases = [
        ("class_00", 4),
        ("class_00", 8),
        ("class_25", 16),
        ("atelectasis", 6),
        ("edema", 3),
    ]
    entries = [
        {"name": name, "dim": d, "vector": synthetic_embedding(name, d)}
        for name, d in cases
    ]
    out = os.path.join(os.path.dirname(os.path.abspath(__file__)), "golden_embeddings.json")
    with open(out, "w") as f:
        json.dump(entries, f, indent=1)
        f.write("\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
