"""Bitstring samples standing in for quantum-device measurements.

All randomness flows through :func:`make_rng`, which builds a NumPy
``Generator`` on the counter-based Philox4x64 bit generator keyed by a
``SeedSequence`` of (seed, *stream).  Streams are therefore reproducible
across platforms and independent of call order.

Sample file format::

    NORB=<int> SHOTS=<int>
    <2*NORB characters of 0/1>      # one shot per line

Character k < NORB is the spin-up occupancy of orbital k, character
NORB + k the spin-down occupancy of orbital k.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BundleParseError


def make_rng(seed, *stream):
    """Philox generator for the stream (seed, *stream)."""
    ss = np.random.SeedSequence([int(seed), *(int(s) for s in stream)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class SampleSet:
    n_orb: int
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.int64).ravel()
        self.beta = np.asarray(self.beta, dtype=np.int64).ravel()
        if self.alpha.shape != self.beta.shape:
            raise ValueError("alpha and beta shot arrays differ in length")
        limit = 1 << self.n_orb
        if self.alpha.size and (
            self.alpha.min() < 0 or self.beta.min() < 0
            or self.alpha.max() >= limit or self.beta.max() >= limit
        ):
            raise ValueError(f"bitmask does not fit {self.n_orb} orbitals")

    def __len__(self):
        return self.alpha.shape[0]

    @property
    def shots(self):
        return list(zip(self.alpha.tolist(), self.beta.tolist()))

    def popcounts(self):
        p = np.arange(self.n_orb)
        return ((self.alpha[:, None] >> p) & 1).sum(1), ((self.beta[:, None] >> p) & 1).sum(1)

    def to_bits(self):
        """(shots, 2*n_orb) uint8 array in file-column order."""
        p = np.arange(self.n_orb)
        return np.hstack([(self.alpha[:, None] >> p) & 1, (self.beta[:, None] >> p) & 1]).astype(np.uint8)

    @classmethod
    def from_bits(cls, bits, n_orb):
        bits = np.asarray(bits, dtype=np.int64)
        weights = np.int64(1) << np.arange(n_orb, dtype=np.int64)
        return cls(n_orb, bits[:, :n_orb] @ weights, bits[:, n_orb:] @ weights)

    def __eq__(self, other):
        return (
            isinstance(other, SampleSet)
            and self.n_orb == other.n_orb
            and np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.beta, other.beta)
        )


def sample_from_state(c, shots, seed):
    """Draw ``shots`` i.i.d. determinants with probability c_m^2."""
    prob = np.asarray(c.coefficients, dtype=float) ** 2
    prob = prob / prob.sum()
    rng = make_rng(seed, 0)
    picks = rng.choice(len(prob), size=int(shots), p=prob)
    b = c.basis
    return SampleSet(b.n_orb, b.alpha[picks], b.beta[picks])


def apply_readout_noise(samples, p, seed):
    """Flip every bit of every shot independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"flip probability must lie in [0, 1], got {p}")
    n = samples.n_orb
    rng = make_rng(seed, 1)
    flips = rng.random((len(samples), 2 * n)) < p
    weights = np.int64(1) << np.arange(n, dtype=np.int64)
    fa = flips[:, :n].astype(np.int64) @ weights
    fb = flips[:, n:].astype(np.int64) @ weights
    return SampleSet(n, samples.alpha ^ fa, samples.beta ^ fb)


def write_samples(samples, path):
    bits = samples.to_bits()
    body = ["".join("1" if x else "0" for x in row) for row in bits]
    text = f"NORB={samples.n_orb} SHOTS={len(samples)}\n" + "".join(line + "\n" for line in body)
    Path(path).write_text(text, encoding="ascii")


def read_samples(path):
    """Parse a sample file.

    Raises:
        BundleParseError: bad header, wrong line length, characters other
            than 0/1, or a shot count that disagrees with the header.
    """
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines:
        raise BundleParseError("empty sample file", 1)
    fields = {}
    for tok in lines[0].split():
        if "=" not in tok:
            raise BundleParseError(f"bad header token {tok!r}", 1)
        k, v = tok.split("=", 1)
        fields[k.upper()] = v
    try:
        n_orb = int(fields["NORB"])
        n_shots = int(fields["SHOTS"])
    except (KeyError, ValueError):
        raise BundleParseError("header must read 'NORB=<int> SHOTS=<int>'", 1) from None
    rows = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if len(line) != 2 * n_orb:
            raise BundleParseError(f"expected {2 * n_orb} characters, got {len(line)}", lineno)
        if set(line) - {"0", "1"}:
            raise BundleParseError("shot contains characters other than 0 and 1", lineno)
        rows.append([ch == "1" for ch in line])
    if len(rows) != n_shots:
        raise BundleParseError(f"header declares {n_shots} shots, file has {len(rows)}", len(lines))
    bits = np.array(rows, dtype=np.int64).reshape(-1, 2 * n_orb)
    return SampleSet.from_bits(bits, n_orb)
