"""Geometries, minimal-basis hydrogen integrals and the integral-bundle file format.

Geometries are specified in Angstrom; everything stored in an
:class:`IntegralBundle` is in Hartree atomic units.  Two-electron integrals
use chemist notation, ``eri[p, q, r, s] = (pq|rs)``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from .errors import (
    BundleIntegrityError,
    BundleParseError,
    GeometryError,
    UnsupportedElementError,
)

BOHR_ANGSTROM = 0.52917721092

# STO-3G hydrogen: exponents already include the zeta=1.24 scaling.
_STO3G_H_EXPONENTS = np.array([3.42525091, 0.62391373, 0.16885540])
_STO3G_H_COEFFS = np.array([0.15432897, 0.53532814, 0.44463454])

_ATOMIC_NUMBERS = {
    "H": 1, "He": 2, "Li": 3, "Be": 4, "B": 5, "C": 6, "N": 7, "O": 8,
    "F": 9, "Ne": 10, "Na": 11, "Mg": 12, "Al": 13, "Si": 14, "P": 15,
    "S": 16, "Cl": 17, "Ar": 18,
}


@dataclass(frozen=True)
class Geometry:
    """Nuclear framework of a molecule.

    Args:
        symbols: element symbol per atom.
        coords: (n_atoms, 3) Cartesian positions in Angstrom.
        charge: net molecular charge.
        multiplicity: spin multiplicity 2S+1.
    """

    symbols: tuple
    coords: np.ndarray
    charge: int = 0
    multiplicity: int = 1

    def __post_init__(self):
        symbols = tuple(str(s).capitalize() for s in self.symbols)
        coords = np.array(self.coords, dtype=float).reshape(-1, 3)
        if len(symbols) != coords.shape[0]:
            raise GeometryError("number of symbols and coordinates differ")
        if len(symbols) == 0:
            raise GeometryError("geometry has no atoms")
        for s in symbols:
            if s not in _ATOMIC_NUMBERS:
                raise GeometryError(f"unknown element {s!r}")
        if len(symbols) > 1:
            diff = coords[:, None, :] - coords[None, :, :]
            dist = np.sqrt((diff**2).sum(-1))
            iu = np.triu_indices(len(symbols), 1)
            if dist[iu].min() <= 1e-6:
                raise GeometryError("two atoms coincide")
        coords.setflags(write=False)
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "coords", coords)
        n_elec = self.n_electrons
        if n_elec < 0:
            raise GeometryError("charge exceeds nuclear charge")
        if self.multiplicity < 1 or (n_elec - (self.multiplicity - 1)) % 2:
            raise GeometryError(
                f"multiplicity {self.multiplicity} inconsistent with {n_elec} electrons"
            )

    @property
    def atoms(self):
        return [(s, self.coords[i].copy()) for i, s in enumerate(self.symbols)]

    @property
    def natm(self):
        return len(self.symbols)

    @property
    def atomic_numbers(self):
        return np.array([_ATOMIC_NUMBERS[s] for s in self.symbols])

    @property
    def n_electrons(self):
        return int(self.atomic_numbers.sum()) - self.charge

    def coords_bohr(self):
        return self.coords / BOHR_ANGSTROM


@dataclass
class IntegralBundle:
    """One- and two-electron integrals of a molecular system in an AO basis."""

    n_orb: int
    n_elec: int
    e_nuc: float
    overlap: np.ndarray
    hcore: np.ndarray
    eri: np.ndarray
    orbital_to_atom: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.n_orb
        self.overlap = np.asarray(self.overlap, dtype=float)
        self.hcore = np.asarray(self.hcore, dtype=float)
        self.eri = np.asarray(self.eri, dtype=float)
        if self.orbital_to_atom is None:
            self.orbital_to_atom = np.arange(n)
        self.orbital_to_atom = np.asarray(self.orbital_to_atom, dtype=int)
        if self.overlap.shape != (n, n) or self.hcore.shape != (n, n):
            raise ValueError("one-electron matrices must be n_orb x n_orb")
        if self.eri.shape != (n, n, n, n):
            raise ValueError("eri must have shape (n_orb,)*4")
        if self.orbital_to_atom.shape != (n,):
            raise ValueError("orbital_to_atom must have length n_orb")


def ring_radius(n, r):
    """Circumradius of a regular n-gon with side length ``r``."""
    return r / (2.0 * math.sin(math.pi / n))


def build_h_ring(n, r):
    """Hydrogen ring of ``n`` atoms with nearest-neighbour spacing ``r`` Angstrom.

    Atom k sits at (rho cos(k dtheta), rho sin(k dtheta), 0) with
    dtheta = 2 pi / n.
    """
    if n < 3:
        raise GeometryError(f"a ring needs at least 3 atoms, got {n}")
    if not r > 0:
        raise GeometryError(f"spacing must be positive, got {r}")
    rho = ring_radius(n, r)
    theta = 2.0 * np.pi * np.arange(n) / n
    coords = np.column_stack([rho * np.cos(theta), rho * np.sin(theta), np.zeros(n)])
    return Geometry(("H",) * n, coords, charge=0, multiplicity=1 + (n % 2))


def nuclear_repulsion(geometry):
    z = geometry.atomic_numbers.astype(float)
    xyz = geometry.coords_bohr()
    e = 0.0
    for i in range(geometry.natm):
        for j in range(i):
            e += z[i] * z[j] / np.linalg.norm(xyz[i] - xyz[j])
    return e


def _boys0(t):
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = t < 1e-12
    out[small] = 1.0 - t[small] / 3.0
    ts = t[~small]
    out[~small] = 0.5 * np.sqrt(np.pi / ts) * erf(np.sqrt(ts))
    return out


def _contraction():
    a = _STO3G_H_EXPONENTS
    c = _STO3G_H_COEFFS * (2.0 * a / np.pi) ** 0.75
    # renormalize the contracted function exactly
    p = a[:, None] + a[None, :]
    s = (c[:, None] * c[None, :] * (np.pi / p) ** 1.5).sum()
    return a, c / np.sqrt(s)


def compute_sto3g_h_integrals(geometry):
    """STO-3G integrals for an all-hydrogen geometry.

    Uses one contracted s Gaussian per atom.  Nuclear attraction and
    electron repulsion integrals reduce to the zeroth-order Boys function.

    Returns:
        IntegralBundle with ``orbital_to_atom[i] == i``.
    """
    for s in geometry.symbols:
        if s != "H":
            raise UnsupportedElementError(
                f"built-in integrals support hydrogen only, got {s!r}"
            )
    xyz = geometry.coords_bohr()
    n = geometry.natm
    alpha, coef = _contraction()
    m = len(alpha)

    # primitive arrays indexed (atom, primitive)
    A = np.repeat(xyz[:, None, :], m, axis=1)
    a = np.broadcast_to(alpha, (n, m))
    c = np.broadcast_to(coef, (n, m))

    # pair quantities indexed (i, j, pi, pj)
    ai = a[:, None, :, None]
    bj = a[None, :, None, :]
    p = ai + bj
    mu = ai * bj / p
    AB2 = ((xyz[:, None, :] - xyz[None, :, :]) ** 2).sum(-1)[:, :, None, None]
    P = (ai[..., None] * A[:, None, :, None, :] + bj[..., None] * A[None, :, None, :, :]) / p[..., None]
    cc = c[:, None, :, None] * c[None, :, None, :]
    Kab = np.exp(-mu * AB2)

    S_prim = (np.pi / p) ** 1.5 * Kab
    overlap = (cc * S_prim).sum(axis=(2, 3))
    T_prim = mu * (3.0 - 2.0 * mu * AB2) * S_prim
    kinetic = (cc * T_prim).sum(axis=(2, 3))

    z = geometry.atomic_numbers.astype(float)
    V_prim = np.zeros_like(p)
    for k in range(n):
        PC2 = ((P - xyz[k]) ** 2).sum(-1)
        V_prim -= z[k] * 2.0 * np.pi / p * Kab * _boys0(p * PC2)
    potential = (cc * V_prim).sum(axis=(2, 3))

    hcore = kinetic + potential
    overlap = 0.5 * (overlap + overlap.T)
    hcore = 0.5 * (hcore + hcore.T)

    eri = _sto3g_eri(n, p, P, cc * Kab)
    return IntegralBundle(
        n_orb=n,
        n_elec=geometry.n_electrons,
        e_nuc=nuclear_repulsion(geometry),
        overlap=overlap,
        hcore=hcore,
        eri=eri,
        orbital_to_atom=np.arange(n),
    )


def _sto3g_eri(n, p, P, pref):
    """Contract primitive s-type ERIs over unique pairs and mirror 8-fold."""
    iu, ju = np.tril_indices(n)
    npair = len(iu)
    pp = p[iu, ju].reshape(npair, -1)
    PP = P[iu, ju].reshape(npair, -1, 3)
    ww = pref[iu, ju].reshape(npair, -1)
    eri_pairs = np.empty((npair, npair))
    for x in range(npair):
        # (x| y) for y <= x; primitives (px, py)
        y = slice(0, x + 1)
        p1 = pp[x][None, :, None]
        p2 = pp[y][:, None, :]
        PQ2 = ((PP[x][None, :, None, :] - PP[y][:, None, :, :]) ** 2).sum(-1)
        val = (
            2.0 * np.pi**2.5 / (p1 * p2 * np.sqrt(p1 + p2))
            * _boys0(p1 * p2 / (p1 + p2) * PQ2)
            * ww[x][None, :, None]
            * ww[y][:, None, :]
        ).sum(axis=(1, 2))
        eri_pairs[x, : x + 1] = val
        eri_pairs[: x + 1, x] = val
    eri = np.empty((n, n, n, n))
    for x in range(npair):
        i, j = iu[x], ju[x]
        block = np.zeros((n, n))
        block[iu, ju] = eri_pairs[x]
        block[ju, iu] = eri_pairs[x]
        eri[i, j] = block
        eri[j, i] = block
    return eri


# ----------------------------------------------------------------------------
# bundle I/O


def _canonical4(i, j, k, l):
    if i < j:
        i, j = j, i
    if k < l:
        k, l = l, k
    if (i, j) < (k, l):
        i, j, k, l = k, l, i, j
    return i, j, k, l


def write_bundle(bundle, path):
    """Write ``bundle`` in the plain-text bundle format.

    Records are ``value i j k l`` with 1-based indices.  Only the canonical
    member of each 8-fold ERI orbit is written, and exact zeros are skipped.
    """
    n = bundle.n_orb
    lines = [f"NORB={n} NELEC={bundle.n_elec} ENUC={float(bundle.e_nuc)!r}", "HCORE"]
    for i in range(n):
        for j in range(i + 1):
            v = float(bundle.hcore[i, j])
            if v != 0.0:
                lines.append(f"{v!r} {i + 1} {j + 1} 0 0")
    lines.append("ERI")
    for i in range(n):
        for j in range(i + 1):
            for k in range(i + 1):
                lmax = j if k == i else k
                for l in range(lmax + 1):
                    v = float(bundle.eri[i, j, k, l])
                    if v != 0.0:
                        lines.append(f"{v!r} {i + 1} {j + 1} {k + 1} {l + 1}")
    lines.append("OVERLAP")
    for i in range(n):
        for j in range(i + 1):
            v = float(bundle.overlap[i, j])
            if v != 0.0:
                lines.append(f"{v!r} {i + 1} {j + 1} 0 0")
    lines.append("ATOMMAP")
    for i in range(n):
        lines.append(f"{i + 1} {int(bundle.orbital_to_atom[i]) + 1}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_header(line, lineno):
    fields = {}
    for tok in line.replace(",", " ").split():
        if "=" not in tok:
            raise BundleParseError(f"bad header token {tok!r}", lineno)
        key, val = tok.split("=", 1)
        fields[key.strip().upper()] = val.strip()
    try:
        return int(fields["NORB"]), int(fields["NELEC"]), float(fields["ENUC"])
    except KeyError as exc:
        raise BundleParseError(f"header is missing {exc.args[0]}", lineno) from None
    except ValueError as exc:
        raise BundleParseError(f"bad header value: {exc}", lineno) from None


def read_bundle(path, dup_tol=1e-10):
    """Read an integral bundle written by :func:`write_bundle` (or by hand).

    Any member of an ERI permutation orbit may be listed; the reader fills
    all eight images.  Repeated entries must agree to ``dup_tol``.

    Raises:
        BundleParseError: malformed line (message carries the line number).
        BundleIntegrityError: conflicting duplicates or non-SPD overlap.
    """
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header = None
    section = None
    records = {"HCORE": {}, "ERI": {}, "OVERLAP": {}, "ATOMMAP": {}}

    def store(table, key, value, lineno):
        old = table.get(key)
        if old is not None and abs(old - value) > dup_tol:
            raise BundleIntegrityError(
                f"line {lineno}: conflicting duplicate entry {key} ({old!r} vs {value!r})"
            )
        table[key] = value

    for lineno, raw in enumerate(text, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if header is None:
            header = _parse_header(line, lineno)
            n = header[0]
            continue
        upper = line.upper()
        if upper in records:
            section = upper
            continue
        if section is None:
            raise BundleParseError("record before any section header", lineno)
        toks = line.split()
        try:
            if section == "ATOMMAP":
                if len(toks) != 2:
                    raise ValueError("expected 'orbital atom'")
                orb, atom = int(toks[0]) - 1, int(toks[1]) - 1
                if not 0 <= orb < n or atom < 0:
                    raise ValueError("index out of range")
                store(records[section], orb, atom, lineno)
                continue
            if len(toks) not in (3, 5):
                raise ValueError(f"expected 'value i j [k l]', got {len(toks)} fields")
            value = float(toks[0])
            idx = [int(t) for t in toks[1:]]
        except ValueError as exc:
            raise BundleParseError(str(exc), lineno) from None
        if section == "ERI":
            if len(idx) != 4 or min(idx) < 1 or max(idx) > n:
                raise BundleParseError("ERI record needs four indices in 1..NORB", lineno)
            key = _canonical4(*(i - 1 for i in idx))
        else:
            if len(idx) == 4 and (idx[2], idx[3]) != (0, 0):
                raise BundleParseError("one-body record must have k = l = 0", lineno)
            i, j = idx[0] - 1, idx[1] - 1
            if not (0 <= i < n and 0 <= j < n):
                raise BundleParseError("index out of range", lineno)
            key = (max(i, j), min(i, j))
        store(records[section], key, value, lineno)

    if header is None:
        raise BundleParseError("empty bundle file", 1)
    n, n_elec, e_nuc = header
    hcore = np.zeros((n, n))
    for (i, j), v in records["HCORE"].items():
        hcore[i, j] = hcore[j, i] = v
    overlap = np.zeros((n, n))
    for (i, j), v in records["OVERLAP"].items():
        overlap[i, j] = overlap[j, i] = v
    if not records["OVERLAP"]:
        overlap = np.eye(n)
    eri = np.zeros((n, n, n, n))
    for (i, j, k, l), v in records["ERI"].items():
        for a, b, c, d in (
            (i, j, k, l), (j, i, k, l), (i, j, l, k), (j, i, l, k),
            (k, l, i, j), (l, k, i, j), (k, l, j, i), (l, k, j, i),
        ):
            eri[a, b, c, d] = v
    atom_map = np.arange(n)
    for orb, atom in records["ATOMMAP"].items():
        atom_map[orb] = atom
    eigs = np.linalg.eigvalsh(overlap)
    if eigs.min() <= 0.0:
        raise BundleIntegrityError(
            f"overlap matrix is not positive definite (min eigenvalue {eigs.min():.3e})"
        )
    return IntegralBundle(n, n_elec, e_nuc, overlap, hcore, eri, atom_map)


# ----------------------------------------------------------------------------
# geometry files: one "element x y z" record per line, Angstrom


def geometry_text(geometry):
    lines = [f"# charge={geometry.charge} multiplicity={geometry.multiplicity}"]
    for s, xyz in geometry.atoms:
        x, y, z = (float(v) for v in xyz)
        lines.append(f"{s} {x!r} {y!r} {z!r}")
    return "\n".join(lines) + "\n"


def write_geometry(geometry, path):
    Path(path).write_text(geometry_text(geometry), encoding="utf-8")


def read_geometry(path):
    """Read a geometry file; also accepts standard XYZ (count + comment header)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    charge, mult = 0, 1
    symbols, coords = [], []
    start = 0
    if lines and lines[0].strip().isdigit():
        start = 2
    for lineno, raw in enumerate(lines[start:], start=start + 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if tok.startswith("charge="):
                    charge = int(tok.split("=")[1])
                elif tok.startswith("multiplicity="):
                    mult = int(tok.split("=")[1])
            continue
        toks = line.split()
        if len(toks) != 4:
            raise BundleParseError("expected 'element x y z'", lineno)
        try:
            coords.append([float(t) for t in toks[1:]])
        except ValueError:
            raise BundleParseError("non-numeric coordinate", lineno) from None
        symbols.append(toks[0])
    return Geometry(tuple(symbols), np.array(coords), charge, mult)


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
