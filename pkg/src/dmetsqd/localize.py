"""Symmetric (Loewdin) orthogonalization into an atom-centred orthonormal basis.

For a minimal basis with a single valence shell per atom this basis is the
meta-Loewdin basis used for DMET fragmentation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LinearDependenceError
from .scf import rhf_energy, transform_eri


@dataclass
class LocalizedProblem:
    hcore_loc: np.ndarray
    eri_loc: np.ndarray
    rdm1_loc: np.ndarray
    orbital_to_atom: np.ndarray
    e_nuc: float
    n_elec: int
    coefficients: np.ndarray  # AO -> localized orbitals, column-wise

    @property
    def n_orb(self):
        return self.hcore_loc.shape[0]

    def mean_field_energy(self):
        return rhf_energy(self.hcore_loc, self.eri_loc, self.rdm1_loc, self.e_nuc)


def lowdin_transform(overlap, min_eig=1e-10):
    """Return X = S^(-1/2) so that X^T S X = I.

    Raises:
        LinearDependenceError: if an eigenvalue of S is below ``min_eig``.
    """
    S = np.asarray(overlap, dtype=float)
    e, U = np.linalg.eigh(0.5 * (S + S.T))
    if e.min() < min_eig:
        raise LinearDependenceError(
            f"overlap eigenvalue {e.min():.3e} below {min_eig:.1e}; basis is nearly linearly dependent"
        )
    return (U / np.sqrt(e)) @ U.T


def localize(bundle, scf):
    """Express integrals and the RHF density in the Loewdin basis.

    The localized orbitals are the columns of X = S^(-1/2); the density is
    carried over as S^(1/2) D S^(1/2), which keeps its trace and
    idempotency.
    """
    if not scf.converged:
        raise ValueError("localization requires a converged mean-field solution")
    X = lowdin_transform(bundle.overlap)
    S_half = bundle.overlap @ X
    hcore = X.T @ bundle.hcore @ X
    eri = transform_eri(bundle.eri, X)
    rdm1 = S_half.T @ scf.ao_density @ S_half
    return LocalizedProblem(
        hcore_loc=0.5 * (hcore + hcore.T),
        eri_loc=eri,
        rdm1_loc=0.5 * (rdm1 + rdm1.T),
        orbital_to_atom=np.array(bundle.orbital_to_atom, copy=True),
        e_nuc=bundle.e_nuc,
        n_elec=bundle.n_elec,
        coefficients=X,
    )


def mulliken_home_population(bundle, X):
    """Fraction of each localized orbital's Mulliken population on its home atom."""
    SX = bundle.overlap @ X
    pops = X * SX  # (AO, orbital)
    atoms = np.asarray(bundle.orbital_to_atom)
    out = np.empty(X.shape[1])
    for k in range(X.shape[1]):
        out[k] = pops[atoms == atoms[k], k].sum() / pops[:, k].sum()
    return out
