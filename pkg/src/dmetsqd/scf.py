"""Restricted closed-shell Hartree-Fock with DIIS acceleration."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)


@dataclass
class ScfOptions:
    max_iter: int = 200
    energy_tol: float = 1e-10
    grad_tol: float = 1e-8
    diis: bool = True
    diis_depth: int = 8
    diis_start: int = 2
    level_shift: float = 0.0


@dataclass
class ScfResult:
    mo_coefficients: np.ndarray
    mo_energies: np.ndarray
    total_energy: float
    converged: bool
    ao_density: np.ndarray
    fock: np.ndarray
    n_iter: int
    n_elec: int

    @property
    def n_occ(self):
        return self.n_elec // 2


def coulomb_exchange(eri, dm):
    """J and K matrices of a (spin-summed or not) density ``dm``."""
    J = np.einsum("pqrs,rs->pq", eri, dm, optimize=True)
    K = np.einsum("prsq,rs->pq", eri, dm, optimize=True)
    return J, K


def fock_matrix(hcore, eri, dm):
    J, K = coulomb_exchange(eri, dm)
    return hcore + J - 0.5 * K


def rhf_energy(hcore, eri, dm, e_nuc=0.0):
    """Closed-shell energy e_nuc + Tr[D (h + F)] / 2 for a spin-summed density."""
    fock = fock_matrix(hcore, eri, dm)
    return e_nuc + 0.5 * np.einsum("pq,pq->", dm, hcore + fock)


class _Diis:
    def __init__(self, depth):
        self.depth = depth
        self.focks = []
        self.errors = []

    def update(self, fock, err):
        self.focks.append(fock)
        self.errors.append(err)
        if len(self.focks) > self.depth:
            self.focks.pop(0)
            self.errors.pop(0)
        m = len(self.focks)
        B = -np.ones((m + 1, m + 1))
        B[m, m] = 0.0
        for i in range(m):
            for j in range(i + 1):
                B[i, j] = B[j, i] = np.vdot(self.errors[i], self.errors[j])
        rhs = np.zeros(m + 1)
        rhs[m] = -1.0
        try:
            coeff = np.linalg.solve(B, rhs)[:m]
        except np.linalg.LinAlgError:
            coeff = np.linalg.lstsq(B, rhs, rcond=None)[0][:m]
        return sum(c * f for c, f in zip(coeff, self.focks))


def run_rhf(bundle, opts=None, **kwargs):
    """Solve the closed-shell Roothaan equations for ``bundle``.

    Starts from the core-Hamiltonian guess.  DIIS extrapolation uses the
    commutator FDS - SDF as error vector.  Convergence requires both the
    energy change and the commutator norm to drop below tolerance; a
    non-converged result is returned with ``converged=False``.

    Raises:
        ValueError: odd electron count.
    """
    if opts is None:
        opts = ScfOptions(**kwargs)
    elif kwargs:
        raise TypeError("pass either opts or keyword options, not both")
    if bundle.n_elec % 2:
        raise ValueError(f"restricted closed-shell HF needs an even electron count, got {bundle.n_elec}")
    S, h, eri = bundle.overlap, bundle.hcore, bundle.eri
    n_occ = bundle.n_elec // 2
    X = _orthogonalizer(S)

    def diagonalize(F):
        e, Cp = np.linalg.eigh(X.T @ F @ X)
        return e, X @ Cp

    def density(C):
        Cocc = C[:, :n_occ]
        return 2.0 * Cocc @ Cocc.T

    e_mo, C = diagonalize(h)
    D = density(C)
    diis = _Diis(opts.diis_depth) if opts.diis else None
    energy = rhf_energy(h, eri, D, bundle.e_nuc)
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        F = fock_matrix(h, eri, D)
        err = F @ D @ S - S @ D @ F
        grad = np.abs(err).max()
        F_use = F
        if diis is not None:
            F_ext = diis.update(F, err)
            if it > opts.diis_start:
                F_use = F_ext
        if opts.level_shift:
            F_use = F_use + opts.level_shift * (S - 0.5 * S @ D @ S)
        e_mo, C = diagonalize(F_use)
        D = density(C)
        new_energy = rhf_energy(h, eri, D, bundle.e_nuc)
        delta = abs(new_energy - energy)
        energy = new_energy
        logger.debug("rhf iter %d  E=%.12f  dE=%.2e  |[F,D]|=%.2e", it, energy, delta, grad)
        if delta < opts.energy_tol and grad < opts.grad_tol:
            converged = True
            break

    # canonicalize with the final Fock matrix so C^T F C is diagonal
    F = fock_matrix(h, eri, D)
    e_mo, C = diagonalize(F)
    D = density(C)
    energy = rhf_energy(h, eri, D, bundle.e_nuc)
    if not converged:
        logger.warning("RHF did not converge in %d iterations", opts.max_iter)
    return ScfResult(
        mo_coefficients=C,
        mo_energies=e_mo,
        total_energy=float(energy),
        converged=converged,
        ao_density=D,
        fock=F,
        n_iter=it,
        n_elec=bundle.n_elec,
    )


def _orthogonalizer(S):
    e, U = scipy.linalg.eigh(S)
    return U / np.sqrt(e)


def mo_integrals(bundle, scf):
    """Transform ``bundle`` integrals to the canonical MO basis of ``scf``."""
    C = scf.mo_coefficients
    h = C.T @ bundle.hcore @ C
    eri = transform_eri(bundle.eri, C)
    return h, eri


def transform_eri(eri, C):
    """(pq|rs) -> (ij|kl) by four one-index contractions."""
    out = np.tensordot(eri, C, axes=([0], [0]))        # qrs i
    out = np.tensordot(out, C, axes=([0], [0]))        # rs i j
    out = np.tensordot(out, C, axes=([0], [0]))        # s i j k
    out = np.tensordot(out, C, axes=([0], [0]))        # i j k l
    return out
