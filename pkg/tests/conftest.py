import functools

import numpy as np
import pytest
import scipy.sparse as sp

from dmetsqd import localize as loc_mod
from dmetsqd import molio, scf

# Reference values computed independently with PySCF (STO-3G, default settings).
PYSCF = {
    "h2_overlap": 0.6589571202740983,
    "h2_enuc": 0.7137539936876182,
    "h2_rhf": -1.11668438708534,
    "h2_fci": -1.137270174660903,
    "h4_ring_fci": -1.9151065495117994,
    "h6_ring_rhf": -3.15704746662552,
    "h6_ring_fci": -3.237476730552717,
    "h6_ring_1.3_fci": -3.1225337787703005,
}


def h2_geometry(distance=0.7414):
    return molio.Geometry(("H", "H"), np.array([[0.0, 0.0, 0.0], [0.0, 0.0, distance]]))


@functools.lru_cache(maxsize=None)
def system(name):
    """(bundle, rhf, localized problem) for a named test system."""
    if name == "h2":
        bundle = molio.compute_sto3g_h_integrals(h2_geometry())
    else:
        n, r = {"h4": (4, 1.0), "h6": (6, 1.0), "h6_1.3": (6, 1.3), "h6_0.7": (6, 0.7)}[name]
        bundle = molio.compute_sto3g_h_integrals(molio.build_h_ring(n, r))
    mf = scf.run_rhf(bundle)
    return bundle, mf, loc_mod.localize(bundle, mf)


def distorted_chain():
    """Low-symmetry H6 that needs several SCF iterations."""
    rng = np.random.default_rng(11)
    coords = np.column_stack([np.arange(6) * 0.9, np.zeros(6), np.zeros(6)]) + rng.normal(scale=0.15, size=(6, 3))
    return molio.compute_sto3g_h_integrals(molio.Geometry(("H",) * 6, coords))


@functools.lru_cache(maxsize=None)
def mo_problem(name):
    bundle, mf, _ = system(name)
    h, eri = scf.mo_integrals(bundle, mf)
    return bundle, h, eri


def random_integrals(n, seed):
    """Random real integrals with the usual 8-fold permutational symmetry."""
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(n, n))
    h = 0.5 * (h + h.T)
    g = rng.normal(size=(n, n, n, n))
    g = g + g.transpose(1, 0, 2, 3)
    g = g + g.transpose(0, 1, 3, 2)
    g = g + g.transpose(2, 3, 0, 1)
    return h, 0.125 * g


class FockSpace:
    """Second-quantized operators on all 2^(2n) occupation states (Jordan-Wigner).

    Spin orbital j < n is orbital j spin up, j >= n is orbital j - n spin
    down.  State index bit j is the occupation of spin orbital j, and the
    ascending-ordered product of creators acting on the vacuum has sign +1.
    """

    def __init__(self, n):
        self.n = n
        m = 2 * n
        dim = 1 << m
        states = np.arange(dim)
        self.ann = []
        for j in range(m):
            src = states[(states >> j) & 1 == 1]
            sign = np.array([(-1) ** bin(s & ((1 << j) - 1)).count("1") for s in src], dtype=float)
            self.ann.append(sp.csr_matrix((sign, (src ^ (1 << j), src)), shape=(dim, dim)))
        self.cre = [A.T.tocsr() for A in self.ann]

    def hamiltonian(self, h, eri):
        n = self.n
        dim = self.ann[0].shape[0]
        H = sp.csr_matrix((dim, dim))
        for s in range(2):
            for p in range(n):
                for q in range(n):
                    if h[p, q]:
                        H += h[p, q] * self.cre[p + s * n] @ self.ann[q + s * n]
        for s in range(2):
            for t in range(2):
                for p in range(n):
                    for q in range(n):
                        for r in range(n):
                            for u in range(n):
                                v = eri[p, q, r, u]
                                if v:
                                    H += 0.5 * v * (self.cre[p + s * n] @ self.cre[r + t * n]
                                                    @ self.ann[u + t * n] @ self.ann[q + s * n])
        return H.toarray()

    def index(self, alpha, beta):
        return int(alpha) | (int(beta) << self.n)

    def rdms(self, state):
        n = self.n
        D = np.zeros((n, n))
        G = np.zeros((n, n, n, n))
        for s in range(2):
            for p in range(n):
                for r in range(n):
                    D[p, r] += state @ self.cre[p + s * n] @ self.ann[r + s * n] @ state
        for s in range(2):
            for t in range(2):
                for p in range(n):
                    for r in range(n):
                        for q in range(n):
                            for u in range(n):
                                G[p, r, q, u] += state @ (self.cre[p + s * n] @ self.cre[q + t * n]
                                                          @ self.ann[u + t * n] @ self.ann[r + s * n]) @ state
        return D, G


@functools.lru_cache(maxsize=None)
def fock_space(n):
    return FockSpace(n)


@pytest.fixture
def h4():
    return system("h4")


@pytest.fixture
def h6():
    return system("h6")


# criterion number -> PASS/FAIL line, filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
