"""Determinant spaces, Slater-Condon matrix elements, Davidson and RDMs.

A determinant is a pair of bitmasks over spatial orbitals: bit p of
``alpha`` (``beta``) set means a spin-up (spin-down) electron occupies
orbital p.  Spin orbitals are ordered all-alpha first, then all-beta, in
ascending orbital index.  Integrals are real and in chemist notation.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse

from . import _kernels as K
from .errors import CapacityError, ConvergenceError

logger = logging.getLogger(__name__)

MAX_ORBITALS = 31
DEFAULT_CAPACITY = 50_000_000


class Determinant(NamedTuple):
    alpha: int
    beta: int


def _check_norb(n_orb):
    if not 0 < n_orb <= MAX_ORBITALS:
        raise ValueError(f"n_orb must be in 1..{MAX_ORBITALS}, got {n_orb}")


def _popcount(x):
    return bin(int(x)).count("1")


class SubspaceBasis:
    """Ordered, deduplicated set of determinants within one (n_alpha, n_beta) sector.

    Members are sorted by (alpha, beta); the combined key
    ``(alpha << n_orb) | beta`` is strictly increasing.
    """

    def __init__(self, alpha, beta, n_orb, n_alpha=None, n_beta=None, _sorted=False):
        _check_norb(n_orb)
        alpha = np.asarray(alpha, dtype=np.int64).ravel()
        beta = np.asarray(beta, dtype=np.int64).ravel()
        if alpha.shape != beta.shape or alpha.size == 0:
            raise ValueError("a basis needs at least one determinant and matching alpha/beta arrays")
        limit = np.int64(1) << n_orb
        if (alpha < 0).any() or (beta < 0).any() or (alpha >= limit).any() or (beta >= limit).any():
            raise ValueError(f"bitmask exceeds {n_orb} orbitals")
        keys = (alpha << n_orb) | beta
        if not _sorted:
            keys = np.unique(keys)
            alpha = keys >> n_orb
            beta = keys & (limit - 1)
        na = np.array([_popcount(a) for a in np.unique(alpha)])
        nb = np.array([_popcount(b) for b in np.unique(beta)])
        if n_alpha is None:
            n_alpha = int(na[0])
        if n_beta is None:
            n_beta = int(nb[0])
        if (na != n_alpha).any() or (nb != n_beta).any():
            raise ValueError("all determinants must share the same (n_alpha, n_beta) sector")
        self.alpha = alpha
        self.beta = beta
        self.keys = keys
        self.n_orb = int(n_orb)
        self.n_alpha = int(n_alpha)
        self.n_beta = int(n_beta)
        self._ualpha = np.unique(alpha)
        self._ubeta = np.unique(beta)
        self._index = None

    @classmethod
    def from_determinants(cls, dets, n_orb):
        dets = list(dets)
        return cls([d[0] for d in dets], [d[1] for d in dets], n_orb)

    def __len__(self):
        return self.alpha.shape[0]

    @property
    def size(self):
        return len(self)

    @property
    def n_elec(self):
        return self.n_alpha + self.n_beta

    @property
    def determinants(self):
        return [Determinant(int(a), int(b)) for a, b in zip(self.alpha, self.beta)]

    @property
    def index(self):
        """Reverse lookup Determinant -> position."""
        if self._index is None:
            self._index = {d: i for i, d in enumerate(self.determinants)}
        return self._index

    def position(self, alpha, beta):
        """Position of (alpha, beta) in the basis, or -1."""
        return int(K.find(self.keys, np.int64((int(alpha) << self.n_orb) | int(beta))))

    def __contains__(self, det):
        return self.position(det[0], det[1]) >= 0

    def __iter__(self):
        return iter(self.determinants)

    def __eq__(self, other):
        return (
            isinstance(other, SubspaceBasis)
            and self.n_orb == other.n_orb
            and np.array_equal(self.keys, other.keys)
        )

    def is_spin_closed(self):
        """True if the set is invariant under (alpha, beta) -> (beta, alpha)."""
        swapped = (self.beta << self.n_orb) | self.alpha
        return np.array_equal(np.sort(swapped), self.keys)

    def occupations(self):
        """(d, n_orb) arrays of alpha and beta occupation numbers."""
        p = np.arange(self.n_orb)
        return (self.alpha[:, None] >> p) & 1, (self.beta[:, None] >> p) & 1


@dataclass
class CiVector:
    basis: SubspaceBasis
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (len(self.basis),):
            raise ValueError("coefficient vector length must equal the basis size")

    def norm(self):
        return float(np.linalg.norm(self.coefficients))

    def occupation_numbers(self):
        """Per-orbital <n_p,up> and <n_p,down>."""
        w = self.coefficients**2
        occ_a, occ_b = self.basis.occupations()
        return w @ occ_a, w @ occ_b

    def amplitude(self, alpha, beta):
        pos = self.basis.position(alpha, beta)
        return 0.0 if pos < 0 else float(self.coefficients[pos])


@dataclass
class SpinFreeRDMs:
    """Spin-summed one- and two-particle reduced density matrices.

    ``one_rdm[p, r] = <E_pr>`` and ``two_rdm[p, r, q, s] = <e_pq,rs>`` with
    E = sum t_pr D_pr + 1/2 sum (pr|qs) G_prqs.
    """

    one_rdm: np.ndarray
    two_rdm: np.ndarray

    def energy(self, h, eri, e_core=0.0):
        return float(
            e_core
            + np.einsum("pr,pr->", h, self.one_rdm)
            + 0.5 * np.einsum("prqs,prqs->", eri, self.two_rdm, optimize=True)
        )


# ----------------------------------------------------------------------------
# enumeration


def _strings(n_orb, n_el):
    out = [sum(1 << p for p in occ) for occ in itertools.combinations(range(n_orb), n_el)]
    return np.array(sorted(out), dtype=np.int64)


def count_full_space(n_orb, n_alpha, n_beta):
    """Dimension C(n_orb, n_alpha) * C(n_orb, n_beta) of a determinant sector."""
    if not (0 <= n_alpha <= n_orb and 0 <= n_beta <= n_orb):
        raise ValueError("electron counts must lie in 0..n_orb")
    return math.comb(n_orb, n_alpha) * math.comb(n_orb, n_beta)


def enumerate_full_space(n_orb, n_alpha, n_beta, count_only=False, capacity=DEFAULT_CAPACITY):
    """All determinants of a sector, sorted; or just their number.

    Raises:
        CapacityError: the sector holds more than ``capacity`` determinants
            (never raised with ``count_only=True``).
    """
    dim = count_full_space(n_orb, n_alpha, n_beta)
    if count_only:
        return dim
    if dim > capacity:
        raise CapacityError(f"sector has {dim} determinants, above the cap of {capacity}")
    _check_norb(n_orb)
    sa = _strings(n_orb, n_alpha)
    sb = _strings(n_orb, n_beta)
    alpha = np.repeat(sa, len(sb))
    beta = np.tile(sb, len(sa))
    return SubspaceBasis(alpha, beta, n_orb, n_alpha, n_beta, _sorted=True)


# ----------------------------------------------------------------------------
# Slater-Condon rules, reference (pure Python) implementation


def _spin_orbitals(det, n_orb):
    a, b = int(det[0]), int(det[1])
    return [p for p in range(n_orb) if a >> p & 1] + [n_orb + p for p in range(n_orb) if b >> p & 1]


def _annihilate(occ, p):
    pos = occ.index(p)
    return (-1) ** pos, occ[:pos] + occ[pos + 1:]


def _create(occ, p):
    pos = sum(1 for q in occ if q < p)
    return (-1) ** pos, occ[:pos] + [p] + occ[pos:]


def _so_integral(p, q, r, s, eri, n):
    """Spin-orbital (pq|rs) from spatial integrals."""
    if p // n != q // n or r // n != s // n:
        return 0.0
    return eri[p % n, q % n, r % n, s % n]


def slater_condon_element(I, J, h, eri):
    """<I|H|J> for the electronic Hamiltonian via the Slater-Condon rules.

    Both determinants must lie in the same spin sector.  Returns 0 when they
    differ by more than a double excitation.
    """
    h = np.asarray(h)
    n = h.shape[0]
    occ_i = _spin_orbitals(I, n)
    occ_j = _spin_orbitals(J, n)
    holes = sorted(set(occ_j) - set(occ_i))      # occupied in J only
    parts = sorted(set(occ_i) - set(occ_j))      # occupied in I only
    if len(holes) != len(parts):
        raise ValueError("determinants belong to different particle-number sectors")
    if len(holes) > 2:
        return 0.0

    def h1(p, q):
        return h[p % n, q % n] if p // n == q // n else 0.0

    if not holes:
        e = sum(h1(p, p) for p in occ_i)
        for x, p in enumerate(occ_i):
            for q in occ_i[:x]:
                e += _so_integral(p, p, q, q, eri, n) - _so_integral(p, q, q, p, eri, n)
        return float(e)

    # phase of the operator string that maps |J> onto |I>
    sign = 1
    occ = list(occ_j)
    for p in holes:
        s, occ = _annihilate(occ, p)
        sign *= s
    for p in reversed(parts):
        s, occ = _create(occ, p)
        sign *= s
    assert occ == occ_i

    if len(holes) == 1:
        (m,), (p,) = holes, parts
        v = h1(p, m)
        for k in occ_i:
            if k != p:
                v += _so_integral(p, m, k, k, eri, n) - _so_integral(p, k, k, m, eri, n)
        return float(sign * v)

    m1, m2 = holes
    p1, p2 = parts
    # a+_p1 a+_p2 a_m2 a_m1 |J> = sign |I>
    v = _so_integral(p1, m1, p2, m2, eri, n) - _so_integral(p1, m2, p2, m1, eri, n)
    return float(sign * v)


def build_dense_hamiltonian(basis, h, eri):
    """Dense projected Hamiltonian from pairwise Slater-Condon evaluation (oracle path)."""
    dets = basis.determinants
    d = len(dets)
    H = np.zeros((d, d))
    for i in range(d):
        for j in range(i + 1):
            H[i, j] = H[j, i] = slater_condon_element(dets[i], dets[j], h, eri)
    return H


# ----------------------------------------------------------------------------
# connection-driven Hamiltonian


class SubspaceHamiltonian:
    """Hamiltonian projected onto a :class:`SubspaceBasis`.

    Matrix elements are generated from the singles and doubles of each
    determinant that are present in the basis.  When the number of stored
    elements stays below ``max_stored`` a CSR matrix is cached; otherwise
    each product recomputes the rows.
    """

    def __init__(self, basis, h, eri, max_stored=30_000_000):
        n = basis.n_orb
        self.basis = basis
        self.h = np.ascontiguousarray(h, dtype=float)
        self.eri = np.ascontiguousarray(eri, dtype=float)
        if self.h.shape != (n, n) or self.eri.shape != (n,) * 4:
            raise ValueError("integrals are not dimensioned to the basis orbital count")
        diag_idx = np.arange(n)
        self._J = np.ascontiguousarray(self.eri[diag_idx[:, None], diag_idx[:, None], diag_idx, diag_idx])
        self._K = np.ascontiguousarray(self.eri[diag_idx[:, None], diag_idx, diag_idx, diag_idx[:, None]])
        self._args = (basis.alpha, basis.beta, basis.keys, basis._ualpha, basis._ubeta, n)
        self._sector = (basis.n_alpha, basis.n_beta)
        self.max_stored = max_stored
        self._csr = None
        self._diag = None
        self._stored = None

    @property
    def shape(self):
        d = len(self.basis)
        return (d, d)

    def diagonal(self):
        if self._diag is None:
            b = self.basis
            self._diag = K.diagonal(b.alpha, b.beta, b.n_orb, self.h, self._J, self._K)
        return self._diag

    def _maybe_store(self):
        if self._stored is None:
            nnz = K.count_nnz(*self._args, *self._sector)
            self._stored = nnz <= self.max_stored
            if self._stored:
                indptr, indices, data = K.build_csr(
                    *self._args, *self._sector, self.h, self.eri, self._J, self._K, nnz
                )
                d = len(self.basis)
                self._csr = scipy.sparse.csr_matrix((data, indices, indptr), shape=(d, d))
        return self._stored

    def matmat(self, X):
        X = np.asarray(X, dtype=float)
        squeeze = X.ndim == 1
        if squeeze:
            X = X[:, None]
        if self._maybe_store():
            Y = np.asarray(self._csr @ X)
        else:
            Y = K.matvec_direct(*self._args, *self._sector, self.h, self.eri, self._J, self._K,
                                np.ascontiguousarray(X))
        return Y[:, 0] if squeeze else Y

    def matvec(self, x):
        return self.matmat(x)

    __matmul__ = matmat

    def to_dense(self):
        if self._maybe_store():
            return self._csr.toarray()
        return self.matmat(np.eye(len(self.basis)))


def apply_hamiltonian(basis, h, eri, x):
    """y = P H P x on the subspace spanned by ``basis``."""
    return SubspaceHamiltonian(basis, h, eri).matvec(x)


# ----------------------------------------------------------------------------
# Davidson


@dataclass
class DavidsonOptions:
    tol: float = 1e-8
    max_subspace: int = 24
    restart_size: int = 4
    max_iter: int = 500
    precond_floor: float = 1e-6
    n_guess: int = 4


@dataclass
class DavidsonInfo:
    n_iter: int
    residual: float
    converged: bool = True
    history: list = field(default_factory=list)


def davidson(matmat, diag, opts=None, guess=None):
    """Lowest eigenpair of a real symmetric operator.

    Args:
        matmat: callable mapping a (d, k) block to H times the block.
        diag: diagonal of H, used for the guess and the preconditioner.
        opts: :class:`DavidsonOptions`.
        guess: optional starting vector.

    Returns:
        (eigenvalue, eigenvector, DavidsonInfo)

    Raises:
        ConvergenceError: residual still above ``opts.tol`` after ``max_iter``.
    """
    opts = opts or DavidsonOptions()
    diag = np.asarray(diag, dtype=float)
    d = diag.shape[0]
    if d == 1:
        return float(diag[0]), np.ones(1), DavidsonInfo(0, 0.0)

    if guess is not None:
        V = np.asarray(guess, dtype=float).reshape(d, 1)
    else:
        order = np.argsort(diag, kind="stable")[: min(d - 1, opts.n_guess)]
        V = np.zeros((d, len(order) + 1))
        V[order, np.arange(len(order))] = 1.0
        # a fixed pseudo-random column seeds every symmetry sector; unit
        # vectors alone can be orthogonal to the ground state
        V[:, -1] = np.random.Generator(np.random.Philox(key=0x5EED)).standard_normal(d)
    V, _ = np.linalg.qr(V)
    AV = matmat(V)
    best = (np.inf, None, None)
    theta, x = None, None
    info = DavidsonInfo(0, np.inf, converged=False)
    for it in range(1, opts.max_iter + 1):
        Hs = V.T @ AV
        Hs = 0.5 * (Hs + Hs.T)
        evals, evecs = np.linalg.eigh(Hs)
        theta = evals[0]
        x = V @ evecs[:, 0]
        Ax = AV @ evecs[:, 0]
        r = Ax - theta * x
        rnorm = float(np.linalg.norm(r))
        info.history.append((float(theta), rnorm))
        if rnorm < best[0]:
            best = (rnorm, float(theta), x.copy())
        info.n_iter = it
        info.residual = rnorm
        if rnorm < opts.tol:
            info.converged = True
            break
        denom = diag - theta
        small = np.abs(denom) < opts.precond_floor
        denom[small] = np.where(denom[small] >= 0, opts.precond_floor, -opts.precond_floor)
        t = r / denom
        # two passes of Gram-Schmidt against the current subspace
        for _ in range(2):
            t -= V @ (V.T @ t)
        tnorm = np.linalg.norm(t)
        if tnorm < 1e-10:
            # preconditioned residual lies in the subspace; fall back to the raw residual
            t = r - V @ (V.T @ r)
            for _ in range(1):
                t -= V @ (V.T @ t)
            tnorm = np.linalg.norm(t)
            if tnorm < 1e-14:
                # subspace is invariant: theta is exact up to roundoff
                info.converged = rnorm < max(opts.tol, 1e-10)
                break
        t /= tnorm
        if V.shape[1] >= opts.max_subspace:
            keep = min(opts.restart_size, V.shape[1])
            V = V @ evecs[:, :keep]
            AV = AV @ evecs[:, :keep]
            V, R = np.linalg.qr(V)
            AV = np.linalg.solve(R.T, AV.T).T
            t -= V @ (V.T @ t)
            t /= np.linalg.norm(t)
        V = np.column_stack([V, t])
        AV = np.column_stack([AV, matmat(t[:, None])])
    if not info.converged:
        raise ConvergenceError(
            f"Davidson did not converge: residual {best[0]:.3e} after {info.n_iter} iterations",
            residual=best[0],
            iterate=(best[1], best[2]),
        )
    # sign convention: largest-magnitude coefficient positive
    k = int(np.argmax(np.abs(x)))
    if x[k] < 0:
        x = -x
    return float(theta), x / np.linalg.norm(x), info


def davidson_ground_state(basis, h, eri, opts=None, **kwargs):
    """Lowest eigenpair of the Hamiltonian projected on ``basis``.

    Returns:
        (electronic energy, CiVector)
    """
    opts = opts or DavidsonOptions(**kwargs)
    H = SubspaceHamiltonian(basis, h, eri)
    e, x, info = davidson(H.matmat, H.diagonal(), opts)
    logger.debug("davidson d=%d iterations=%d residual=%.2e", len(basis), info.n_iter, info.residual)
    return e, CiVector(basis, x)


def fci_ground_state(h, eri, n_alpha, n_beta, opts=None):
    """Exact ground state in the full (n_alpha, n_beta) sector."""
    basis = enumerate_full_space(h.shape[0], n_alpha, n_beta)
    return davidson_ground_state(basis, h, eri, opts)


# ----------------------------------------------------------------------------
# reduced density matrices


def compute_rdms(c):
    """Spin-summed 1- and 2-RDMs of a normalized :class:`CiVector`."""
    b = c.basis
    n = b.n_orb
    D = np.zeros((n, n))
    G = np.zeros((n, n, n, n))
    K.accumulate_rdms(
        b.alpha, b.beta, b.keys, b._ualpha, b._ubeta, n, b.n_alpha, b.n_beta,
        np.ascontiguousarray(c.coefficients), D, G,
    )
    return SpinFreeRDMs(D, G)


def significant_config_count(c, threshold=1e-8):
    """Number of amplitudes with |c_m|^2 >= threshold."""
    coeff = c.coefficients if isinstance(c, CiVector) else np.asarray(c)
    return int(np.count_nonzero(coeff**2 >= threshold))
