"""One-shot density matrix embedding with a global chemical potential.

Each fragment is embedded with the bath orbitals obtained from the
environment block of the mean-field density.  The embedding Hamiltonian
carries the occupied-environment Coulomb and exchange field in its one-body
part.  A single chemical potential, applied to fragment orbitals only, is
adjusted until the fragment electron counts add up to the total.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import detspace
from .errors import ChemicalPotentialError
from .sampler import apply_readout_noise, sample_from_state
from .scf import coulomb_exchange, transform_eri
from .sqd import SqdOptions, sqd_ground_state

logger = logging.getLogger(__name__)

MU_SCAN = (0.01, 0.05, 0.25, 1.0)


@dataclass
class FragmentSpec:
    fragments: list
    solver: str = "fci"

    def __post_init__(self):
        self.fragments = [tuple(sorted(int(p) for p in f)) for f in self.fragments]
        self.solver = self.solver.lower()
        if self.solver not in ("fci", "sqd"):
            raise ValueError(f"unknown fragment solver {self.solver!r}")
        if any(len(f) == 0 for f in self.fragments):
            raise ValueError("fragments must be nonempty")

    def check_tiling(self, n_orb):
        seen = [p for f in self.fragments for p in f]
        if len(seen) != len(set(seen)):
            raise ValueError("fragments overlap")
        if sorted(seen) != list(range(n_orb)):
            raise ValueError(f"fragments must tile all {n_orb} localized orbitals")


def parse_fragments(text):
    """'0,1;2,3' -> [(0, 1), (2, 3)]."""
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if chunk:
            out.append(tuple(int(x) for x in chunk.split(",")))
    return out


def fragments_from_atoms(orbital_to_atom, atom_groups):
    """Orbital index sets of the given groups of atoms."""
    orbital_to_atom = np.asarray(orbital_to_atom)
    return [tuple(np.nonzero(np.isin(orbital_to_atom, list(g)))[0].tolist()) for g in atom_groups]


@dataclass
class EmbeddingBasis:
    fragment_indices: tuple
    env_indices: np.ndarray
    bath_coefficients: np.ndarray   # (n_env, n_bath)
    occ_env_density: np.ndarray     # (n_env, n_env), trace 2 * n_occ_env
    n_occ_env: int
    eigenvalues: np.ndarray
    n_orb: int

    @property
    def n_bath(self):
        return self.bath_coefficients.shape[1]

    @property
    def n_emb(self):
        return len(self.fragment_indices) + self.n_bath

    def columns(self):
        """(n_orb, n_emb) map from embedding orbitals to localized orbitals."""
        B = np.zeros((self.n_orb, self.n_emb))
        nf = len(self.fragment_indices)
        B[list(self.fragment_indices), np.arange(nf)] = 1.0
        B[np.ix_(self.env_indices, np.arange(nf, self.n_emb))] = self.bath_coefficients
        return B


def build_bath(local, fragment, class_tol=1e-8):
    """Split the environment into virtual, bath and occupied orbitals.

    Eigenvalues below ``class_tol`` are virtual, above ``2 - class_tol``
    occupied; everything in between is a bath orbital.
    """
    n = local.n_orb
    frag = tuple(sorted(int(p) for p in fragment))
    if not frag or len(set(frag)) != len(frag) or min(frag) < 0 or max(frag) >= n:
        raise ValueError(f"invalid fragment {fragment!r}")
    env = np.array([p for p in range(n) if p not in frag], dtype=int)
    if env.size == 0:
        return EmbeddingBasis(frag, env, np.zeros((0, 0)), np.zeros((0, 0)), 0, np.zeros(0), n)
    rho_env = local.rdm1_loc[np.ix_(env, env)]
    delta, W = np.linalg.eigh(0.5 * (rho_env + rho_env.T))
    occupied = delta > 2.0 - class_tol
    bath = ~occupied & (delta >= class_tol)
    W_occ = W[:, occupied]
    return EmbeddingBasis(
        fragment_indices=frag,
        env_indices=env,
        bath_coefficients=W[:, bath],
        occ_env_density=2.0 * W_occ @ W_occ.T,
        n_occ_env=int(occupied.sum()),
        eigenvalues=delta,
        n_orb=n,
    )


@dataclass
class EmbeddingProblem:
    h_eff: np.ndarray
    h_bare: np.ndarray
    h_dressed: np.ndarray
    eri_emb: np.ndarray
    n_elec_emb: int
    fragment_slots: np.ndarray
    mu: float
    e_core: float
    basis: EmbeddingBasis = field(repr=False)

    @property
    def n_orb(self):
        return self.h_eff.shape[0]

    @property
    def n_alpha(self):
        return self.n_elec_emb // 2

    @property
    def n_beta(self):
        return self.n_elec_emb // 2

    def with_mu(self, mu):
        h = self.h_dressed.copy()
        h[self.fragment_slots, self.fragment_slots] -= mu
        return replace(self, h_eff=h, mu=float(mu))


def build_embedding_hamiltonian(local, basis, mu=0.0):
    """Fragment+bath Hamiltonian dressed by the occupied environment.

    The one-body part is t + J[rho_env] - K[rho_env]/2 with the spin-summed
    occupied-environment density, minus ``mu`` on the fragment orbitals.

    Raises:
        ValueError: odd or out-of-range embedding electron count.
    """
    B = basis.columns()
    n = local.n_orb
    rho_core = np.zeros((n, n))
    if basis.n_occ_env:
        rho_core[np.ix_(basis.env_indices, basis.env_indices)] = basis.occ_env_density
    J, K = coulomb_exchange(local.eri_loc, rho_core)
    v_core = J - 0.5 * K
    e_core = float(np.einsum("pq,pq->", rho_core, local.hcore_loc + 0.5 * v_core))
    h_bare = B.T @ local.hcore_loc @ B
    h_dressed = B.T @ (local.hcore_loc + v_core) @ B
    h_dressed = 0.5 * (h_dressed + h_dressed.T)
    n_elec_emb = local.n_elec - 2 * basis.n_occ_env
    if n_elec_emb % 2 or n_elec_emb < 0 or n_elec_emb > 2 * basis.n_emb:
        raise ValueError(
            f"embedding problem has {n_elec_emb} electrons in {basis.n_emb} orbitals; "
            "closed-shell solvers need an even count that fits"
        )
    problem = EmbeddingProblem(
        h_eff=h_dressed,
        h_bare=0.5 * (h_bare + h_bare.T),
        h_dressed=h_dressed,
        eri_emb=transform_eri(local.eri_loc, B),
        n_elec_emb=n_elec_emb,
        fragment_slots=np.arange(len(basis.fragment_indices)),
        mu=0.0,
        e_core=e_core,
        basis=basis,
    )
    return problem.with_mu(mu)


def fragment_energy_and_number(problem, rdms):
    """Democratically partitioned fragment energy and electron count.

    E_F = sum_{f,u} (h_bare + t_dressed)_fu D_fu / 2
          + 1/2 sum_{f,u,v,w} (fu|vw) G_fuvw,   N_F = sum_f D_ff
    with f restricted to fragment orbitals and the dressing taken at mu = 0.
    """
    D, G = rdms.one_rdm, rdms.two_rdm
    n = problem.n_orb
    if D.shape != (n, n) or G.shape != (n,) * 4:
        raise ValueError("RDM dimensions do not match the embedding problem")
    f = problem.fragment_slots
    h_avg = 0.5 * (problem.h_bare + problem.h_dressed)
    e1 = np.einsum("fu,fu->", h_avg[f], D[f])
    e2 = 0.5 * np.einsum("fuvw,fuvw->", problem.eri_emb[f], G[f], optimize=True)
    return float(e1 + e2), float(D[f, f].sum())


# ----------------------------------------------------------------------------
# fragment solvers


@dataclass
class FragmentSolution:
    energy: float          # lowest eigenvalue of the mu-shifted embedding Hamiltonian
    vector: object         # CiVector
    rdms: detspace.SpinFreeRDMs
    diagnostics: dict = field(default_factory=dict)


class FciSolver:
    """Exact diagonalization of the embedding Hamiltonian."""

    name = "fci"

    def __init__(self, davidson=None):
        self.davidson = davidson or detspace.DavidsonOptions()

    def solve(self, problem, fragment_index=0):
        e, vec = detspace.fci_ground_state(
            problem.h_eff, problem.eri_emb, problem.n_alpha, problem.n_beta, self.davidson
        )
        return FragmentSolution(e, vec, detspace.compute_rdms(vec), {"d": len(vec.basis)})


class SqdSolver:
    """S-CORE subspace diagonalization of the embedding Hamiltonian.

    Shots are obtained once per fragment at mu = 0, either from ``samples``
    (a mapping fragment index -> SampleSet) or by sampling the exact
    ground state of the mu = 0 embedding problem, optionally passed through
    a readout-noise channel.  A preparatory run of ``initial_iterations``
    S-CORE iterations at mu = 0 fixes a warm-start occupation distribution;
    every solve, at any mu including zero, then runs ``mu_iterations``
    iterations on the same shots from that distribution.  Since the RNG
    streams do not depend on mu, the particle number varies smoothly with mu
    except where a recovered subspace changes.
    """

    name = "sqd"

    def __init__(self, options=None, shots=10_000, noise=0.0, seed=0,
                 initial_iterations=10, mu_iterations=3, samples=None):
        self.options = options or SqdOptions(seed=seed)
        self.shots = int(shots)
        self.noise = float(noise)
        self.seed = int(seed)
        self.initial_iterations = initial_iterations
        self.mu_iterations = mu_iterations
        self.samples = dict(samples or {})
        self._warm = {}

    def _fragment_seed(self, fragment_index):
        return int(np.random.SeedSequence([self.seed, fragment_index]).generate_state(1)[0])

    def fragment_samples(self, problem, fragment_index):
        if fragment_index in self.samples:
            return self.samples[fragment_index]
        ref = problem.with_mu(0.0)
        _, vec = detspace.fci_ground_state(ref.h_eff, ref.eri_emb, ref.n_alpha, ref.n_beta,
                                           self.options.davidson)
        seed = self._fragment_seed(fragment_index)
        shots = sample_from_state(vec, self.shots, seed)
        if self.noise > 0:
            shots = apply_readout_noise(shots, self.noise, seed)
        self.samples[fragment_index] = shots
        return shots

    def _run(self, problem, samples, n_iter, initial, fragment_index):
        opts = replace(self.options, n_iterations=n_iter, seed=self._fragment_seed(fragment_index))
        return sqd_ground_state(samples, problem.h_eff, problem.eri_emb, problem.n_alpha,
                                problem.n_beta, opts, initial=initial)

    def warm_start(self, problem, fragment_index=0):
        """Shots and the mu = 0 S-CORE result for a fragment (computed once)."""
        if fragment_index not in self._warm:
            ref = problem.with_mu(0.0)
            samples = self.fragment_samples(ref, fragment_index)
            r0 = self._run(ref, samples, self.initial_iterations, None, fragment_index)
            self._warm[fragment_index] = (samples, r0)
        return self._warm[fragment_index]

    def solve(self, problem, fragment_index=0):
        samples, r0 = self.warm_start(problem, fragment_index)
        if self.mu_iterations:
            r = self._run(problem, samples, self.mu_iterations, r0.occupations, fragment_index)
        else:
            r = r0
        history = r0.history + [dict(h, iteration=h["iteration"] + self.initial_iterations)
                                for h in (r.history if r is not r0 else [])]
        diag = {"history": history, "d": max(h["d"] for h in r.history), **r.diagnostics,
                "fallback_occupations": r0.diagnostics.get("fallback_occupations", False)}
        return FragmentSolution(r.energy, r.best, detspace.compute_rdms(r.best), diag)


def make_solver(name, **kwargs):
    if name == "fci":
        return FciSolver(**kwargs)
    if name == "sqd":
        return SqdSolver(**kwargs)
    raise ValueError(f"unknown solver {name!r}")


# ----------------------------------------------------------------------------
# chemical potential


@dataclass
class FragmentResult:
    fragment: tuple
    energy: float
    n_electrons: float
    diagnostics: dict


@dataclass
class DmetResult:
    total_energy: float
    particle_number: float
    mu_star: float
    per_fragment: list
    trace: list
    n_elec: int
    converged: bool = True

    @property
    def particle_error(self):
        return self.particle_number - self.n_elec


class DmetEvaluator:
    """Fragment problems of a localized system and their solution at a given mu."""

    def __init__(self, local, spec, solver, class_tol=1e-8):
        spec.check_tiling(local.n_orb)
        self.local = local
        self.spec = spec
        self.solver = solver
        self.bases = [build_bath(local, f, class_tol) for f in spec.fragments]
        self.problems = [build_embedding_hamiltonian(local, b, 0.0) for b in self.bases]

    def evaluate(self, mu):
        """Total energy, DMET electron count and per-fragment results at ``mu``."""
        per_fragment = []
        energy = self.local.e_nuc
        number = 0.0
        # reduce in fragment order so sums are reproducible
        for k, p0 in enumerate(self.problems):
            problem = p0.with_mu(mu)
            sol = self.solver.solve(problem, k)
            e_f, n_f = fragment_energy_and_number(problem, sol.rdms)
            diag = {
                "n_emb": problem.n_orb,
                "n_elec_emb": problem.n_elec_emb,
                "n_bath": problem.basis.n_bath,
                "embedding_energy": sol.energy,
                **sol.diagnostics,
            }
            per_fragment.append(FragmentResult(self.spec.fragments[k], e_f, n_f, diag))
            energy += e_f
            number += n_f
        return energy, number, per_fragment


def optimize_chemical_potential(local, spec, solver=None, threshold=1e-5, class_tol=1e-8,
                                scan=MU_SCAN, max_bisections=200, min_width=1e-10):
    """Find mu with |sum_F N_F(mu) - N_elec| <= threshold.

    mu = 0 is tried first.  Otherwise the scan walks away from zero in the
    direction that reduces the particle-number error until the sign flips,
    and bisection on the bracket finishes the job.

    A sampled solver can make g(mu) jump across zero.  If the bracket shrinks
    below ``min_width`` without meeting ``threshold``, the endpoint with the
    smaller |g| is returned with ``converged=False``.

    Raises:
        ChemicalPotentialError: no sign change within the scan.  The
            exception carries the (mu, g) trace.
    """
    if solver is None:
        solver = make_solver(spec.solver)
    ev = DmetEvaluator(local, spec, solver, class_tol)
    n_target = local.n_elec
    trace = []

    seen = {}

    def g(mu):
        e, n, frags = ev.evaluate(mu)
        trace.append((float(mu), n - n_target))
        seen[float(mu)] = (e, n, frags)
        logger.info("mu=% .8f  N=%.10f  E=%.10f", mu, n, e)
        return n - n_target, e, n, frags

    def done(mu, converged=True):
        e, n, frags = seen[float(mu)]
        return DmetResult(e, n, float(mu), frags, trace, n_target, converged)

    g0 = g(0.0)[0]
    if abs(g0) <= threshold:
        return done(0.0)
    direction = 1.0 if g0 < 0 else -1.0
    lo, g_lo = 0.0, g0
    hi = None
    for step in scan:
        mu = direction * step
        gm = g(mu)[0]
        if abs(gm) <= threshold:
            return done(mu)
        if np.sign(gm) != np.sign(g0):
            hi, g_hi = mu, gm
            break
        lo, g_lo = mu, gm
    if hi is None:
        raise ChemicalPotentialError(
            f"particle-number error did not change sign for |mu| <= {scan[-1]}", trace
        )
    # keep a with g(a) < 0 and b with g(b) > 0
    (a, ga), (b, gb) = sorted([(lo, g_lo), (hi, g_hi)], key=lambda t: t[1])
    for _ in range(max_bisections):
        if abs(b - a) < min_width:
            break
        mid = 0.5 * (a + b)
        gm = g(mid)[0]
        if abs(gm) <= threshold:
            return done(mid)
        if gm < 0:
            a, ga = mid, gm
        else:
            b, gb = mid, gm
    mu = a if abs(ga) <= abs(gb) else b
    logger.warning("particle number jumps across zero near mu=%.3e (|g| = %.2e > %.1e)",
                   mu, min(abs(ga), abs(gb)), threshold)
    return done(mu, converged=False)


def run_dmet(local, spec, solver=None, threshold=1e-5, class_tol=1e-8):
    """One-shot DMET: bath construction, embedding, solve, and mu fitting."""
    return optimize_chemical_potential(local, spec, solver, threshold, class_tol)


def evaluate_at_mu(local, spec, solver, mu, class_tol=1e-8):
    """Energy and electron count at a fixed mu (a single evaluation, no fitting)."""
    e, n, frags = DmetEvaluator(local, spec, solver, class_tol).evaluate(mu)
    return e, n, frags
