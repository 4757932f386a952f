"""Sample-based diagonalization with self-consistent configuration recovery.

One S-CORE iteration takes the raw shots and the current occupation
distribution, repairs each shot to the target (n_alpha, n_beta) by weighted
random bit flips, draws K batches from the repaired set, closes every batch
under alpha/beta exchange, diagonalizes the projected Hamiltonian in each
batch, and averages the batch occupation numbers into the distribution used
by the next iteration.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .detspace import DavidsonOptions, SubspaceBasis, davidson_ground_state, significant_config_count
from .errors import ConvergenceError
from .sampler import SampleSet, make_rng

logger = logging.getLogger(__name__)

# RNG stream tags
_RECOVER = 2
_BATCH = 3


@dataclass
class OccupationDistribution:
    up: np.ndarray
    down: np.ndarray
    fallback: bool = False

    def __post_init__(self):
        self.up = np.asarray(self.up, dtype=float)
        self.down = np.asarray(self.down, dtype=float)
        if self.up.shape != self.down.shape:
            raise ValueError("up and down occupations differ in length")
        if (self.up < -1e-12).any() or (self.up > 1 + 1e-12).any() or \
                (self.down < -1e-12).any() or (self.down > 1 + 1e-12).any():
            raise ValueError("occupation numbers must lie in [0, 1]")


@dataclass
class SqdOptions:
    n_batches: int = 5
    batch_size: int = 1000
    n_iterations: int = 10
    seed: int = 0
    davidson: DavidsonOptions = field(default_factory=DavidsonOptions)
    flip_smoothing: float = 1e-3
    spin_closure: bool = True
    significance: float = 1e-8

    def __post_init__(self):
        if self.n_batches < 1 or self.batch_size < 1 or self.n_iterations < 1:
            raise ValueError("n_batches, batch_size and n_iterations must be >= 1")


@dataclass
class SqdResult:
    energy: float
    best: object  # CiVector
    occupations: OccupationDistribution
    history: list
    diagnostics: dict

    def __iter__(self):
        return iter((self.energy, self.best, self.occupations, self.history))


def _bits(x, n):
    return ((x[:, None] >> np.arange(n)) & 1).astype(bool)


def _pack(bits):
    return bits.astype(np.int64) @ (np.int64(1) << np.arange(bits.shape[1], dtype=np.int64))


def aufbau_occupations(n_orb, n_alpha, n_beta):
    up = np.zeros(n_orb)
    down = np.zeros(n_orb)
    up[:n_alpha] = 1.0
    down[:n_beta] = 1.0
    return OccupationDistribution(up, down)


def post_select(samples, n_alpha, n_beta):
    """Keep shots with exactly (n_alpha, n_beta) electrons.

    Returns the kept shots and their mean per-orbital occupancy.  If no shot
    survives, the distribution falls back to aufbau filling of the lowest
    orbitals and carries ``fallback=True``.
    """
    ca, cb = samples.popcounts()
    mask = (ca == n_alpha) & (cb == n_beta)
    kept = SampleSet(samples.n_orb, samples.alpha[mask], samples.beta[mask])
    if len(kept) == 0:
        logger.warning("post-selection kept no shots; using aufbau occupations")
        init = aufbau_occupations(samples.n_orb, n_alpha, n_beta)
        init.fallback = True
        return kept, init
    n = samples.n_orb
    init = OccupationDistribution(_bits(kept.alpha, n).mean(0), _bits(kept.beta, n).mean(0))
    return kept, init


def flip_weights(bits, occupation, surplus, eps=1e-3):
    """Normalized single-draw probabilities over eligible orbitals of one shot.

    For a surplus sector occupied orbitals are candidates with weight
    1 - n_p + eps; for a deficit sector empty orbitals with weight n_p + eps.
    """
    bits = np.asarray(bits, dtype=bool)
    occupation = np.asarray(occupation, dtype=float)
    if surplus:
        w = np.where(bits, 1.0 - occupation + eps, 0.0)
    else:
        w = np.where(~bits, occupation + eps, 0.0)
    return w / w.sum()


def _repair_sector(bits, target, occupation, eps, rng):
    """Fix the popcount of every row of ``bits`` (in place)."""
    count = bits.sum(1)
    surplus = count > target
    deficit = count < target
    # Gumbel-top-k: top-k of log(w) + Gumbel equals weighted sampling without replacement
    gumbel = rng.gumbel(size=bits.shape)
    with np.errstate(divide="ignore"):
        key_clear = np.where(bits, np.log(1.0 - occupation + eps) + gumbel, -np.inf)
        key_set = np.where(~bits, np.log(occupation + eps) + gumbel, -np.inf)
    for rows, keys, k, new_value in (
        (surplus, key_clear, count - target, False),
        (deficit, key_set, target - count, True),
    ):
        r = np.nonzero(rows)[0]
        if r.size == 0:
            continue
        order = np.argsort(-keys[r], axis=1, kind="stable")
        rank = np.empty_like(order)
        np.put_along_axis(rank, order, np.arange(bits.shape[1])[None, :].repeat(r.size, 0), axis=1)
        flip = rank < k[r][:, None]
        sub = bits[r]
        sub[flip] = new_value
        bits[r] = sub
    return bits


def recover_configurations(samples, occupations, n_alpha, n_beta, seed, eps=1e-3):
    """Repair every shot to exactly (n_alpha, n_beta) electrons.

    Shots already in the target sector are returned unchanged.  A sector
    with too many electrons has occupied orbitals emptied, drawn without
    replacement with weights 1 - n_p + eps; a sector with too few has empty
    orbitals filled with weights n_p + eps.  ``seed`` may be an int or a
    tuple naming an RNG stream.
    """
    stream = seed if isinstance(seed, tuple) else (seed,)
    rng = make_rng(stream[0], _RECOVER, *stream[1:])
    n = samples.n_orb
    ba = _repair_sector(_bits(samples.alpha, n), n_alpha, occupations.up, eps, rng)
    bb = _repair_sector(_bits(samples.beta, n), n_beta, occupations.down, eps, rng)
    return SampleSet(n, _pack(ba), _pack(bb))


def spin_closure(alpha, beta):
    """Union of the configurations with their alpha/beta-swapped images."""
    return np.concatenate([alpha, beta]), np.concatenate([beta, alpha])


def make_batches(recovered, opts, n_alpha=None, n_beta=None, iteration=0):
    """Draw ``opts.n_batches`` subspaces from the repaired shots.

    Each batch takes min(batch_size, #unique configurations) distinct
    configurations uniformly at random, adds their spin-inverted partners
    (when n_alpha == n_beta) and is returned as a sorted SubspaceBasis.
    """
    if len(recovered) == 0:
        raise ValueError("cannot batch an empty sample set")
    n = recovered.n_orb
    keys = np.unique((recovered.alpha << n) | recovered.beta)
    ua = keys >> n
    ub = keys & ((np.int64(1) << n) - 1)
    if n_alpha is None:
        n_alpha = bin(int(ua[0])).count("1")
    if n_beta is None:
        n_beta = bin(int(ub[0])).count("1")
    size = min(opts.batch_size, len(keys))
    batches = []
    for b in range(opts.n_batches):
        rng = make_rng(opts.seed, _BATCH, iteration, b)
        pick = np.sort(rng.choice(len(keys), size=size, replace=False))
        a, bt = ua[pick], ub[pick]
        if opts.spin_closure and n_alpha == n_beta:
            a, bt = spin_closure(a, bt)
        batches.append(SubspaceBasis(a, bt, n, n_alpha, n_beta))
    return batches


def sqd_ground_state(samples, h, eri, n_alpha, n_beta, opts=None, initial=None):
    """Run S-CORE and return the lowest batch energy found.

    Args:
        samples: raw shots, arbitrary popcounts.
        h, eri: one- and two-electron integrals of the (embedding) problem.
        n_alpha, n_beta: target sector.
        opts: :class:`SqdOptions`.
        initial: optional starting occupation distribution; by default it
            comes from post-selecting ``samples``.

    Returns:
        SqdResult.  ``energy`` is electronic (no nuclear or core constant)
        and is the minimum over every batch of every iteration; ``history``
        holds one dict per batch with keys iteration, batch, d, d_prime,
        e_batch, e_min.

    Raises:
        ConvergenceError: every batch of an iteration failed to diagonalize.
    """
    opts = opts or SqdOptions()
    diagnostics = {"fallback_occupations": False, "skipped_batches": []}
    if initial is None:
        kept, occ = post_select(samples, n_alpha, n_beta)
        diagnostics["fallback_occupations"] = occ.fallback
        diagnostics["post_selected"] = len(kept)
    else:
        occ = initial
    n = samples.n_orb
    best_e, best_vec = np.inf, None
    history = []
    for it in range(opts.n_iterations):
        recovered = recover_configurations(samples, occ, n_alpha, n_beta, (opts.seed, it), opts.flip_smoothing)
        batches = make_batches(recovered, opts, n_alpha, n_beta, iteration=it)
        up = np.zeros(n)
        down = np.zeros(n)
        solved = 0
        for b, basis in enumerate(batches):
            try:
                e, vec = davidson_ground_state(basis, h, eri, opts.davidson)
            except ConvergenceError as exc:
                logger.warning("iteration %d batch %d skipped: %s", it + 1, b, exc)
                diagnostics["skipped_batches"].append((it + 1, b))
                continue
            solved += 1
            na, nb = vec.occupation_numbers()
            up += na
            down += nb
            if e < best_e:
                best_e, best_vec = e, vec
            history.append({
                "iteration": it + 1,
                "batch": b,
                "d": len(basis),
                "d_prime": significant_config_count(vec, opts.significance),
                "e_batch": e,
                "e_min": best_e,
            })
        if solved == 0:
            raise ConvergenceError(f"all batches failed in S-CORE iteration {it + 1}")
        occ = OccupationDistribution(np.clip(up / solved, 0.0, 1.0), np.clip(down / solved, 0.0, 1.0))
    return SqdResult(best_e, best_vec, occ, history, diagnostics)


HISTORY_COLUMNS = ("iteration", "batch", "d", "d_prime", "E_batch", "E_min")


def history_to_csv(history, energy_offset=0.0):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for row in history:
        w.writerow([
            row["iteration"], row["batch"], row["d"], row["d_prime"],
            f"{row['e_batch'] + energy_offset:.10f}", f"{row['e_min'] + energy_offset:.10f}",
        ])
    return buf.getvalue()
