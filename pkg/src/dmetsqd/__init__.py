"""Density matrix embedding with sample-based subspace diagonalization solvers.

Typical use::

    from dmetsqd import molio, scf, localize, dmet

    bundle = molio.compute_sto3g_h_integrals(molio.build_h_ring(6, 1.0))
    mf = scf.run_rhf(bundle)
    local = localize.localize(bundle, mf)
    result = dmet.run_dmet(local, dmet.FragmentSpec([(0, 1), (2, 3), (4, 5)]))
"""

from .detspace import (
    CiVector,
    DavidsonOptions,
    SubspaceBasis,
    count_full_space,
    enumerate_full_space,
    fci_ground_state,
)
from .dmet import FciSolver, FragmentSpec, SqdSolver, run_dmet
from .errors import (
    BundleIntegrityError,
    BundleParseError,
    CapacityError,
    ChemicalPotentialError,
    ConvergenceError,
    GeometryError,
    LinearDependenceError,
    UnsupportedElementError,
)
from .molio import (
    Geometry,
    IntegralBundle,
    build_h_ring,
    compute_sto3g_h_integrals,
    read_bundle,
    write_bundle,
)
from .sampler import SampleSet, apply_readout_noise, read_samples, sample_from_state, write_samples
from .scf import run_rhf
from .sqd import SqdOptions, sqd_ground_state

__version__ = "0.1.0"
