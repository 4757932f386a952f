"""Command-line driver.

Subcommands expose single stages (``build-ring``, ``scf``, ``sample``,
``sqd``, ``dmet``) with file-based I/O, and ``run`` executes a whole
configuration file::

    [system]
    id = h6
    kind = ring            # ring | geometry | bundle
    n_atoms = 6
    r = 0.7, 1.0, 1.3      # ring: nearest-neighbour distances in Angstrom
    # files = chair.xyz, boat.xyz   (kind = geometry or bundle)

    [method]
    methods = dmet-fci, dmet-sqd   # any of rhf, fci, sqd, dmet-fci, dmet-sqd
    fragments = 0,1;2,3;4,5
    mu_threshold = 1e-5

    [sqd]
    seed = 0
    shots = 10000
    noise = 0.0
    batches = 5
    batch_size = 1000
    iterations = 10
    mu_iterations = 3
    # samples = shots.txt  (unfragmented sqd only; one file per system)

    [output]
    directory = results

Relative paths are resolved against the directory of the config file.
Exit status is 0 on success, 1 for configuration or input errors and 2 for
numerical failures.  Report files are written only after every calculation
has finished, each through a temporary file and an atomic rename.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import detspace, dmet, localize, molio, sampler, scf, sqd
from .errors import (
    BundleIntegrityError,
    BundleParseError,
    ChemicalPotentialError,
    ConvergenceError,
    GeometryError,
    LinearDependenceError,
    UnsupportedElementError,
)

logger = logging.getLogger("dmetsqd")

HARTREE_TO_KCAL = 627.509474
METHODS = ("rhf", "fci", "sqd", "dmet-fci", "dmet-sqd")
ENERGY_COLUMNS = ("system_id", "geometry_param", "method", "mu_star", "energy_hartree", "particle_number")
SPARSITY_COLUMNS = ("system_id", "iteration", "batch", "d", "d_prime")


class ConfigError(ValueError):
    """Invalid configuration or missing input file (exit status 1)."""


class NumericalFailure(RuntimeError):
    """A calculation did not converge (exit status 2)."""


INPUT_ERRORS = (ConfigError, BundleParseError, BundleIntegrityError, GeometryError,
                UnsupportedElementError, FileNotFoundError)
NUMERICAL_ERRORS = (NumericalFailure, ConvergenceError, ChemicalPotentialError, LinearDependenceError)


def _fmt(x):
    return f"{x:.10f}"


# ----------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    system_id: str
    kind: str
    points: list                  # (geometry_param label, ring distance or path)
    n_atoms: int = 0
    methods: tuple = ("dmet-fci",)
    fragments: list = field(default_factory=list)
    mu_threshold: float = 1e-5
    seed: int = 0
    shots: int = 10_000
    noise: float = 0.0
    batches: int = 5
    batch_size: int = 1000
    iterations: int = 10
    mu_iterations: int = 3
    samples: list = field(default_factory=list)
    output_dir: Path = Path(".")

    def sqd_options(self, iterations=None):
        return sqd.SqdOptions(n_batches=self.batches, batch_size=self.batch_size,
                              n_iterations=iterations or self.iterations, seed=self.seed)

    def echo(self):
        keys = ("system_id", "kind", "n_atoms", "methods", "fragments", "mu_threshold", "seed",
                "shots", "noise", "batches", "batch_size", "iterations", "mu_iterations")
        return [f"{k} = {getattr(self, k)!r}" for k in keys]


def _split_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def load_config(path):
    """Parse and validate a run configuration.

    Raises:
        ConfigError: syntax errors, unknown values, or missing input files.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    # fragments use ';' as a separator, so only '#' starts an inline comment there
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    base = path.parent
    for section in ("system", "method"):
        if not cp.has_section(section):
            raise ConfigError(f"missing [{section}] section")
    try:
        sysc = cp["system"]
        kind = sysc.get("kind", "ring").strip().lower()
        system_id = sysc.get("id", path.stem).strip()
        n_atoms = 0
        if kind == "ring":
            n_atoms = sysc.getint("n_atoms")
            if n_atoms is None:
                raise ConfigError("[system] n_atoms is required for kind = ring")
            distances = [float(x) for x in _split_list(sysc.get("r", ""))]
            if not distances:
                raise ConfigError("[system] r must list at least one distance")
            points = [(f"{r:g}", r) for r in distances]
        elif kind in ("geometry", "bundle"):
            files = [base / f for f in _split_list(sysc.get("files", ""))]
            if not files:
                raise ConfigError(f"[system] files is required for kind = {kind}")
            points = [(f.stem, f) for f in files]
        else:
            raise ConfigError(f"unknown system kind {kind!r}")

        mc = cp["method"]
        methods = tuple(m.lower() for m in _split_list(mc.get("methods", mc.get("method", "dmet-fci"))))
        bad = [m for m in methods if m not in METHODS]
        if bad or not methods:
            raise ConfigError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
        fragments = dmet.parse_fragments(mc.get("fragments", ""))
        if any(m.startswith("dmet") for m in methods) and not fragments:
            raise ConfigError("[method] fragments is required for DMET methods")
        cfg = RunConfig(system_id=system_id, kind=kind, points=points, n_atoms=n_atoms,
                        methods=methods, fragments=fragments,
                        mu_threshold=mc.getfloat("mu_threshold", 1e-5))

        if cp.has_section("sqd"):
            sc = cp["sqd"]
            cfg.seed = sc.getint("seed", cfg.seed)
            cfg.shots = sc.getint("shots", cfg.shots)
            cfg.noise = sc.getfloat("noise", cfg.noise)
            cfg.batches = sc.getint("batches", cfg.batches)
            cfg.batch_size = sc.getint("batch_size", cfg.batch_size)
            cfg.iterations = sc.getint("iterations", cfg.iterations)
            cfg.mu_iterations = sc.getint("mu_iterations", cfg.mu_iterations)
            cfg.samples = [base / f for f in _split_list(sc.get("samples", ""))]
        if cp.has_section("output"):
            cfg.output_dir = base / cp["output"].get("directory", ".")
        else:
            cfg.output_dir = base
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value in {path}: {exc}") from None

    if cfg.shots < 1 or cfg.batches < 1 or cfg.batch_size < 1 or cfg.iterations < 1 or cfg.mu_iterations < 0:
        raise ConfigError("shots, batches, batch_size and iterations must be positive")
    if not 0.0 <= cfg.noise <= 1.0:
        raise ConfigError("noise must lie in [0, 1]")
    if cfg.samples and len(cfg.samples) != len(cfg.points):
        raise ConfigError("[sqd] samples must name one file per system point")
    missing = [str(p) for _, p in cfg.points if kind != "ring" and not Path(p).is_file()]
    missing += [str(p) for p in cfg.samples if not p.is_file()]
    if missing:
        raise ConfigError(f"input file(s) not found: {', '.join(missing)}")
    return cfg


# ----------------------------------------------------------------------------
# calculations shared by the pipeline and the subcommands


def load_bundle(bundle=None, geometry=None):
    if (bundle is None) == (geometry is None):
        raise ConfigError("give exactly one of a bundle or a geometry file")
    if bundle is not None:
        return molio.read_bundle(bundle)
    return molio.compute_sto3g_h_integrals(molio.read_geometry(geometry))


def converged_rhf(bundle):
    mf = scf.run_rhf(bundle)
    if not mf.converged:
        raise NumericalFailure(f"RHF did not converge in {mf.n_iter} iterations")
    return mf


def _electrons(bundle):
    return bundle.n_elec // 2, bundle.n_elec // 2


def reference_samples(h, eri, n_alpha, n_beta, shots, noise, seed):
    """Shots from the exact ground state, optionally with readout noise."""
    _, vec = detspace.fci_ground_state(h, eri, n_alpha, n_beta)
    shots = sampler.sample_from_state(vec, shots, seed)
    if noise > 0:
        shots = sampler.apply_readout_noise(shots, noise, seed)
    return shots


def run_sqd(bundle, samples, opts):
    """Unfragmented SQD in the canonical RHF orbital basis; returns (total energy, result)."""
    mf = converged_rhf(bundle)
    h, eri = scf.mo_integrals(bundle, mf)
    na, nb = _electrons(bundle)
    if samples.n_orb != bundle.n_orb:
        raise ConfigError(f"samples cover {samples.n_orb} orbitals, bundle has {bundle.n_orb}")
    res = sqd.sqd_ground_state(samples, h, eri, na, nb, opts)
    return res.energy + bundle.e_nuc, res


def run_dmet_bundle(bundle, fragments, solver, threshold=1e-5):
    mf = converged_rhf(bundle)
    local = localize.localize(bundle, mf)
    spec = dmet.FragmentSpec(fragments, solver.name)
    try:
        spec.check_tiling(local.n_orb)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return dmet.run_dmet(local, spec, solver, threshold)


def _bundle_for_point(cfg, value):
    if cfg.kind == "ring":
        return molio.compute_sto3g_h_integrals(molio.build_h_ring(cfg.n_atoms, value))
    if cfg.kind == "geometry":
        return molio.compute_sto3g_h_integrals(molio.read_geometry(value))
    return molio.read_bundle(value)


def _compute_point(cfg, index, label, bundle):
    """Energy rows and sparsity rows for one geometry."""
    rows, sparsity = [], []
    na, nb = _electrons(bundle)
    mf = None
    for method in cfg.methods:
        mu, number = "", float(bundle.n_elec)
        if method == "rhf":
            mf = mf or converged_rhf(bundle)
            energy = mf.total_energy
        elif method == "fci":
            mf = mf or converged_rhf(bundle)
            h, eri = scf.mo_integrals(bundle, mf)
            energy = detspace.fci_ground_state(h, eri, na, nb)[0] + bundle.e_nuc
        elif method == "sqd":
            mf = mf or converged_rhf(bundle)
            if cfg.samples:
                shots = sampler.read_samples(cfg.samples[index])
            else:
                h, eri = scf.mo_integrals(bundle, mf)
                shots = reference_samples(h, eri, na, nb, cfg.shots, cfg.noise, cfg.seed)
            energy, res = run_sqd(bundle, shots, cfg.sqd_options())
            sparsity += [(f"{cfg.system_id}@{label}", r["iteration"], r["batch"], r["d"], r["d_prime"])
                         for r in res.history]
        else:
            solver = (dmet.FciSolver() if method == "dmet-fci" else
                      dmet.SqdSolver(cfg.sqd_options(), shots=cfg.shots, noise=cfg.noise, seed=cfg.seed,
                                     initial_iterations=cfg.iterations, mu_iterations=cfg.mu_iterations))
            result = run_dmet_bundle(bundle, cfg.fragments, solver, cfg.mu_threshold)
            if not result.converged:
                logger.warning("%s %s: particle number converged only to %.2e",
                               cfg.system_id, label, abs(result.particle_error))
            energy, mu, number = result.total_energy, _fmt(result.mu_star), result.particle_number
            if method == "dmet-sqd":
                for k, frag in enumerate(result.per_fragment):
                    sparsity += [(f"{cfg.system_id}@{label}:F{k}", r["iteration"], r["batch"], r["d"],
                                  r["d_prime"]) for r in frag.diagnostics["history"]]
        rows.append((cfg.system_id, label, method, mu, _fmt(energy), _fmt(number)))
        logger.info("%s %s %-8s E = %s Ha", cfg.system_id, label, method, _fmt(energy))
    return rows, sparsity


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def relative_energy_table(rows):
    """Per-method energies relative to the first geometry, in kcal/mol."""
    lines = []
    first = {}
    for sid, label, method, _, energy, _ in rows:
        e = float(energy)
        first.setdefault(method, e)
        lines.append(f"{sid} {label} {method} dE = {(e - first[method]) * HARTREE_TO_KCAL:.4f} kcal/mol")
    return lines


def run_pipeline(config_path):
    """Execute a configuration file; returns the process exit status."""
    log_lines = []
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    log_lines += ["# options"] + cfg.echo()
    rows, sparsity = [], []
    status = 0
    try:
        for index, (label, value) in enumerate(cfg.points):
            bundle = _bundle_for_point(cfg, value)
            r, s = _compute_point(cfg, index, label, bundle)
            rows += r
            sparsity += s
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        log_lines.append(f"# failed: {exc}")
        status = 2
    except (*INPUT_ERRORS, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        log_lines.append(f"# failed: {exc}")
        status = 1
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    if status == 0:
        log_lines += ["# energies (Hartree)"]
        log_lines += [" ".join(str(x) for x in row) for row in rows]
        log_lines += ["# relative energies"] + relative_energy_table(rows)
        molio.atomic_write_text(out / "energies.csv", _csv_text(ENERGY_COLUMNS, rows))
        molio.atomic_write_text(out / "sparsity.csv", _csv_text(SPARSITY_COLUMNS, sparsity))
        for row in rows:
            print(" ".join(str(x) for x in row))
    molio.atomic_write_text(out / "run.log", "\n".join(log_lines) + "\n")
    return status


# ----------------------------------------------------------------------------
# subcommands


def cmd_build_ring(args):
    geom = molio.build_h_ring(args.n, args.r)
    if args.output:
        molio.write_geometry(geom, args.output)
    else:
        sys.stdout.write(molio.geometry_text(geom))
    return 0


def cmd_scf(args):
    bundle = load_bundle(args.bundle, args.geometry)
    if args.write_bundle:
        molio.write_bundle(bundle, args.write_bundle)
    mf = converged_rhf(bundle)
    print(f"E_RHF = {_fmt(mf.total_energy)}")
    if args.fci:
        h, eri = scf.mo_integrals(bundle, mf)
        na, nb = _electrons(bundle)
        print(f"E_FCI = {_fmt(detspace.fci_ground_state(h, eri, na, nb)[0] + bundle.e_nuc)}")
    return 0


def cmd_sample(args):
    bundle = load_bundle(args.bundle, args.geometry)
    mf = converged_rhf(bundle)
    h, eri = scf.mo_integrals(bundle, mf)
    na, nb = _electrons(bundle)
    shots = reference_samples(h, eri, na, nb, args.shots, args.noise, args.seed)
    sampler.write_samples(shots, args.output)
    print(f"wrote {len(shots)} shots over {shots.n_orb} orbitals to {args.output}")
    return 0


def cmd_sqd(args):
    bundle = load_bundle(args.bundle, args.geometry)
    shots = sampler.read_samples(args.samples)
    opts = sqd.SqdOptions(n_batches=args.batches, batch_size=args.batch_size,
                          n_iterations=args.iters, seed=args.seed)
    energy, res = run_sqd(bundle, shots, opts)
    print(f"E = {_fmt(energy)}")
    if args.history:
        molio.atomic_write_text(args.history, sqd.history_to_csv(res.history, bundle.e_nuc))
    return 0


def cmd_dmet(args):
    bundle = load_bundle(args.bundle, args.geometry)
    if args.solver == "fci":
        solver = dmet.FciSolver()
    else:
        opts = sqd.SqdOptions(n_batches=args.batches, batch_size=args.batch_size,
                              n_iterations=args.iters, seed=args.seed)
        solver = dmet.SqdSolver(opts, shots=args.shots, noise=args.noise, seed=args.seed,
                                initial_iterations=args.iters, mu_iterations=args.mu_iters)
    result = run_dmet_bundle(bundle, dmet.parse_fragments(args.fragments), solver, args.threshold)
    print(f"mu* = {_fmt(result.mu_star)}")
    print(f"E = {_fmt(result.total_energy)}")
    print(f"N = {_fmt(result.particle_number)}")
    for k, f in enumerate(result.per_fragment):
        print(f"fragment {k} {f.fragment}: E = {_fmt(f.energy)} N = {_fmt(f.n_electrons)}")
    return 0


def _add_system_args(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--bundle", help="integral bundle file")
    g.add_argument("--geometry", help="geometry file (element x y z per line, Angstrom)")


def _add_sqd_args(p, iters=10):
    p.add_argument("--batches", type=int, default=5, help="batches per S-CORE iteration")
    p.add_argument("--batch-size", type=int, default=1000, help="configurations per batch")
    p.add_argument("--iters", type=int, default=iters, help="S-CORE iterations")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="dmetsqd", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-ring", help="write a hydrogen-ring geometry")
    p.add_argument("--n", type=int, required=True, help="number of atoms")
    p.add_argument("--r", type=float, required=True, help="nearest-neighbour distance (Angstrom)")
    p.add_argument("-o", "--output", help="geometry file (default: stdout)")
    p.set_defaults(func=cmd_build_ring)

    p = sub.add_parser("scf", help="restricted Hartree-Fock (and optionally FCI)")
    _add_system_args(p)
    p.add_argument("--write-bundle", help="also write the integrals to this bundle file")
    p.add_argument("--fci", action="store_true", help="also print the FCI energy")
    p.set_defaults(func=cmd_scf)

    p = sub.add_parser("sample", help="draw shots from the exact ground state")
    _add_system_args(p)
    p.add_argument("--shots", type=int, default=10_000)
    p.add_argument("--noise", type=float, default=0.0, help="readout bit-flip probability")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="sample file")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("sqd", help="S-CORE subspace diagonalization of sampled shots")
    _add_system_args(p)
    p.add_argument("--samples", required=True, help="sample file")
    _add_sqd_args(p)
    p.add_argument("--history", help="write the per-batch history CSV here")
    p.set_defaults(func=cmd_sqd)

    p = sub.add_parser("dmet", help="one-shot DMET with a fitted chemical potential")
    _add_system_args(p)
    p.add_argument("--solver", choices=("fci", "sqd"), default="fci")
    p.add_argument("--fragments", required=True, help="orbital lists, e.g. '0,1;2,3'")
    p.add_argument("--threshold", type=float, default=1e-5, help="particle-number tolerance")
    p.add_argument("--shots", type=int, default=10_000)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--mu-iters", type=int, default=3, help="S-CORE iterations per mu evaluation")
    _add_sqd_args(p)
    p.set_defaults(func=cmd_dmet)

    p = sub.add_parser("run", help="run a configuration file end to end")
    p.add_argument("config")
    p.set_defaults(func=lambda a: run_pipeline(a.config))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (*INPUT_ERRORS, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
