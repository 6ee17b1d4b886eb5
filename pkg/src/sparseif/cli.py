"""Command-line front end: ``sparseif <command> [--config PATH] [--seed S] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 capacity error, 4 verification
failure. Every command except ``verify`` prints the resolved configuration and
writes it to ``resolved.cfg`` in the output directory; running again from that
file reproduces the outputs bit for bit.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__, particle_sim, vlasov
from .config import ConfigError, ExperimentConfig, default_config, load_config
from .connectivity import ConnMatrix, gen_block_sparse, gen_complete, gen_sparse, read_matrix, write_matrix
from .grids import ExtendedDensity, Grid1D
from .hierarchy import ConvergenceConfig, ExperimentStageError, convergence_experiment, read_convergence_csv
from .observables import CapacityError, EmpiricalObservable, LimitObservable, weak_distance, write_observable_report
from .weakmetric import WeightEta

EXIT_OK, EXIT_CONFIG, EXIT_CAPACITY, EXIT_VERIFY = 0, 2, 3, 4


def header(cfg: ExperimentConfig, command: str) -> str:
    return f"sparseif {__version__} seed={cfg.seed} command={command}"


def _laws_for_blocks(cfg: ExperimentConfig) -> list:
    laws = list(cfg.laws)
    return laws * cfg.kernel.M if len(laws) == 1 else laws


def build_network(cfg: ExperimentConfig, N: int | None = None) -> ConnMatrix:
    net = cfg["network"]
    N = net["N"] if N is None else N
    fam = net["family"]
    if fam == "complete":
        return gen_complete(N, float(cfg.kernel.values[0, 0]))
    if fam == "block_sparse":
        return gen_block_sparse(N, cfg.kernel, net["degree"], cfg.seed)
    if fam == "sparse":
        return gen_sparse(N, net["degree"], net["strength"], net["sign_mix"], cfg.seed)
    try:
        return read_matrix(net["matrix_file"])
    except OSError as exc:
        raise ConfigError(f"cannot read matrix_file: {exc.strerror}", None, cfg.source) from None


def _run_particles(cfg: ExperimentConfig, W: ConnMatrix):
    sol = cfg["solver"]
    laws = _laws_for_blocks(cfg)
    init = laws[0] if len(laws) == 1 else laws
    ens = particle_sim.init_ensemble(sol["R"], W.N, init, cfg.seed)
    times = sorted(set(cfg["experiment"]["times"]))
    return particle_sim.run(ens, W, cfg.coefficients(), sol["dt_particle"], sol["t_star"], snapshot_times=times)


def _solve_limit(cfg: ExperimentConfig, kernel=None):
    kernel = cfg.kernel if kernel is None else kernel
    grid = Grid1D(cfg["grid"]["L"], cfg["grid"]["G"])
    f0 = ExtendedDensity.from_laws(grid, _laws_for_blocks(cfg), M=kernel.M)
    sol = cfg["solver"]
    times = sorted(set(cfg["experiment"]["times"]))
    return vlasov.solve(f0, kernel, cfg.coefficients(), sol["dt_vlasov"],
                        sol["t_star"], snapshot_times=times, scheme=sol["scheme"])


MAX_LIMIT_FIBERS = 64


def _limit_kernel(cfg: ExperimentConfig, W: ConnMatrix):
    """Kernel matched to the network: the configured one, or the embedding of a
    generated/file matrix cell-averaged to the largest divisor of N up to 64."""
    from .connectivity import embed_graphon

    if cfg["network"]["family"] in ("complete", "block_sparse"):
        return cfg.kernel
    M = max(d for d in range(1, MAX_LIMIT_FIBERS + 1) if W.N % d == 0)
    return embed_graphon(W).at_resolution(M)


# --- commands -----------------------------------------------------------------------------

def cmd_gen_net(cfg: ExperimentConfig, out: Path, args) -> int:
    W = build_network(cfg, args.N)
    path = out / "network.txt"
    write_matrix(W, path, comment=header(cfg, "gen-net"))
    print(f"wrote {path} ({W.N} neurons, {W.nnz} synapses, row norm {W.row_norm:.4g}, max |w| {W.max_entry:.4g})")
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, out: Path, args) -> int:
    W = build_network(cfg)
    snaps, spikes = _run_particles(cfg, W)
    particle_sim.write_spikes_csv(spikes, out / "spikes.csv", header(cfg, "simulate"))
    for k, s in enumerate(snaps):
        particle_sim.write_snapshot(s, out / f"snapshot_{k}.bin")
    print(f"wrote {out / 'spikes.csv'} ({len(spikes)} spikes) and {len(snaps)} snapshots")
    return EXIT_OK


def cmd_vlasov(cfg: ExperimentConfig, out: Path, args) -> int:
    snaps = _solve_limit(cfg)
    vlasov.write_density_csv(snaps, out / "density.csv", header(cfg, "vlasov"))
    print(f"wrote {out / 'density.csv'} ({len(snaps)} times)")
    return EXIT_OK


def cmd_observe(cfg: ExperimentConfig, out: Path, args) -> int:
    W = build_network(cfg)
    snaps, _ = _run_particles(cfg, W)
    K = _limit_kernel(cfg, W)
    if len(cfg.laws) > 1 and K.M != cfg.kernel.M:
        raise ConfigError("per-block initial laws need family = complete or block_sparse", None, cfg.source)
    limits = _solve_limit(cfg, K)
    eta = WeightEta(cfg["grid"]["alpha"])
    rows = []
    for tree in cfg.trees:
        for snap, f in zip(snaps, limits):
            emp = EmpiricalObservable(tree, W, snap)
            lim = LimitObservable(tree, K, f, cfg["grid"]["subcells"])
            if 2 <= tree.size <= 3:
                rows.append(weak_distance(tree, emp, lim, eta, method="grid", grid=f.grid))
            else:
                rows.append(weak_distance(tree, emp, lim, eta))
    write_observable_report(rows, out / "observables.csv", header(cfg, "observe"))
    for r in rows:
        print(f"tree {str(r.tree):>10}  t={r.time:.4g}  distance={r.distance:.6g}  diag_bound={r.diag_bound:.3g}")
    return EXIT_OK


def convergence_config(cfg: ExperimentConfig, workers: int = 1) -> ConvergenceConfig:
    fam = cfg["network"]["family"]
    if fam not in ("complete", "block_sparse"):
        raise ConfigError("converge needs family = complete or block_sparse", None, cfg.source)
    sol, grid, exp = cfg["solver"], cfg["grid"], cfg["experiment"]
    return ConvergenceConfig(
        kernel=cfg.kernel, laws=_laws_for_blocks(cfg), coef=cfg.coefficients(), ladder=exp["ladder"],
        network=fam, degree=cfg["network"]["degree"], degree_exponent=cfg["network"]["degree_exponent"],
        R=sol["R"], reseeds=exp["reseeds"], t_star=sol["t_star"], times=exp["times"], trees=cfg.trees,
        dt_particle=sol["dt_particle"], dt_vlasov=sol["dt_vlasov"], L=grid["L"], G=grid["G"],
        scheme=sol["scheme"], alpha=grid["alpha"], subcells=grid["subcells"], seed=cfg.seed, workers=workers)


def cmd_converge(cfg: ExperimentConfig, out: Path, args) -> int:
    try:
        ccfg = convergence_config(cfg, max(1, args.threads))
    except ValueError as exc:
        raise ConfigError(str(exc), None, cfg.source) from None
    report = convergence_experiment(ccfg)
    path = out / "convergence.csv"
    report.write_csv(path, header(cfg, "converge"))
    for tree in ccfg.trees:
        for t in ccfg.times:
            slope, err = report.slope(tree, t) if len(ccfg.ladder) > 1 else (float("nan"), float("nan"))
            print(f"tree {tree}  t={t:g}  slope {slope:.3f} +- {err:.3f}  "
                  f"strictly decreasing: {report.strictly_decreasing(tree, t)}")
    print(f"wrote {path} in {report.wallclock_s:.1f} s")
    if args.plot:
        plot_convergence(path, out / "convergence.svg")
        print(f"wrote {out / 'convergence.svg'}")
    return EXIT_OK


def plot_convergence(csv_path, svg_path) -> None:
    """Log-log chart of distance against N with Monte Carlo error bars, one line per (tree, time)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_convergence_csv(csv_path)
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["tree"], r["time"]), []).append(r)
    fig, ax = plt.subplots(figsize=(5, 4))
    for (tree, t), rs in groups.items():
        N = np.array([float(r["N"]) for r in rs])
        d = np.array([float(r["distance"]) for r in rs])
        e = np.array([float(r["mc_err"]) for r in rs])
        ax.errorbar(N, d, yerr=e, marker="o", capsize=3, label=f"tree {tree}, t={float(t):g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("N")
    ax.set_ylabel("weak distance")
    ax.legend()
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)


def cmd_verify(args) -> int:
    from .verify import run_suites

    try:
        ok = run_suites(args.suite or None, sys.stdout)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print("all suites passed" if ok else "verification FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {"gen-net": cmd_gen_net, "simulate": cmd_simulate, "vlasov": cmd_vlasov,
            "observe": cmd_observe, "converge": cmd_converge}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment configuration file")
    common.add_argument("--seed", type=int, help="root seed (overrides [seeds] root)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory (created if missing)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for the N-ladder")
    p = argparse.ArgumentParser(prog="sparseif", description="Sparse integrate-and-fire networks: "
                                "simulation, mean-field limit and weak-norm observables.")
    p.add_argument("--version", action="version", version=f"sparseif {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-net", parents=[common], help="generate a connectivity matrix")
    g.add_argument("--N", type=int, help="network size (overrides [network] N)")
    sub.add_parser("simulate", parents=[common], help="run the particle system")
    sub.add_parser("vlasov", parents=[common], help="solve the limit equation")
    sub.add_parser("observe", parents=[common], help="weak distances between finite and limit observables")
    c = sub.add_parser("converge", parents=[common], help="N-ladder convergence experiment")
    c.add_argument("--plot", action="store_true", help="also write convergence.svg")
    v = sub.add_parser("verify", parents=[common], help="run the invariant suites")
    v.add_argument("--suite", action="append", help="suite name (repeatable); default all")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        return cmd_verify(args)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        if args.seed is not None:
            cfg = cfg.override("seeds", "root", str(args.seed))
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        resolved = cfg.echo()
        (out / "resolved.cfg").write_text(f"# {header(cfg, args.command)}\n" + resolved)
        print(f"# resolved configuration ({header(cfg, args.command)})")
        print(resolved)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except ExperimentStageError as exc:
        if isinstance(exc.__cause__, CapacityError):
            print(f"capacity error: {exc}", file=sys.stderr)
            return EXIT_CAPACITY
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FloatingPointError) as exc:
        # parameter combinations rejected by a solver (CFL, rate step, sizes)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
