import subprocess
import sys
from pathlib import Path

import pytest

from sparseif import __version__
from sparseif.cli import main
from sparseif.config import ConfigError, default_config, load_config, parse_config_text
from sparseif.hierarchy import read_convergence_csv

SMALL = """
[network]
family = sparse
N = 40
degree = 4
sign_mix = 0.5

[grid]
G = 201

[solver]
R = 2
dt_particle = 0.01
dt_vlasov = 0.01
t_star = 0.2
scheme = upwind

[experiment]
times = 0.1, 0.2
trees = singleton; 1
ladder = 20, 40
reseeds = 2
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def run(*argv):
    return main([str(a) for a in argv])


def test_verify_exits_zero(capsys):
    assert run("verify") == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.strip().endswith("all suites passed")


def test_verify_single_suite_and_unknown(capsys):
    assert run("verify", "--suite", "trees", "--suite", "hierarchy") == 0
    out = capsys.readouterr().out
    assert "PASS trees:" in out and "PASS hierarchy:" in out and "weakmetric" not in out
    assert run("verify", "--suite", "nope") == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "sparseif", "verify", "--suite", "trees"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "all suites passed" in res.stdout


def test_simulate_deterministic_and_echo_reproduces(small_cfg, tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run("simulate", "--config", small_cfg, "--out", a, "--seed", 7) == 0
    assert run("simulate", "--config", small_cfg, "--out", b, "--seed", 7) == 0
    assert run("simulate", "--config", a / "resolved.cfg", "--out", c) == 0
    spikes = (a / "spikes.csv").read_bytes()
    assert spikes == (b / "spikes.csv").read_bytes() == (c / "spikes.csv").read_bytes()
    assert (a / "snapshot_1.bin").read_bytes() == (c / "snapshot_1.bin").read_bytes()
    lines = spikes.decode().splitlines()
    assert lines[0] == f"# sparseif {__version__} seed=7 command=simulate"
    assert lines[1] == "replica,time,neuron"
    run("simulate", "--config", small_cfg, "--out", tmp_path / "d", "--seed", 8)
    assert (tmp_path / "d" / "spikes.csv").read_bytes() != spikes


def test_resolved_config_round_trip(small_cfg, tmp_path, capsys):
    run("vlasov", "--config", small_cfg, "--out", tmp_path)
    echoed = capsys.readouterr().out
    text = (tmp_path / "resolved.cfg").read_text()
    cfg = parse_config_text(text)
    assert cfg.echo() == load_config(small_cfg).echo()
    assert cfg.echo() in echoed
    dens = (tmp_path / "density.csv").read_text().splitlines()
    assert dens[0].startswith("# sparseif") and dens[1] == "t,xi_cell,x_cell,mass"


def test_gen_net_and_file_family(tmp_path):
    assert run("gen-net", "--out", tmp_path, "--N", 30) == 0
    lines = (tmp_path / "network.txt").read_text().splitlines()
    assert lines[0].startswith("# sparseif") and lines[1].split()[0] == "30"
    cfg = tmp_path / "file.cfg"
    cfg.write_text(SMALL.replace("family = sparse", f"family = file\nmatrix_file = {tmp_path / 'network.txt'}")
                   .replace("N = 40", "N = 30"))
    assert run("simulate", "--config", cfg, "--out", tmp_path / "sim") == 0


def test_observe_report(small_cfg, tmp_path):
    assert run("observe", "--config", small_cfg, "--out", tmp_path) == 0
    lines = (tmp_path / "observables.csv").read_text().splitlines()
    assert lines[1] == "tree,time,norm_tauN,norm_tauInf,cross,distance,diag_bound,wallclock_ms"
    assert len(lines) == 2 + 4


def test_converge_with_plot(tmp_path):
    cfg = tmp_path / "conv.cfg"
    cfg.write_text(SMALL.replace("family = sparse", "family = complete").replace("times = 0.1, 0.2", "times = 0.2")
                   .replace("trees = singleton; 1", "trees = singleton"))
    assert run("converge", "--config", cfg, "--out", tmp_path, "--plot") == 0
    rows = read_convergence_csv(tmp_path / "convergence.csv")
    assert [int(r["N"]) for r in rows] == [20, 40]
    assert (tmp_path / "convergence.svg").read_text().lstrip().startswith("<?xml")


@pytest.mark.parametrize("text,line", [
    ("[network]\nN = 10\nbogus = 1\n", 3),
    ("[network]\n\n[grid]\nG = 1024\n", 4),
    ("[network]\nN = 10\nN = 11\n", 3),
    ("[nonsense]\nx = 1\n", 1),
    ("[coefficients]\nmu = cubic:1\n", 2),
])
def test_config_errors_exit_2_with_line(tmp_path, capsys, text, line):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    assert run("simulate", "--config", path, "--out", tmp_path) == 2
    assert f"bad.cfg:{line}:" in capsys.readouterr().err
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == line


def test_missing_file_and_solver_rejection(tmp_path, capsys):
    assert run("simulate", "--config", tmp_path / "none.cfg", "--out", tmp_path) == 2
    bad = tmp_path / "cfl.cfg"
    bad.write_text(SMALL.replace("dt_vlasov = 0.01", "dt_vlasov = 0.1"))
    assert run("vlasov", "--config", bad, "--out", tmp_path) == 2
    assert "CFL" in capsys.readouterr().err


def test_capacity_error_exit_3(tmp_path, capsys):
    cfg = tmp_path / "big.cfg"
    cfg.write_text("[network]\nfamily = complete\nN = 400\n[grid]\nsubcells = 16\n"
                   "[solver]\nR = 10\nt_star = 0.05\ndt_particle = 0.01\ndt_vlasov = 0.001\n"
                   "[experiment]\ntimes = 0.05\ntrees = 1,2,3\n")
    assert run("observe", "--config", cfg, "--out", tmp_path) == 3
    assert "capacity error" in capsys.readouterr().err


def test_defaults_cover_every_section():
    cfg = default_config()
    assert set(cfg.values) == {"network", "coefficients", "grid", "solver", "experiment", "seeds"}
    assert cfg["grid"]["G"] == 1025 and cfg.seed == 0


def test_bundled_configs_parse():
    root = Path(__file__).resolve().parents[1] / "src" / "sparseif" / "configs"
    ex = load_config(root / "exchangeable.cfg")
    tb = load_config(root / "two_block.cfg")
    assert ex["experiment"]["ladder"] == (125, 250, 500, 1000, 2000) and ex["solver"]["R"] == 20
    assert tb.kernel.M == 2 and len(tb.laws) == 2
