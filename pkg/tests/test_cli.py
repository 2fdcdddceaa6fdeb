"""End-to-end CLI behavior through main(argv), no subprocesses."""

import json
import math

import numpy as np
import pytest

from sictomo.cli import BENCH_CSV_HEADER, GAME_CSV_HEADER, main, parse_state
from sictomo.estimators import CSV_HEADER
from sictomo.povm import digits_from_indices
from sictomo.qstate import DensityOperator, PureState, save_state, random_pure
from sictomo.stream import ShotFileHeader, read_header, write_shots


def run(*argv):
    return main(list(argv))


def simulate(tmp_path, *, state="ghz:2", shots=2000, seed=0, name="shots.sic",
             extra=()):
    out = tmp_path / name
    code = run("simulate", "--state", state, "--shots", str(shots),
               "--seed", str(seed), "--out", str(out), *extra)
    assert code == 0
    return out


def load_matrix(path):
    d = json.loads(path.read_text())
    dim = 2 ** d["n_qubits"]
    arr = np.array(d["re"]) + 1j * np.array(d["im"])
    return arr.reshape(dim, dim), d


# --- parser basics ---------------------------------------------------------------


def test_no_arguments_is_usage_error(capsys):
    assert run() == 3
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert run("budget", "--k", "1", "--epsilon", "0.1", "--delta", "0.01",
               "--frobnicate") == 3


def test_version(capsys):
    assert run("--version") == 0
    assert capsys.readouterr().out.startswith("sictomo ")


# --- state specs ------------------------------------------------------------------


def test_parse_state_specs(tmp_path):
    assert parse_state("ame5").n_qubits == 5
    assert parse_state("ghz:3").n_qubits == 3
    assert parse_state("rotated-ghz:2:0.3").n_qubits == 2
    assert parse_state("cluster:++-").n_qubits == 3
    assert parse_state("product:0+1").n_qubits == 3
    mixed = parse_state("mixed:2")
    assert isinstance(mixed, DensityOperator)
    np.testing.assert_allclose(mixed.matrix, np.eye(4) / 4)
    a = parse_state("random-pure:2", seed=4)
    b = parse_state("random-pure:2", seed=4)
    np.testing.assert_array_equal(a.amplitudes, b.amplitudes)
    path = tmp_path / "st.json"
    save_state(path, random_pure(1, np.random.default_rng(0)))
    assert isinstance(parse_state(str(path)), PureState)
    with pytest.raises(ValueError):
        parse_state("wstate:3")
    with pytest.raises(ValueError):
        parse_state("ghz:x")


# --- simulate ----------------------------------------------------------------------


def test_simulate_bit_reproducible(tmp_path, capsys):
    a = simulate(tmp_path, seed=9, name="a.sic")
    b = simulate(tmp_path, seed=9, name="b.sic")
    assert a.read_bytes() == b.read_bytes()
    assert "wrote 2000 sic shots" in capsys.readouterr().out
    header = read_header(a)
    assert header.n_qubits == 2 and header.seed == 9


def test_simulate_manifest(tmp_path):
    out = simulate(tmp_path, seed=3)
    manifest = json.loads((tmp_path / "shots.sic.manifest.json").read_text())
    assert manifest["subcommand"] == "simulate"
    assert manifest["seed"] == 3
    assert manifest["outputs"] == [str(out)]
    assert manifest["parameters"]["state"] == "ghz:2"
    assert manifest["parameters"]["shots"] == 2000
    assert "version" in manifest


def test_simulate_from_state_file(tmp_path):
    spath = tmp_path / "psi.json"
    save_state(spath, random_pure(2, np.random.default_rng(8)))
    out = tmp_path / "s.sic"
    assert run("simulate", "--state", str(spath), "--shots", "50",
               "--out", str(out)) == 0
    manifest = json.loads((tmp_path / "s.sic.manifest.json").read_text())
    assert manifest["inputs"] == [str(spath)]


def test_simulate_pauli(tmp_path):
    out = tmp_path / "p.pauli"
    assert run("simulate", "--state", "ghz:2", "--povm", "pauli",
               "--shots", "90", "--out", str(out)) == 0
    assert read_header(out).povm == "pauli"
    body = out.read_text().splitlines()[2:]
    assert len(body) == 90


def test_simulate_bad_state(tmp_path, capsys):
    out = tmp_path / "x"
    assert run("simulate", "--state", "nope:1", "--shots", "5",
               "--out", str(out)) == 3
    assert "error" in capsys.readouterr().err


# --- estimate ----------------------------------------------------------------------


def test_estimate_converges_and_reports(tmp_path):
    shots = simulate(tmp_path, state="ghz:2", shots=6000, seed=1)
    out = tmp_path / "report.csv"
    code = run("estimate", "--file", str(shots), "--fidelity", "ghz:2",
               "--purity", "full;0", "--renyi", "0", "--out", str(out))
    assert code == 0  # stopping rule fires well before 6000 shots
    lines = out.read_text().strip().split("\n")
    assert lines[0] == CSV_HEADER
    assert all(line.count(",") == 6 for line in lines)
    quantities = {line.split(",")[2] for line in lines[1:]}
    assert quantities == {"fidelity:ghz:2", "purity", "renyi2"}
    subsets = {line.split(",")[3] for line in lines[1:]}
    assert subsets == {"all", "0-1", "0"}
    assert (tmp_path / "report.csv.manifest.json").exists()
    # converged: final fidelity near 1
    last_fid = [l for l in lines if l.split(",")[2] == "fidelity:ghz:2"][-1]
    assert abs(float(last_fid.split(",")[4]) - 1.0) < 0.05


def test_estimate_exhausts_without_stopping(tmp_path):
    shots = simulate(tmp_path, shots=500, seed=2)
    out = tmp_path / "r.csv"
    code = run("estimate", "--file", str(shots), "--purity", "full",
               "--no-stopping", "--interval", "200", "--out", str(out))
    assert code == 2
    rows = out.read_text().strip().split("\n")[1:]
    assert [int(r.split(",")[0]) for r in rows] == [200, 400, 500]


def test_estimate_jsonl(tmp_path):
    shots = simulate(tmp_path, shots=250, seed=3)
    out = tmp_path / "r.jsonl"
    code = run("estimate", "--file", str(shots), "--purity", "full",
               "--renyi", "all:1", "--batch", "200", "--no-stopping",
               "--format", "jsonl", "--out", str(out))
    assert code == 2
    rows = [json.loads(line) for line in out.read_text().strip().split("\n")]
    assert all(row["method"] == "shadows" for row in rows)
    # with batch 200 the first interval has no complete pair: value is null
    first_purity = [r for r in rows if r["quantity"] == "purity"][0]
    assert first_purity["value"] is None


def test_estimate_rejects_pauli_file(tmp_path, capsys):
    out = tmp_path / "p.pauli"
    run("simulate", "--state", "ghz:1", "--povm", "pauli", "--shots", "9",
        "--out", str(out))
    assert run("estimate", "--file", str(out), "--purity", "full") == 3
    assert "sic" in capsys.readouterr().err


def test_estimate_bad_targets(tmp_path, capsys):
    shots = simulate(tmp_path, shots=100, seed=4)
    assert run("estimate", "--file", str(shots), "--fidelity", "ghz:3") == 3
    assert run("estimate", "--file", str(shots), "--fidelity", "mixed:2") == 3
    assert run("estimate", "--file", str(shots)) == 3  # nothing tracked
    assert run("estimate", "--file", str(tmp_path / "missing.sic"),
               "--purity", "full") == 3


# --- reconstruct --------------------------------------------------------------------


def test_reconstruct_methods_agree(tmp_path, capsys):
    shots = simulate(tmp_path, state="ghz:2", shots=3000, seed=5)
    mats = {}
    for method in ("lininv", "shadow-mean", "pls", "mle"):
        out = tmp_path / f"{method}.json"
        assert run("reconstruct", "--file", str(shots), "--method", method,
                   "--out", str(out)) == 0
        mats[method], meta = load_matrix(out)
        assert meta["meta"]["method"] == method
        assert meta["meta"]["shots"] == 3000
    # dense pseudo-inverse and per-site inversion are the same linear map
    assert np.max(np.abs(mats["lininv"] - mats["shadow-mean"])) < 1e-8
    for method in ("pls", "mle"):
        assert abs(np.trace(mats[method]).real - 1) < 1e-9
        assert np.linalg.eigvalsh(mats[method])[0] > -1e-9
    ghz = np.zeros(4)
    ghz[[0, 3]] = 1 / math.sqrt(2)
    for method, mat in mats.items():
        assert abs(np.vdot(ghz, mat @ ghz).real - 1) < 0.1, method


def test_reconstruct_uniform_counts_give_maximally_mixed(tmp_path):
    digits = digits_from_indices(np.arange(16), 2)
    path = tmp_path / "uniform.sic"
    write_shots(path, ShotFileHeader(n_qubits=2), digits)
    out = tmp_path / "rho.json"
    assert run("reconstruct", "--file", str(path), "--method", "lininv",
               "--out", str(out)) == 0
    mat, _ = load_matrix(out)
    np.testing.assert_allclose(mat, np.eye(4) / 4, atol=1e-9)


def test_reconstruct_mle_weights(tmp_path):
    out = tmp_path / "p.pauli"
    run("simulate", "--state", "ghz:1", "--povm", "pauli", "--shots", "600",
        "--out", str(out))
    rec = tmp_path / "rho.json"
    assert run("reconstruct", "--file", str(out), "--method", "mle",
               "--weights", "multinomial", "--out", str(rec)) == 0
    mat, _ = load_matrix(rec)
    assert abs(np.trace(mat).real - 1) < 1e-9


def test_reconstruct_mle_cap_exit_code(tmp_path, capsys):
    digits = np.zeros((10, 6), dtype=np.uint8)
    path = tmp_path / "big.sic"
    write_shots(path, ShotFileHeader(n_qubits=6), digits)
    out = tmp_path / "rho.json"
    assert run("reconstruct", "--file", str(path), "--method", "mle",
               "--out", str(out)) == 4
    err = capsys.readouterr().err
    assert "5" in err and "mle" in err


# --- budget ---------------------------------------------------------------------------


def test_budget_stdout(capsys):
    assert run("budget", "--k", "1", "--epsilon", "0.1",
               "--delta", "0.01") == 0
    out = capsys.readouterr().out.strip().split("\n")
    assert out[0] == "k,l,epsilon,delta,m_observable,m_purity"
    assert out[1] == "1,1,0.1,0.01,8478,180000"


def test_budget_file_and_validation(tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert run("budget", "--k", "2", "--l", "1", "--epsilon", "0.1",
               "--delta", "0.1", "--out", str(out)) == 0
    assert out.read_text().strip().split("\n")[1].endswith(",54000")
    assert (tmp_path / "b.csv.manifest.json").exists()
    assert run("budget", "--k", "1", "--epsilon", "2.0",
               "--delta", "0.1") == 3


# --- bench ----------------------------------------------------------------------------


def test_bench_csv(tmp_path):
    out = tmp_path / "bench.csv"
    assert run("bench", "--n-list", "1,2", "--methods", "shadow-mean,lininv",
               "--shots", "40", "--repeat", "2", "--out", str(out)) == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == BENCH_CSV_HEADER
    assert len(lines) == 1 + 2 * 2 * 2
    for line in lines[1:]:
        n, method, shots, wall = line.split(",")
        assert int(n) in (1, 2) and method in ("shadow-mean", "lininv")
        assert int(shots) == 40
        assert float(wall) >= 0.0


def test_bench_unknown_method(tmp_path):
    assert run("bench", "--n-list", "1", "--methods", "quantum",
               "--shots", "10", "--out", str(tmp_path / "x.csv")) == 3


# --- game -----------------------------------------------------------------------------


def test_game_csv_deterministic(tmp_path, capsys):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    assert run("game", "--trials", "4", "--seed", "11", "--out", str(a)) == 0
    assert run("game", "--trials", "4", "--seed", "11", "--out", str(b)) == 0
    assert a.read_text() == b.read_text()
    lines = a.read_text().strip().split("\n")
    assert lines[0] == GAME_CSV_HEADER
    assert len(lines) == 5
    assert "correct" in capsys.readouterr().err
    trials = [int(line.split(",")[0]) for line in lines[1:]]
    assert trials == [0, 1, 2, 3]


def test_game_threads_equivalent(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    assert run("game", "--trials", "4", "--seed", "2", "--out", str(a)) == 0
    assert run("game", "--trials", "4", "--seed", "2", "--threads", "2",
               "--out", str(b)) == 0
    assert a.read_text() == b.read_text()


# --- verify ---------------------------------------------------------------------------


def test_verify_all_checks_pass(capsys):
    assert run("verify") == 0
    out = capsys.readouterr().out
    assert "OK: all checks passed" in out
    passes = [l for l in out.strip().split("\n") if l.startswith("PASS ")]
    assert len(passes) == 9
    assert "PASS frame-identities" in out
    assert "PASS lininv-shadow-equivalence" in out
