"""Command-line frontend.

Subcommands: simulate, estimate, reconstruct, budget, bench, game, verify.
Exit codes: 0 success (estimate: stopping rule converged), 2 shots exhausted
before convergence, 3 invalid input, 4 resource cap exceeded.
"""

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .budget import BUDGET_CSV_HEADER, BudgetQuery, budget_csv_row
from .estimators import CSV_HEADER, all_bipartitions
from .povm import (CapExceededError, FrameSuperoperator, derive_rng,
                   sample_pauli_shots, sample_sic_shots, sic_frame)
from .qstate import (DensityOperator, PureState, load_state, make_ame5,
                     make_ghz, make_linear_cluster, make_product,
                     make_rotated_ghz, random_pure, Bipartition)
from .reconstruct import FrequencyVector, ReconstructionResult, reconstruct
from .shadows import ShadowAccumulator, shadow_matrices
from .stream import (Game, OnlineEngine, ShotFileError, ShotFileHeader,
                     StoppingRule, TrackerConfig, iter_sic_chunks,
                     read_header, read_pauli_shots, read_sic_digits,
                     write_shots)

EXIT_OK = 0
EXIT_EXHAUSTED = 2
EXIT_INVALID = 3
EXIT_CAP = 4


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; remap to the documented code 3."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def parse_state(spec, seed=0):
    """Resolve a state spec: a library name such as `ame5`, `ghz:3`,
    `rotated-ghz:4`, `cluster:++-+`, `product:0+1-`, `mixed:2`,
    `random-pure:3`, or a path to a state JSON file."""
    if spec.endswith(".json") or os.path.exists(spec):
        return load_state(spec)
    name, _, rest = spec.partition(":")
    try:
        if name == "ame5":
            return make_ame5()
        if name == "ghz":
            return make_ghz(int(rest))
        if name == "rotated-ghz":
            parts = rest.split(":")
            angle = float(parts[1]) if len(parts) > 1 else math.pi / 4
            return make_rotated_ghz(int(parts[0]), angle)
        if name == "cluster":
            return make_linear_cluster(len(rest), rest)
        if name == "product":
            return make_product(rest)
        if name == "mixed":
            n = int(rest)
            return DensityOperator(np.eye(2**n) / 2**n, check=False)
        if name == "random-pure":
            return random_pure(int(rest), derive_rng(seed, "state"))
    except (TypeError, IndexError):
        pass
    raise ValueError(f"unknown state spec {spec!r}")


def _write_manifest(out_path, args, inputs, outputs):
    params = {}
    for key, value in vars(args).items():
        if key == "func" or callable(value):
            continue
        params[key] = value
    manifest = {
        "subcommand": args.cmd,
        "parameters": params,
        "seed": getattr(args, "seed", None),
        "inputs": list(inputs),
        "outputs": list(outputs),
        "version": __version__,
    }
    with open(str(out_path) + ".manifest.json", "w", encoding="ascii") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


class _Sink:
    """Line sink that is either a file (plus manifest) or stdout."""

    def __init__(self, path):
        self.path = path
        self._fh = sys.stdout if path == "-" else open(path, "w",
                                                       encoding="ascii")

    def line(self, text):
        self._fh.write(text + "\n")

    def close(self):
        if self.path != "-":
            self._fh.close()


# --- simulate -------------------------------------------------------------


def _cmd_simulate(args):
    state = parse_state(args.state, args.seed)
    n = state.n_qubits
    header = ShotFileHeader(n_qubits=n, povm=args.povm, frame=args.frame,
                            seed=args.seed, batch=args.batch)
    if args.povm == "sic":
        frame = sic_frame(args.frame)
        rng = derive_rng(args.seed, "sic-shots")
        digits = sample_sic_shots(state, frame, args.shots, rng,
                                  mode=args.mode)
        write_shots(args.out, header, digits)
    else:
        rng = derive_rng(args.seed, "pauli-shots")
        settings, bits = sample_pauli_shots(state, args.shots, rng)
        write_shots(args.out, header, (settings, bits))
    inputs = [args.state] if args.state.endswith(".json") else []
    _write_manifest(args.out, args, inputs, [args.out])
    print(f"wrote {args.shots} {args.povm} shots ({n} qubits) to {args.out}")
    return EXIT_OK


# --- estimate -------------------------------------------------------------


def _parse_subsets(arg, n):
    if not arg:
        return []
    out = []
    for piece in arg.split(";"):
        if piece == "full":
            out.append(tuple(range(n)))
        else:
            out.append(tuple(int(q) for q in piece.split(",")))
    return out


def _parse_parts(arg, n):
    if not arg:
        return []
    if arg.startswith("all:"):
        return all_bipartitions(n, int(arg[4:]))
    return [Bipartition(n, tuple(int(q) for q in piece.split(",")))
            for piece in arg.split(";")]


def _emit_report(sink, report, fmt):
    if fmt == "csv":
        sink.line(report.to_csv_row())
        return
    d = report.to_json_dict()
    for key in ("value", "stderr"):
        if not math.isfinite(d[key]):
            d[key] = None
    sink.line(json.dumps(d, separators=(",", ":")))


def _cmd_estimate(args):
    header = read_header(args.file)
    if header.povm != "sic":
        raise ShotFileError(
            "estimate works on sic shot files (shadow estimators)")
    n = header.n_qubits
    frame = sic_frame(header.frame)
    fidelity_targets = []
    if args.fidelity:
        for spec in args.fidelity.split(","):
            target = parse_state(spec, header.seed)
            if not isinstance(target, PureState):
                raise ValueError(f"fidelity target {spec!r} must be pure")
            if target.n_qubits != n:
                raise ValueError(f"fidelity target {spec!r} has wrong size")
            fidelity_targets.append((spec, target))
    cfg = TrackerConfig(
        n_qubits=n,
        fidelity_targets=fidelity_targets,
        purity_subsets=_parse_subsets(args.purity, n),
        renyi_parts=_parse_parts(args.renyi, n),
        batch=args.batch,
        interval=args.interval,
        stopping=None if args.no_stopping else StoppingRule(
            window=args.window, tol=args.tol),
    )
    engine = OnlineEngine(cfg, frame)
    sink = _Sink(args.out)
    try:
        if args.format == "csv":
            sink.line(CSV_HEADER)
        for chunk in iter_sic_chunks(args.file):
            for report in engine.feed(chunk):
                _emit_report(sink, report, args.format)
            if engine.converged:
                break
        for report in engine.finalize():
            _emit_report(sink, report, args.format)
    finally:
        sink.close()
    if args.out != "-":
        _write_manifest(args.out, args, [args.file], [args.out])
    return EXIT_OK if engine.converged else EXIT_EXHAUSTED


# --- reconstruct ----------------------------------------------------------


def _cmd_reconstruct(args):
    header = read_header(args.file)
    n = header.n_qubits
    if args.method == "shadow-mean":
        if header.povm != "sic":
            raise ShotFileError("shadow-mean needs a sic shot file")
        frame = sic_frame(header.frame)
        acc = ShadowAccumulator(n, range(n), frame)
        for chunk in iter_sic_chunks(args.file):
            acc.add_records(chunk)
        result = ReconstructionResult(estimate=acc.mean(),
                                      method="shadow-mean")
        shots = acc.count
    else:
        frame = sic_frame(header.frame) if header.povm == "sic" else None
        superop = FrameSuperoperator(header.povm, n, frame=frame)
        if header.povm == "sic":
            _, digits = read_sic_digits(args.file)
            freqs = FrequencyVector.from_sic_shots(digits, n)
        else:
            _, settings, bits = read_pauli_shots(args.file)
            freqs = FrequencyVector.from_pauli_shots(settings, bits)
        weights = "multinomial" if args.weights == "multinomial" else None
        result = reconstruct(freqs, superop, args.method, weights=weights)
        shots = freqs.total_shots
    with open(args.out, "w", encoding="ascii") as f:
        json.dump(result.to_json_dict(shots), f)
        f.write("\n")
    _write_manifest(args.out, args, [args.file], [args.out])
    print(f"{args.method}: wrote {2**n}x{2**n} estimate to {args.out} "
          f"(residual {result.residual:.3g}, iterations {result.iterations})")
    return EXIT_OK


# --- budget ---------------------------------------------------------------


def _cmd_budget(args):
    q = BudgetQuery(k=args.k, l=args.l, epsilon=args.epsilon,
                    delta=args.delta, hs_norm_sq=args.hs_norm_sq)
    sink = _Sink(args.out)
    try:
        sink.line(BUDGET_CSV_HEADER)
        sink.line(budget_csv_row(q))
    finally:
        sink.close()
    if args.out != "-":
        _write_manifest(args.out, args, [], [args.out])
    return EXIT_OK


# --- bench ----------------------------------------------------------------


def _per_shot_shadow_mean(digits, frame):
    """Deliberately canonical accumulation: one kron chain per shot, so the
    timing reflects the M * 4^N cost rather than the pattern-count shortcut
    used by the streaming estimators."""
    mats = shadow_matrices(frame)
    n = digits.shape[1]
    dim = 2**n
    total = np.zeros((dim, dim), dtype=complex)
    for row in digits:
        m = mats[row[0]]
        for k in range(1, n):
            m = np.kron(m, mats[row[k]])
        total += m
    return total / digits.shape[0]


BENCH_CSV_HEADER = "n_qubits,method,shots,wall_ms"


def _cmd_bench(args):
    n_list = [int(x) for x in args.n_list.split(",")]
    methods = args.methods.split(",")
    frame = sic_frame("standard")
    sink = _Sink(args.out)
    try:
        sink.line(BENCH_CSV_HEADER)
        for n in n_list:
            state = make_product("0" * n)
            digits = sample_sic_shots(state, frame, args.shots,
                                      derive_rng(args.seed, "bench", n))
            for method in methods:
                for _ in range(args.repeat):
                    t0 = time.perf_counter()
                    if method == "shadow-mean":
                        _per_shot_shadow_mean(digits, frame)
                    elif method == "lininv":
                        superop = FrameSuperoperator("sic", n, frame=frame)
                        freqs = FrequencyVector.from_sic_shots(digits, n)
                        reconstruct(freqs, superop, "lininv")
                    elif method == "pls":
                        superop = FrameSuperoperator("sic", n, frame=frame)
                        freqs = FrequencyVector.from_sic_shots(digits, n)
                        reconstruct(freqs, superop, "pls")
                    else:
                        raise ValueError(f"unknown bench method {method!r}")
                    wall = (time.perf_counter() - t0) * 1000.0
                    sink.line(f"{n},{method},{args.shots},{wall:.3f}")
    finally:
        sink.close()
    if args.out != "-":
        _write_manifest(args.out, args, [], [args.out])
    return EXIT_OK


# --- game -----------------------------------------------------------------


GAME_CSV_HEADER = "trial,secret,winner,correct,shots,declared"


def _cmd_game(args):
    game = Game(sic_frame(args.frame))

    def play(trial):
        return game.play(args.seed, trial=trial, gap_window=args.gap_window,
                         shot_cap=args.shot_cap)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(play, range(args.trials)))
    else:
        results = [play(t) for t in range(args.trials)]
    sink = _Sink(args.out)
    try:
        sink.line(GAME_CSV_HEADER)
        for _, _, t in results:
            sink.line(f"{t['trial']},{t['secret']},{t['winner']},"
                      f"{int(t['correct'])},{t['shots']},{int(t['declared'])}")
    finally:
        sink.close()
    n_correct = sum(t["correct"] for _, _, t in results)
    shots = sorted(t["shots"] for _, _, t in results)
    median = shots[len(shots) // 2]
    print(f"correct {n_correct}/{args.trials}, median shots {median}",
          file=sys.stderr)
    if args.out != "-":
        _write_manifest(args.out, args, [], [args.out])
    return EXIT_OK


# --- verify ---------------------------------------------------------------


def _verify_checks(seed):
    from .budget import (coincidence_probability, enumerated_coincidence,
                         exact_quadratic_variance, observable_budget,
                         purity_budget)
    from .povm import naimark_unitary, sic_outcome_distribution, \
        NAIMARK_STANDARD
    from .qstate import purity_exact, random_density
    from .reconstruct import lininv, pls
    from .shadows import shadow_expand, PAIR_TRACE
    from .povm import digits_from_indices

    def frames():
        for name in ("standard", "rotated"):
            f = sic_frame(name)  # constructor enforces the design identities
            ov = np.abs(f.kets @ f.kets.conj().T) ** 2
            off = ov[~np.eye(4, dtype=bool)]
            assert np.max(np.abs(off - 1 / 3)) < 1e-12

    def naimark():
        f = sic_frame("standard")
        u = naimark_unitary(f)
        assert np.max(np.abs(u.conj().T @ u - np.eye(4))) <= 1e-12
        assert np.max(np.abs(u[:, :2] - f.kets / math.sqrt(2))) <= 1e-12
        assert np.max(np.abs(u - NAIMARK_STANDARD)) == 0.0

    def shadow_inversion():
        frame = sic_frame("standard")
        for n in (1, 2):
            rho = random_density(n, derive_rng(seed, "state", n))
            probs = sic_outcome_distribution(rho, frame)
            digits = digits_from_indices(np.arange(4**n), n)
            acc = np.zeros((2**n, 2**n), dtype=complex)
            for p, row in zip(probs, digits):
                acc += p * shadow_expand(row, range(n), frame)
            assert np.max(np.abs(acc - rho.matrix)) <= 1e-10

    def lininv_equals_shadow_mean():
        frame = sic_frame("standard")
        n = 2
        rng = derive_rng(seed, "state", 10)
        counts = rng.integers(0, 50, size=4**n) + 1
        digits = digits_from_indices(
            np.repeat(np.arange(4**n), counts), n)
        superop = FrameSuperoperator("sic", n, frame=frame)
        freqs = counts / counts.sum()
        est = lininv(freqs, superop).estimate
        acc = ShadowAccumulator(n, range(n), frame)
        acc.add_records(digits)
        assert np.max(np.abs(est - acc.mean())) <= 1e-8

    def purity_unbiased():
        frame = sic_frame("standard")
        rho = random_density(1, derive_rng(seed, "state", 20))
        probs = sic_outcome_distribution(rho, frame)
        expect = probs @ _pair_kernel_1() @ probs
        assert abs(expect - purity_exact(rho)) <= 1e-10

    def _pair_kernel_1():
        return PAIR_TRACE

    def coincidence():
        frame = sic_frame("standard")
        for n in (1, 2):
            rho = random_density(n, derive_rng(seed, "state", 30 + n))
            lhs = enumerated_coincidence(rho, frame)
            rhs = coincidence_probability(rho)
            assert abs(lhs - rhs) <= 1e-10
            assert lhs <= 3.0**-n + 1e-12

    def budgets():
        assert observable_budget(BudgetQuery(1, 1, 0.1, 0.01)) == 8478
        assert purity_budget(BudgetQuery(2, 1, 0.1, 0.1)) == 54000

    def pls_hand_case():
        out = pls(np.diag([1.2, -0.2])).matrix
        assert np.max(np.abs(out - np.diag([1.0, 0.0]))) <= 1e-12

    def quadratic_hand_case():
        frame = sic_frame("standard")
        rho = DensityOperator(np.eye(2) / 2, check=False)
        assert abs(exact_quadratic_variance(rho, frame) - 6.75) <= 1e-12

    return [
        ("frame-identities", frames),
        ("naimark-unitary", naimark),
        ("shadow-inversion", shadow_inversion),
        ("lininv-shadow-equivalence", lininv_equals_shadow_mean),
        ("purity-unbiasedness", purity_unbiased),
        ("coincidence-lemma", coincidence),
        ("measurement-budgets", budgets),
        ("pls-projection", pls_hand_case),
        ("quadratic-variance-hand-case", quadratic_hand_case),
    ]


def _cmd_verify(args):
    failures = 0
    for name, check in _verify_checks(args.seed):
        try:
            check()
        except Exception as exc:  # deliberate: report and keep going
            failures += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"PASS {name}")
    if failures:
        print(f"FAILED: {failures} failing check(s)")
        return 1
    print("OK: all checks passed")
    return 0


# --- parser wiring ---------------------------------------------------------


def build_parser():
    p = _Parser(prog="sictomo",
                description="Single-setting SIC tomography: simulate shot "
                            "records, stream property estimates, reconstruct "
                            "states, and check measurement budgets.")
    p.add_argument("--version", action="version",
                   version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="sample a shot file from a state")
    sim.add_argument("--state", required=True)
    sim.add_argument("--povm", choices=("sic", "pauli"), default="sic")
    sim.add_argument("--frame", choices=("standard", "rotated"),
                     default="standard")
    sim.add_argument("--shots", type=int, required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--mode", choices=("auto", "multinomial", "pershot"),
                     default="auto")
    sim.add_argument("--batch", type=int, default=1,
                     help="batch-size hint recorded in the header")
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=_cmd_simulate)

    est = sub.add_parser("estimate",
                         help="stream shadow estimates from a shot file")
    est.add_argument("--file", required=True)
    est.add_argument("--fidelity", default="",
                     help="comma list of pure target state specs")
    est.add_argument("--purity", default="",
                     help="'full' or ';'-separated qubit subsets like 0,1;2,3")
    est.add_argument("--renyi", default="",
                     help="'all:K' for every bipartition with smaller side "
                          "<= K, or ';'-separated side-A subsets")
    est.add_argument("--batch", type=int, default=1)
    est.add_argument("--interval", type=int, default=100)
    est.add_argument("--window", type=int, default=5)
    est.add_argument("--tol", type=float, default=0.01)
    est.add_argument("--no-stopping", action="store_true")
    est.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    est.add_argument("--threads", type=int, default=1)
    est.add_argument("--out", default="-")
    est.set_defaults(func=_cmd_estimate)

    rec = sub.add_parser("reconstruct", help="full-state reconstruction")
    rec.add_argument("--file", required=True)
    rec.add_argument("--method", required=True,
                     choices=("lininv", "pls", "mle", "shadow-mean"))
    rec.add_argument("--weights", choices=("none", "multinomial"),
                     default="none")
    rec.add_argument("--out", required=True)
    rec.set_defaults(func=_cmd_reconstruct)

    bud = sub.add_parser("budget", help="measurement budget calculator")
    bud.add_argument("--k", type=int, required=True)
    bud.add_argument("--l", type=int, default=1)
    bud.add_argument("--epsilon", type=float, required=True)
    bud.add_argument("--delta", type=float, required=True)
    bud.add_argument("--hs-norm-sq", type=float, default=None)
    bud.add_argument("--out", default="-")
    bud.set_defaults(func=_cmd_budget)

    ben = sub.add_parser("bench", help="reconstruction wall-time scaling")
    ben.add_argument("--n-list", default="2,3,4")
    ben.add_argument("--methods", default="shadow-mean,lininv")
    ben.add_argument("--shots", type=int, default=2000)
    ben.add_argument("--seed", type=int, default=0)
    ben.add_argument("--repeat", type=int, default=1)
    ben.add_argument("--threads", type=int, default=1)
    ben.add_argument("--out", default="-")
    ben.set_defaults(func=_cmd_bench)

    gam = sub.add_parser("game",
                         help="cluster-state identification from single shots")
    gam.add_argument("--trials", type=int, default=1)
    gam.add_argument("--seed", type=int, default=0)
    gam.add_argument("--gap-window", type=int, default=5)
    gam.add_argument("--shot-cap", type=int, default=10000)
    gam.add_argument("--frame", choices=("standard", "rotated"),
                     default="standard")
    gam.add_argument("--threads", type=int, default=1)
    gam.add_argument("--out", default="-")
    gam.set_defaults(func=_cmd_game)

    ver = sub.add_parser("verify", help="run the built-in oracle checks")
    ver.add_argument("--seed", type=int, default=0)
    ver.set_defaults(func=_cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CapExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (ShotFileError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
