"""Shot-record files and online (streaming) estimation.

File format, bit-exact:
    line 1: `#TOMO v1`
    line 2: one-line JSON header, keys n_qubits, povm, frame, seed, batch
    body:   SIC `d1d2...dN` with digits 0-3; Pauli `XYZ... b1b2...` with a
            single space between setting letters and outcome bits.

The online engine consumes digit rows in report intervals and keeps every
tracked quantity incrementally, so the analysis cost of an interval does not
depend on how many shots came before it.
"""

import itertools
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .estimators import (EstimateReport, ObservableSpec, PurityTracker,
                         RunningMoments, linear_values, estimate_purity,
                         observable_lut, renyi2_from_purity, renyi2_stderr)
from .povm import derive_rng, sample_pauli_shots, sample_sic_shots, sic_frame, \
    sic_outcome_distribution, FrameSuperoperator
from .qstate import PureState, fidelity_pure, make_linear_cluster, purity_exact
from .reconstruct import FrequencyVector, reconstruct
from .shadows import _check_subset

MAGIC = "#TOMO v1"
DEFAULT_INTERVAL = 100
# full-system lookup tables enumerate 4^N patterns; fidelity targets and
# observables above this support size are refused rather than silently slow
LINEAR_LUT_CAP = 5


class ShotFileError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass
class ShotFileHeader:
    n_qubits: int
    povm: str = "sic"
    frame: str = "standard"
    seed: int = 0
    batch: int = 1

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be >= 1")
        if self.povm not in ("sic", "pauli"):
            raise ValueError("povm must be 'sic' or 'pauli'")
        if self.frame not in ("standard", "rotated"):
            raise ValueError("frame must be 'standard' or 'rotated'")
        if self.batch < 1:
            raise ValueError("batch hint must be >= 1")

    def to_json(self):
        return json.dumps({"n_qubits": self.n_qubits, "povm": self.povm,
                           "frame": self.frame, "seed": int(self.seed),
                           "batch": self.batch}, separators=(",", ":"))

    @classmethod
    def from_json(cls, line):
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ShotFileError(f"header is not valid JSON: {exc}", line=2)
        if not isinstance(d, dict):
            raise ShotFileError("header must be a JSON object", line=2)
        missing = {"n_qubits", "povm", "frame", "seed", "batch"} - set(d)
        if missing:
            raise ShotFileError(f"header missing keys: {sorted(missing)}", line=2)
        try:
            return cls(n_qubits=int(d["n_qubits"]), povm=d["povm"],
                       frame=d["frame"], seed=int(d["seed"]),
                       batch=int(d["batch"]))
        except (ValueError, TypeError) as exc:
            raise ShotFileError(str(exc), line=2)


_SETTING_BYTES = np.array([ord("X"), ord("Y"), ord("Z")], dtype=np.uint8)


def write_shots(path, header, records):
    """Write a shot file. SIC records: (M, N) digit array. Pauli records:
    a (settings, bits) pair of (M, N) uint8 arrays (setting codes 0/1/2)."""
    with open(path, "wb") as f:
        f.write((MAGIC + "\n").encode("ascii"))
        f.write((header.to_json() + "\n").encode("ascii"))
        n = header.n_qubits
        if header.povm == "sic":
            digits = np.asarray(records, dtype=np.uint8)
            if digits.ndim != 2 or digits.shape[1] != n:
                raise ValueError("sic records must be an (M, N) digit array")
            if digits.size and digits.max() > 3:
                raise ValueError("sic digits must lie in 0..3")
            for lo in range(0, digits.shape[0], 65536):
                chunk = digits[lo:lo + 65536]
                blob = np.empty((chunk.shape[0], n + 1), dtype=np.uint8)
                blob[:, :n] = chunk + ord("0")
                blob[:, n] = ord("\n")
                f.write(blob.tobytes())
        else:
            settings, bits = records
            settings = np.asarray(settings, dtype=np.uint8)
            bits = np.asarray(bits, dtype=np.uint8)
            if settings.shape != bits.shape or settings.ndim != 2 \
                    or settings.shape[1] != n:
                raise ValueError("pauli records must be (M, N) setting and "
                                 "bit arrays of equal shape")
            if settings.size and (settings.max() > 2 or bits.max() > 1):
                raise ValueError("setting codes must be 0..2 and bits 0..1")
            for lo in range(0, settings.shape[0], 65536):
                s, b = settings[lo:lo + 65536], bits[lo:lo + 65536]
                blob = np.empty((s.shape[0], 2 * n + 2), dtype=np.uint8)
                blob[:, :n] = _SETTING_BYTES[s]
                blob[:, n] = ord(" ")
                blob[:, n + 1:2 * n + 1] = b + ord("0")
                blob[:, 2 * n + 1] = ord("\n")
                f.write(blob.tobytes())


def _read_header_lines(f):
    magic = f.readline().rstrip("\n")
    if magic != MAGIC:
        raise ShotFileError(f"expected {MAGIC!r}, got {magic!r}", line=1)
    header_line = f.readline()
    if not header_line:
        raise ShotFileError("missing header", line=2)
    return ShotFileHeader.from_json(header_line.rstrip("\n"))


def read_header(path):
    with open(path, "r", encoding="ascii") as f:
        return _read_header_lines(f)


_LETTERS = {"X": 0, "Y": 1, "Z": 2}


def _parse_sic_line(line, n, line_no):
    if len(line) != n:
        raise ShotFileError(
            f"expected {n} digits, got {len(line)}", line=line_no)
    row = np.frombuffer(line.encode("ascii"), dtype=np.uint8) - ord("0")
    if row.max() > 3:
        bad = line[int(np.argmax(row > 3))]
        raise ShotFileError(f"digit {bad!r} out of range 0..3", line=line_no)
    return row


def _parse_pauli_line(line, n, line_no):
    parts = line.split(" ")
    if len(parts) != 2 or len(parts[0]) != n or len(parts[1]) != n:
        raise ShotFileError(
            "expected '<N setting letters> <N outcome bits>'", line=line_no)
    letters, bits = parts
    for ch in letters:
        if ch not in _LETTERS:
            raise ShotFileError(f"setting letter {ch!r} not in XYZ", line=line_no)
    for ch in bits:
        if ch not in "01":
            raise ShotFileError(f"outcome bit {ch!r} not 0/1", line=line_no)
    return letters, np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")


def read_shots(path):
    """Incremental record reader: yields digit rows (SIC) or
    (setting string, bit row) pairs (Pauli). Validates line by line."""
    with open(path, "r", encoding="ascii") as f:
        header = _read_header_lines(f)
        n = header.n_qubits
        parse = _parse_sic_line if header.povm == "sic" else _parse_pauli_line
        for line_no, raw in enumerate(f, start=3):
            line = raw.rstrip("\n")
            if not line:
                raise ShotFileError("empty record line", line=line_no)
            yield parse(line, n, line_no)


def iter_sic_chunks(path, chunk_rows=4096):
    """Yield (m, N) digit arrays from a SIC shot file, bounded memory."""
    with open(path, "r", encoding="ascii") as f:
        header = _read_header_lines(f)
        if header.povm != "sic":
            raise ShotFileError("expected a sic shot file", line=2)
        n = header.n_qubits
        line_no = 3
        while True:
            lines = list(itertools.islice((l.rstrip("\n") for l in f), chunk_rows))
            if not lines:
                return
            joined = "".join(lines)
            if len(joined) != n * len(lines):
                for i, line in enumerate(lines):
                    if len(line) != n:
                        raise ShotFileError(
                            f"expected {n} digits, got {len(line)}",
                            line=line_no + i)
            arr = np.frombuffer(joined.encode("ascii"), dtype=np.uint8) - ord("0")
            arr = arr.reshape(len(lines), n)
            if arr.max() > 3:
                bad = int(np.argmax((arr > 3).any(axis=1)))
                raise ShotFileError("digit out of range 0..3",
                                    line=line_no + bad)
            line_no += len(lines)
            yield arr


def read_sic_digits(path):
    """Whole-file convenience: (header, (M, N) digit array)."""
    header = read_header(path)
    chunks = list(iter_sic_chunks(path))
    if not chunks:
        return header, np.empty((0, header.n_qubits), dtype=np.uint8)
    return header, np.concatenate(chunks, axis=0)


def read_pauli_shots(path):
    """Whole-file Pauli reader: (header, setting codes, bits)."""
    header = read_header(path)
    if header.povm != "pauli":
        raise ShotFileError("expected a pauli shot file", line=2)
    settings, bits = [], []
    for letters, row in read_shots(path):
        settings.append([_LETTERS[c] for c in letters])
        bits.append(row)
    n = header.n_qubits
    if not settings:
        return header, np.empty((0, n), np.uint8), np.empty((0, n), np.uint8)
    return header, np.array(settings, dtype=np.uint8), np.array(bits, dtype=np.uint8)


# --- online engine ------------------------------------------------------------


@dataclass
class StoppingRule:
    """Stop when the relative spread of the last `window` reported values is
    at most `tol`, for every tracked quantity."""

    window: int = 5
    tol: float = 0.01

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.tol <= 0:
            raise ValueError("tol must be positive")

    def satisfied(self, values):
        if len(values) < self.window:
            return False
        tail = np.asarray(values[-self.window:], dtype=float)
        if not np.isfinite(tail).all():
            return False
        spread = float(tail.max() - tail.min())
        return spread <= self.tol * max(abs(tail[-1]), 1e-12)


@dataclass
class TrackerConfig:
    n_qubits: int
    fidelity_targets: list = field(default_factory=list)  # (label, PureState)
    observables: list = field(default_factory=list)       # ObservableSpec
    purity_subsets: list = field(default_factory=list)    # index tuples
    renyi_parts: list = field(default_factory=list)       # Bipartition
    batch: int = 1
    interval: int = DEFAULT_INTERVAL
    stopping: StoppingRule = None

    def __post_init__(self):
        if self.batch < 1 or self.interval < 1:
            raise ValueError("batch and interval must be >= 1")
        if not (self.fidelity_targets or self.observables
                or self.purity_subsets or self.renyi_parts):
            raise ValueError("at least one tracked quantity is required")
        for part in self.renyi_parts:
            if part.n_qubits != self.n_qubits:
                raise ValueError("bipartition size does not match n_qubits")


class _LinearTracker:
    __slots__ = ("quantity", "subset_label", "cols", "shifts", "lut", "moments")

    def __init__(self, quantity, subset_label, support, lut):
        self.quantity = quantity
        self.subset_label = subset_label
        self.cols = list(support)
        self.shifts = 4 ** np.arange(len(self.cols) - 1, -1, -1, dtype=np.int64)
        self.lut = lut
        self.moments = RunningMoments()

    def update(self, digits):
        codes = digits[:, self.cols].astype(np.int64) @ self.shifts
        self.moments.add_values(self.lut[codes])

    def report(self):
        return self.moments.mean, self.moments.stderr()


class OnlineEngine:
    """Incremental trackers for one shot stream; one report per interval."""

    def __init__(self, cfg, frame):
        self.cfg = cfg
        self.frame = frame
        n = cfg.n_qubits
        self._linear = []
        for label, target in cfg.fidelity_targets:
            if n > LINEAR_LUT_CAP:
                raise ValueError(
                    f"fidelity tracking enumerates 4^N patterns; capped at "
                    f"N <= {LINEAR_LUT_CAP}")
            obs = ObservableSpec(range(n), target.density().matrix, label)
            self._linear.append(_LinearTracker(
                f"fidelity:{label}", "all", obs.support,
                observable_lut(obs, frame)))
        for obs in cfg.observables:
            if len(obs.support) > LINEAR_LUT_CAP:
                raise ValueError(
                    f"observable support capped at {LINEAR_LUT_CAP} qubits")
            _check_subset(obs.support, n)
            self._linear.append(_LinearTracker(
                obs.label, "-".join(str(q) for q in obs.support),
                obs.support, observable_lut(obs, frame)))
        self._purity = [
            ("-".join(str(q) for q in sorted(subset)),
             PurityTracker(n, subset, frame, batch=cfg.batch))
            for subset in cfg.purity_subsets]
        self._renyi = [
            (part.label(),
             PurityTracker(n, part.smaller_side, frame, batch=cfg.batch))
            for part in cfg.renyi_parts]
        self._histories = {}
        self._buf = []
        self._buf_count = 0
        self.shots_seen = 0
        self.converged = False

    def feed(self, digits):
        """Ingest a chunk of digit rows; returns newly completed reports."""
        if self.converged:
            return []
        digits = np.asarray(digits, dtype=np.uint8)
        if digits.ndim == 1:
            digits = digits[None, :]
        if digits.shape[1] != self.cfg.n_qubits:
            raise ValueError("record width does not match tracker config")
        self._buf.append(digits)
        self._buf_count += digits.shape[0]
        out = []
        while self._buf_count >= self.cfg.interval and not self.converged:
            out.extend(self._process_interval(self._take(self.cfg.interval)))
        if self.converged:
            self._buf, self._buf_count = [], 0
        return out

    def finalize(self):
        """Flush a trailing partial interval (stream ended)."""
        if self.converged or self._buf_count == 0:
            return []
        rows = self._process_interval(self._take(self._buf_count))
        return rows

    def _take(self, m):
        parts, need = [], m
        while need:
            head = self._buf[0]
            if head.shape[0] <= need:
                parts.append(self._buf.pop(0))
                need -= head.shape[0]
            else:
                parts.append(head[:need])
                self._buf[0] = head[need:]
                need = 0
        self._buf_count -= m
        return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)

    def _process_interval(self, block):
        t0 = time.perf_counter()
        for tracker in self._linear:
            tracker.update(block)
        for _, tracker in self._purity:
            tracker.add_records(block)
        for _, tracker in self._renyi:
            tracker.add_records(block)
        self.shots_seen += block.shape[0]

        rows = []
        for tracker in self._linear:
            value, stderr = tracker.report()
            rows.append((tracker.quantity, tracker.subset_label, value, stderr))
        for label, tracker in self._purity:
            value, stderr = self._purity_report(tracker)
            rows.append(("purity", label, value, stderr))
        for label, tracker in self._renyi:
            p, p_se = self._purity_report(tracker)
            if np.isfinite(p):
                rows.append(("renyi2", label, renyi2_from_purity(p),
                             renyi2_stderr(p, p_se)))
            else:
                rows.append(("renyi2", label, float("nan"), float("nan")))
        wall_ms = (time.perf_counter() - t0) * 1000.0

        reports = []
        for quantity, subset, value, stderr in rows:
            self._histories.setdefault((quantity, subset), []).append(value)
            reports.append(EstimateReport(
                shots=self.shots_seen, method="shadows", quantity=quantity,
                subset=subset, value=value, stderr=stderr, wall_ms=wall_ms))
        rule = self.cfg.stopping
        if rule is not None and all(
                rule.satisfied(h) for h in self._histories.values()):
            self.converged = True
        return reports

    @staticmethod
    def _purity_report(tracker):
        try:
            return tracker.value(), tracker.stderr()
        except ValueError:
            return float("nan"), float("nan")


def run_online(source, cfg, frame=None, chunk_rows=4096):
    """Drive an OnlineEngine over a shot file path or an iterable of digit
    chunks. Returns (reports, engine); engine.converged tells whether the
    stopping rule fired before the stream ran out."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        header = read_header(source)
        if header.povm != "sic":
            raise ShotFileError("online estimation requires a sic shot file")
        if header.n_qubits != cfg.n_qubits:
            raise ShotFileError(
                f"file has n_qubits={header.n_qubits}, config expects "
                f"{cfg.n_qubits}")
        if frame is None:
            frame = sic_frame(header.frame)
        chunks = iter_sic_chunks(source, chunk_rows)
    else:
        if frame is None:
            frame = sic_frame("standard")
        chunks = iter(source)
    engine = OnlineEngine(cfg, frame)
    reports = []
    for chunk in chunks:
        reports.extend(engine.feed(chunk))
        if engine.converged:
            break
    reports.extend(engine.finalize())
    return reports, engine


# --- state-identification game -------------------------------------------------


class Game:
    """Identify which of 16 sign-labelled 4-qubit cluster states is being
    measured, from single SIC shots only."""

    N_QUBITS = 4

    def __init__(self, frame=None):
        self.frame = frame if frame is not None else sic_frame("standard")
        self.sign_strings = ["".join(p) for p in
                             itertools.product("+-", repeat=self.N_QUBITS)]
        self.candidates = [make_linear_cluster(self.N_QUBITS, s)
                           for s in self.sign_strings]
        probs = [sic_outcome_distribution(c, self.frame)
                 for c in self.candidates]
        self.probs = np.array([p / p.sum() for p in probs])
        self.luts = np.array([
            observable_lut(
                ObservableSpec(range(self.N_QUBITS), c.density().matrix, s),
                self.frame)
            for c, s in zip(self.candidates, self.sign_strings)])

    def play(self, seed, trial=0, gap_window=5, shot_cap=10000):
        """One round: returns (winner, shots_used, transcript).

        Declares the current fidelity leader once its gap to the best other
        candidate has stayed positive beyond one standard error of the gap
        estimate, with the same leader, for gap_window consecutive shots.
        Plain positivity declares almost immediately and misidentifies often;
        requiring the gap to clear its own uncertainty is what makes the
        declaration reliable at a handful of shots.
        """
        if gap_window < 1:
            raise ValueError("gap_window must be >= 1")
        secret = int(derive_rng(seed, "game-secret", trial).integers(16))
        rng = derive_rng(seed, "game-shots", trial)
        n_codes = self.probs.shape[1]
        s1 = np.zeros(16)          # per-candidate running value sums
        s2 = np.zeros((16, 16))    # running pairwise product sums
        seen, run, prev = 0, 0, -1
        while seen < shot_cap:
            block = min(256, shot_cap - seen)
            codes = rng.choice(n_codes, size=block, p=self.probs[secret])
            for code in codes:
                v = self.luts[:, code]
                s1 += v
                s2 += np.outer(v, v)
                seen += 1
                means = s1 / seen
                order = np.argsort(means)
                top, sec = int(order[-1]), int(order[-2])
                gap = means[top] - means[sec]
                if seen >= 2:
                    ssq = s2[top, top] + s2[sec, sec] - 2 * s2[top, sec]
                    var = max(ssq - seen * gap * gap, 0.0) / (seen - 1)
                    threshold = math.sqrt(var / seen)
                else:
                    threshold = 0.0  # ties still block: gap must be > 0
                if gap > threshold:
                    run = run + 1 if top == prev else 1
                    prev = top
                else:
                    run, prev = 0, -1
                if run >= gap_window:
                    return top, seen, {
                        "secret": secret, "winner": top,
                        "correct": top == secret, "shots": seen,
                        "declared": True, "gap_window": gap_window,
                        "final_gap": float(gap), "seed": int(seed),
                        "trial": int(trial)}
        # cap reached without a persistent gap; report best guess undeclared
        winner = int(np.argmax(s1))
        return winner, shot_cap, {
            "secret": secret, "winner": winner, "correct": winner == secret,
            "shots": shot_cap, "declared": False, "gap_window": gap_window,
            "final_gap": 0.0, "seed": int(seed), "trial": int(trial)}


def run_game(seed, trial=0, gap_window=5, shot_cap=10000, frame=None):
    return Game(frame).play(seed, trial=trial, gap_window=gap_window,
                            shot_cap=shot_cap)


# --- convergence experiment ------------------------------------------------------


CONVERGENCE_CSV_HEADER = "method,shots,batch,rep,quantity,value"


def convergence_experiment(state, m_grid, repetitions, seed, kind="sic",
                           frame=None, methods=None, batch_grid=None,
                           target=None):
    """Sample shot sets of increasing size and estimate fidelity + purity
    under each method; returns plot-ready row dicts.

    With `batch_grid` set, only the shadow purity is computed, once per
    (shots, batch) cell, which is the 2-D batching grid mode.
    """
    frame = frame if frame is not None else sic_frame("standard")
    n = state.n_qubits
    if target is None and isinstance(state, PureState):
        target = state
    if methods is None:
        methods = ["shadows", "lininv", "pls"] if kind == "sic" else ["lininv", "pls"]
        if n <= 3:
            methods.append("mle")
    if kind == "pauli" and ("shadows" in methods or batch_grid is not None):
        raise ValueError("shadow estimates need sic shots")
    superop = None
    if batch_grid is None and any(m in methods for m in ("lininv", "pls", "mle")):
        superop = FrameSuperoperator(kind, n, frame=frame)
    obs_target = None
    if target is not None and kind == "sic" and n <= LINEAR_LUT_CAP:
        obs_target = ObservableSpec(range(n), target.density().matrix, "target")

    rows = []
    m_grid = sorted(m_grid)
    m_max = m_grid[-1]
    for rep in range(repetitions):
        rng = derive_rng(seed, "convergence", rep)
        if kind == "sic":
            digits = sample_sic_shots(state, frame, m_max, rng)
        if batch_grid is not None:
            for m in m_grid:
                for b in batch_grid:
                    rows.append({"method": "shadows", "shots": m, "batch": b,
                                 "rep": rep, "quantity": "purity",
                                 "value": estimate_purity(
                                     digits[:m], range(n), frame, batch=b)})
            continue
        for m in m_grid:
            if kind == "sic":
                freqs = FrequencyVector.from_sic_shots(digits[:m], n)
            else:
                settings, bits = sample_pauli_shots(state, m, rng)
                freqs = FrequencyVector.from_pauli_shots(settings, bits)
            for method in methods:
                if method == "shadows":
                    if obs_target is not None:
                        fid = float(linear_values(digits[:m], obs_target,
                                                  frame).mean())
                        rows.append({"method": method, "shots": m, "batch": 1,
                                     "rep": rep, "quantity": "fidelity",
                                     "value": fid})
                    rows.append({"method": method, "shots": m, "batch": 1,
                                 "rep": rep, "quantity": "purity",
                                 "value": estimate_purity(digits[:m],
                                                          range(n), frame)})
                    continue
                res = reconstruct(freqs, superop, method)
                if target is not None:
                    rows.append({"method": method, "shots": m, "batch": 1,
                                 "rep": rep, "quantity": "fidelity",
                                 "value": fidelity_pure(res.estimate, target)})
                rows.append({"method": method, "shots": m, "batch": 1,
                             "rep": rep, "quantity": "purity",
                             "value": purity_exact(res.estimate)})
    return rows


def convergence_csv(rows):
    lines = [CONVERGENCE_CSV_HEADER]
    for r in rows:
        lines.append(f"{r['method']},{r['shots']},{r['batch']},{r['rep']},"
                     f"{r['quantity']},{r['value']:.10g}")
    return "\n".join(lines) + "\n"
