"""Property estimators built on classical shadows.

Linear observables use a per-outcome-pattern lookup table. Purity is the
pair U-statistic kept in streaming form through tr(S^2) - Q, where S is the
running matrix sum and Q the running sum of tr(shadow^2); the identity
sum_{m != m'} tr(s_m s_m') = tr(S^2) - Q is exact, so each new batch costs
one matrix add plus two traces regardless of how many shots came before.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .povm import derive_rng
from .qstate import Bipartition
from .shadows import _SubsetBasis, _check_subset, shadow_matrices

RENYI_PURITY_FLOOR = 1e-6
JACKKNIFE_GROUPS = 100


class ObservableSpec:
    """Hermitian observable together with the qubits it acts on."""

    __slots__ = ("support", "operator", "label")

    def __init__(self, support, operator, label=None):
        self.support = tuple(sorted(set(int(q) for q in support)))
        if len(self.support) != len(tuple(support)):
            raise ValueError("duplicate qubits in observable support")
        operator = np.asarray(operator, dtype=complex)
        dim = 2 ** len(self.support)
        if operator.shape != (dim, dim):
            raise ValueError("operator dimension does not match support size")
        if not np.allclose(operator, operator.conj().T, atol=1e-12):
            raise ValueError("observable must be Hermitian within 1e-12")
        self.operator = operator
        self.label = label if label is not None else (
            "obs:" + "-".join(str(q) for q in self.support))

    def hs_norm_sq(self):
        return float(np.einsum("ij,ji->", self.operator, self.operator).real)


def observable_lut(obs, frame):
    """tr(O sigma) for every digit pattern on the support, shape (4^K,)."""
    basis = _SubsetBasis(tuple(range(len(obs.support))), frame)
    stack = basis.stack()
    if stack is not None:
        return np.einsum("cij,ji->c", stack, obs.operator).real
    vals = np.empty(4 ** len(obs.support))
    for code in range(vals.size):
        vals[code] = np.einsum("ij,ji->", basis.matrix(code),
                               obs.operator).real
    return vals


def linear_values(digits, obs, frame):
    """Per-shot estimates tr(O sigma_m), marginalized to the support."""
    digits = np.asarray(digits)
    support = _check_subset(obs.support, digits.shape[1])
    shifts = 4 ** np.arange(len(support) - 1, -1, -1, dtype=np.int64)
    codes = digits[:, list(support)].astype(np.int64) @ shifts
    return observable_lut(obs, frame)[codes]


def estimate_linear(digits, obs, frame):
    """Mean and standard error of the single-shot observable estimator."""
    vals = linear_values(digits, obs, frame)
    if vals.size == 0:
        raise ValueError("no records")
    stderr = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(vals.mean()), stderr


class RunningMoments:
    """Streaming mean / variance via chunk merges (single pass, stable)."""

    __slots__ = ("count", "mean", "m2")

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add_values(self, values):
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            return
        n_b = values.size
        mean_b = float(values.mean())
        m2_b = float(((values - mean_b) ** 2).sum())
        delta = mean_b - self.mean
        total = self.count + n_b
        self.mean += delta * n_b / total
        self.m2 += m2_b + delta * delta * self.count * n_b / total
        self.count = total

    def stderr(self):
        if self.count < 2:
            return 0.0
        return math.sqrt(self.m2 / (self.count - 1) / self.count)

    def merge(self, other):
        if other.count:
            delta = other.mean - self.mean
            total = self.count + other.count
            self.mean += delta * other.count / total
            self.m2 += other.m2 + delta * delta * self.count * other.count / total
            self.count = total
        return self


class PurityTracker:
    """Streaming pair U-statistic for tr(rho_K^2) over batched shadows.

    Shots arrive as digit rows; every `batch` consecutive shots form one
    batched shadow (trailing partial batch stays pending). Batches are dealt
    round-robin into at most `jackknife_groups` groups so the delete-one-group
    jackknife stderr costs O(G * 4^|K|) per call, independent of M.
    """

    def __init__(self, n_qubits, subset, frame, batch=1,
                 jackknife_groups=JACKKNIFE_GROUPS):
        if batch < 1:
            raise ValueError("batch size must be >= 1")
        if jackknife_groups < 2:
            raise ValueError("need at least 2 jackknife groups")
        self.n_qubits = n_qubits
        self.batch = int(batch)
        self._basis = _SubsetBasis(_check_subset(subset, n_qubits), frame)
        self.subset = self._basis.subset
        dim = self._basis.dim
        self._groups = int(jackknife_groups)
        self._slot_s = np.zeros((self._groups, dim, dim), dtype=complex)
        self._slot_q = np.zeros(self._groups)
        self._slot_m = np.zeros(self._groups, dtype=np.int64)
        self._batches_seen = 0
        self._pending = np.empty(0, dtype=np.int64)

    # -- ingestion ---------------------------------------------------------

    def add_records(self, digits):
        digits = np.asarray(digits)
        if digits.ndim == 1:
            digits = digits[None, :]
        if digits.shape[1] != self.n_qubits:
            raise ValueError("record length does not match tracker")
        self._push_codes(self._basis.codes(digits))

    def _push_codes(self, new_codes):
        codes = np.concatenate([self._pending, new_codes])
        n_new = codes.size // self.batch
        self._pending = codes[n_new * self.batch:]
        if n_new == 0:
            return
        codes = codes[:n_new * self.batch]
        slots = (self._batches_seen + np.arange(n_new)) % self._groups
        self._batches_seen += n_new
        stack = self._basis.stack()
        if self.batch == 1:
            # scatter-add of gathered pattern matrices: cost M * 4^|K| per
            # chunk, independent of how many groups or patterns exist
            if stack is not None:
                np.add.at(self._slot_s, slots, stack[codes])
            else:
                for g, c in zip(slots, codes):
                    self._slot_s[g] += self._basis.matrix(int(c))
            per_slot = np.bincount(slots, minlength=self._groups)
            self._slot_q += per_slot * 5.0 ** self._basis.k
            self._slot_m += per_slot
        else:
            bidx = np.repeat(np.arange(n_new), self.batch)
            bmats = np.zeros((n_new, self._basis.dim, self._basis.dim),
                             dtype=complex)
            if stack is not None:
                np.add.at(bmats, bidx, stack[codes])
            else:
                for i, c in zip(bidx, codes):
                    bmats[i] += self._basis.matrix(int(c))
            bmats /= self.batch
            q = np.einsum("bij,bji->b", bmats, bmats).real
            np.add.at(self._slot_s, slots, bmats)
            np.add.at(self._slot_q, slots, q)
            np.add.at(self._slot_m, slots, 1)

    def add_batch(self, batched):
        """Feed one externally averaged batch (subset must match)."""
        if tuple(batched.subset) != self.subset:
            raise ValueError("batch subset does not match tracker")
        g = self._batches_seen % self._groups
        self._slot_s[g] += batched.matrix
        self._slot_q[g] += float(
            np.einsum("ij,ji->", batched.matrix, batched.matrix).real)
        self._slot_m[g] += 1
        self._batches_seen += 1

    def merge(self, other):
        if (other.subset != self.subset or other.batch != self.batch
                or other._groups != self._groups):
            raise ValueError("incompatible purity trackers")
        self._slot_s += other._slot_s
        self._slot_q += other._slot_q
        self._slot_m += other._slot_m
        self._batches_seen += other._batches_seen
        if other._pending.size:
            self._push_codes(other._pending)
        return self

    # -- readout -----------------------------------------------------------

    @property
    def m_batches(self):
        return int(self._slot_m.sum())

    @property
    def running_sum(self):
        return self._slot_s.sum(axis=0)

    @property
    def self_overlap_sum(self):
        return float(self._slot_q.sum())

    def value(self):
        m = self.m_batches
        if m < 2:
            raise ValueError("purity estimate needs at least 2 batches")
        s = self.running_sum
        tr2 = float(np.einsum("ij,ji->", s, s).real)
        return (tr2 - self.self_overlap_sum) / (m * (m - 1))

    def stderr(self):
        """Delete-one-group jackknife standard error (nan if undefined)."""
        present = self._slot_m > 0
        n_present = int(present.sum())
        m = self.m_batches
        if n_present < 2 or (m - self._slot_m[present] < 2).any():
            return float("nan")
        s = self.running_sum
        q = self.self_overlap_sum
        loo_s = s[None, :, :] - self._slot_s[present]
        loo_m = (m - self._slot_m[present]).astype(float)
        tr2 = np.einsum("gij,gji->g", loo_s, loo_s).real
        vals = (tr2 - (q - self._slot_q[present])) / (loo_m * (loo_m - 1))
        var = (n_present - 1) / n_present * ((vals - vals.mean()) ** 2).sum()
        return math.sqrt(max(var, 0.0))


def estimate_purity(digits, subset, frame, batch=1):
    """Pair U-statistic estimate of tr(rho_subset^2) from digit records."""
    digits = np.asarray(digits)
    tracker = PurityTracker(digits.shape[1], subset, frame, batch=batch)
    tracker.add_records(digits)
    return tracker.value()


def renyi2_from_purity(purity):
    return -math.log2(max(purity, RENYI_PURITY_FLOOR))


def renyi2_stderr(purity, purity_stderr):
    """Delta-method propagation of the purity stderr through -log2."""
    return purity_stderr / (max(purity, RENYI_PURITY_FLOOR) * math.log(2))


def estimate_renyi2(digits, part, frame, batch=1):
    """Renyi-2 entropy of a bipartition, marginalized to its smaller side."""
    return renyi2_from_purity(
        estimate_purity(digits, part.smaller_side, frame, batch=batch))


def _sample_distinct_triples(n_records, n_triples, rng):
    idx = rng.integers(0, n_records, size=(n_triples, 3))
    while True:
        bad = ((idx[:, 0] == idx[:, 1]) | (idx[:, 0] == idx[:, 2])
               | (idx[:, 1] == idx[:, 2]))
        if not bad.any():
            return idx
        idx[bad] = rng.integers(0, n_records, size=(int(bad.sum()), 3))


def estimate_p3(digits, part, frame, triple_budget=20000, seed=0):
    """PPT moment tr((rho^{T_A})^3) via the triple U-statistic.

    Each shadow is partially transposed on `part.subset_a` (a per-site
    transpose, since the shadows factorize). The kernel Re tr(abc) is
    invariant under all orderings of a Hermitian triple, so unordered
    distinct triples are enumerated when there are at most `triple_budget`
    of them and uniformly sub-sampled otherwise.
    """
    digits = np.asarray(digits)
    m, n = digits.shape
    if m < 3:
        raise ValueError("p3 estimate needs at least 3 records")
    if part.n_qubits != n:
        raise ValueError("bipartition does not match record width")
    site = shadow_matrices(frame)
    site_t = site.transpose(0, 2, 1)
    in_a = set(part.subset_a)
    mats = np.ones((m, 1, 1), dtype=complex)
    for k in range(n):
        factor = (site_t if k in in_a else site)[digits[:, k]]
        mats = np.einsum("mij,mkl->mikjl", mats, factor).reshape(
            m, mats.shape[1] * 2, mats.shape[1] * 2)
    n_total = m * (m - 1) * (m - 2) // 6
    if n_total <= triple_budget:
        idx = np.fromiter(itertools.chain.from_iterable(
            itertools.combinations(range(m), 3)), dtype=np.int64,
            count=3 * n_total).reshape(n_total, 3)
    else:
        idx = _sample_distinct_triples(m, triple_budget, derive_rng(seed, "triples"))
    vals = np.einsum("tij,tjk,tki->t", mats[idx[:, 0]], mats[idx[:, 1]],
                     mats[idx[:, 2]], optimize=True).real
    return float(vals.mean())


def median_of_means(digits, n_groups, estimator):
    """Median over `n_groups` contiguous groups of the per-group estimate."""
    digits = np.asarray(digits)
    if n_groups < 1:
        raise ValueError("need at least one group")
    if digits.shape[0] < n_groups:
        raise ValueError("fewer records than groups")
    if n_groups == 1:
        return float(estimator(digits))
    groups = np.array_split(digits, n_groups, axis=0)
    return float(np.median([estimator(g) for g in groups]))


def all_bipartitions(n, max_side):
    """Every bipartition with smaller side at most max_side, deduplicated.

    At side n/2 each split would appear twice; the lexicographically smaller
    subset is kept.
    """
    if not 1 <= max_side <= n // 2:
        raise ValueError("max_side must satisfy 1 <= max_side <= n/2")
    out = []
    for size in range(1, max_side + 1):
        for subset in itertools.combinations(range(n), size):
            if 2 * size == n:
                comp = tuple(q for q in range(n) if q not in subset)
                if comp < subset:
                    continue
            out.append(Bipartition(n, subset))
    return out


REPORT_COLUMNS = ("shots", "method", "quantity", "subset", "value",
                  "stderr", "wall_ms")
CSV_HEADER = ",".join(REPORT_COLUMNS)


@dataclass
class EstimateReport:
    """One reported estimate, serializable as a CSV row or JSON object."""

    shots: int
    method: str
    quantity: str
    subset: str
    value: float
    stderr: float
    wall_ms: float

    def to_csv_row(self):
        return (f"{self.shots},{self.method},{self.quantity},{self.subset},"
                f"{self.value:.10g},{self.stderr:.6g},{self.wall_ms:.3f}")

    def to_json_dict(self):
        return {"shots": self.shots, "method": self.method,
                "quantity": self.quantity, "subset": self.subset,
                "value": self.value, "stderr": self.stderr,
                "wall_ms": self.wall_ms}
