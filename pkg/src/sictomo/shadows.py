"""Classical shadows built from SIC outcome digits.

Each shot with outcome digits (i_1 .. i_N) defines the single-shot estimator
sigma = kron_k (3|psi_{i_k}><psi_{i_k}| - I), which reproduces rho in
expectation. Shadows are kept as digit rows and materialized on demand for a
qubit subset, so memory stays O(M N) while subsystem queries cost O(4^|K|).
"""

import numpy as np

# tr(sigma_i sigma_j) factorizes per site into 5 (matching digits) or -1;
# this holds for every SIC frame since it only uses the 1/3 overlaps
PAIR_TRACE = np.full((4, 4), -1.0)
np.fill_diagonal(PAIR_TRACE, 5.0)

_STACK_CAP = 5  # largest |subset| with a fully precomputed 4^K matrix stack


def shadow_matrices(frame):
    """Per-digit single-qubit shadow factors 3|psi><psi| - I, shape (4,2,2).

    Each factor has eigenvalues exactly {2, -1} and unit trace.
    """
    return 3 * frame.projectors - np.eye(2)


def _site_mix(a, n, k, coeff_a, coeff_id):
    """coeff_a * A + coeff_id * (I at site k) kron tr_site_k(A)."""
    t = a.reshape((2,) * (2 * n))
    red = np.trace(t, axis1=k, axis2=k + n)
    emb = np.tensordot(np.eye(2, dtype=a.dtype), red, axes=0)
    emb = np.moveaxis(emb, (0, 1), (k, k + n))
    return (coeff_a * t + coeff_id * emb).reshape(a.shape)


def depolarize(a, sites):
    """Apply the strength-1/3 depolarizing channel to every site."""
    a = np.asarray(a, dtype=complex)
    if a.shape != (2**sites, 2**sites):
        raise ValueError("matrix dimension does not match site count")
    for k in range(sites):
        a = _site_mix(a, sites, k, 1 / 3, 1 / 3)
    return a


def inverse_depolarizing(a, sites):
    """Per-site inverse map A -> 3A - tr(A) I, tensored over all sites."""
    a = np.asarray(a, dtype=complex)
    if a.shape != (2**sites, 2**sites):
        raise ValueError("matrix dimension does not match site count")
    for k in range(sites):
        a = _site_mix(a, sites, k, 3.0, -1.0)
    return a


def _check_subset(subset, n_qubits):
    subset = tuple(sorted(set(int(q) for q in subset)))
    if not subset:
        raise ValueError("subset must be non-empty")
    if subset[0] < 0 or subset[-1] >= n_qubits:
        raise ValueError("subset indices out of range")
    return subset


def shadow_expand(digits_row, subset, frame):
    """Materialize the shadow on `subset`, dimension 2^|subset|."""
    digits_row = np.asarray(digits_row)
    subset = _check_subset(subset, digits_row.size)
    mats = shadow_matrices(frame)
    out = np.ones((1, 1), dtype=complex)
    for k in subset:
        out = np.kron(out, mats[digits_row[k]])
    return out


def pair_trace(digits_a, digits_b, subset=None):
    """tr(sigma sigma') from two digit rows: product of per-site 5 / -1."""
    a = np.asarray(digits_a)
    b = np.asarray(digits_b)
    if subset is not None:
        a, b = a[list(subset)], b[list(subset)]
    return float(np.prod(np.where(a == b, 5.0, -1.0)))


class _SubsetBasis:
    """Cached shadow matrices for every digit pattern on a fixed subset."""

    def __init__(self, subset, frame):
        self.subset = subset
        self.k = len(subset)
        self.dim = 2**self.k
        self.frame = frame
        self._site = shadow_matrices(frame)
        self._shifts = 4 ** np.arange(self.k - 1, -1, -1, dtype=np.int64)
        self._stack = None
        self._cache = {}

    def codes(self, digits):
        """Pattern code per record: base-4 word of the subset digits."""
        return np.asarray(digits)[:, list(self.subset)].astype(np.int64) @ self._shifts

    def matrix(self, code):
        mat = self._cache.get(code)
        if mat is None:
            out = np.ones((1, 1), dtype=complex)
            for pos in range(self.k):
                out = np.kron(out, self._site[(code // self._shifts[pos]) % 4])
            mat = self._cache[code] = out
        return mat

    def stack(self):
        """(4^K, dim, dim) array of all pattern matrices; None above the cap."""
        if self.k > _STACK_CAP:
            return None
        if self._stack is None:
            s = np.empty((4**self.k, self.dim, self.dim), dtype=complex)
            for code in range(4**self.k):
                s[code] = self.matrix(code)
            self._stack = s
        return self._stack

    def weighted_sum(self, counts):
        """sum_code counts[code] * matrix(code)."""
        stack = self.stack()
        if stack is not None:
            return np.tensordot(counts, stack, axes=1)
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for code in np.nonzero(counts)[0]:
            out += counts[code] * self.matrix(int(code))
        return out


class BatchedShadow:
    """Average of `count` consecutive shadows on a qubit subset."""

    __slots__ = ("subset", "matrix", "count")

    def __init__(self, subset, matrix, count):
        self.subset = tuple(subset)
        self.matrix = matrix
        self.count = int(count)


def batch_shadows(digits, subset, frame, b):
    """Group consecutive records into batches of b and average each group.

    The final partial group is dropped so every batch carries equal weight.
    """
    if b < 1:
        raise ValueError("batch size must be >= 1")
    digits = np.asarray(digits)
    basis = _SubsetBasis(_check_subset(subset, digits.shape[1]), frame)
    n_batches = digits.shape[0] // b
    codes = basis.codes(digits[:n_batches * b]).reshape(n_batches, b)
    out = []
    for row in codes:
        counts = np.bincount(row, minlength=4**basis.k)
        out.append(BatchedShadow(basis.subset, basis.weighted_sum(counts) / b, b))
    return out


class ShadowAccumulator:
    """Running sums for the shadow mean and the self-overlap bookkeeping.

    Single writer; merge() lets parallel accumulators fan in. For unbatched
    SIC shadows self_overlap_sum is exactly count * 5^|subset|.
    """

    def __init__(self, n_qubits, subset, frame):
        self.n_qubits = n_qubits
        self.subset = _check_subset(subset, n_qubits)
        self.frame = frame
        self._basis = _SubsetBasis(self.subset, frame)
        self.running_sum = np.zeros((self._basis.dim,) * 2, dtype=complex)
        self.self_overlap_sum = 0.0
        self.count = 0

    def add_records(self, digits, weights=None):
        digits = np.asarray(digits)
        if digits.ndim == 1:
            digits = digits[None, :]
        if digits.shape[1] != self.n_qubits:
            raise ValueError("record length does not match accumulator")
        codes = self._basis.codes(digits)
        if weights is None:
            counts = np.bincount(codes, minlength=4**self._basis.k)
            total = digits.shape[0]
        else:
            weights = np.asarray(weights, dtype=float)
            counts = np.bincount(codes, weights=weights, minlength=4**self._basis.k)
            total = weights.sum()
        self.running_sum += self._basis.weighted_sum(counts)
        self.self_overlap_sum += total * 5.0 ** self._basis.k
        self.count += int(total)

    def add_record(self, digits_row, weight=1):
        self.add_records(np.asarray(digits_row)[None, :],
                         None if weight == 1 else [weight])

    def add_batch(self, batched):
        if tuple(batched.subset) != self.subset:
            raise ValueError("batch subset does not match accumulator")
        self.running_sum += batched.matrix
        self.self_overlap_sum += float(
            np.einsum("ij,ji->", batched.matrix, batched.matrix).real)
        self.count += 1

    def mean(self):
        if self.count == 0:
            raise ValueError("empty accumulator")
        return self.running_sum / self.count

    def merge(self, other):
        if other.subset != self.subset or other.n_qubits != self.n_qubits:
            raise ValueError("incompatible accumulators")
        self.running_sum += other.running_sum
        self.self_overlap_sum += other.self_overlap_sum
        self.count += other.count
        return self


def shadow_mean(digits, frame, subset=None):
    """Mean shadow matrix over all records (the plain estimator of rho_K)."""
    digits = np.asarray(digits)
    if subset is None:
        subset = range(digits.shape[1])
    acc = ShadowAccumulator(digits.shape[1], subset, frame)
    acc.add_records(digits)
    return acc.mean()
