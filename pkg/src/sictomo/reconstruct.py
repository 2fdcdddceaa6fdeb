"""Full-state reconstruction from outcome frequencies.

Three routes: plain pseudo-inverse linear inversion (fast, possibly
unphysical), projected least squares (linear inversion snapped to the
nearest density matrix), and weighted least-squares fitting constrained to
density matrices, solved by projected gradient descent.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .povm import CapExceededError, FrameSuperoperator
from .qstate import DensityOperator

MLE_CAP = 5  # qubits; the fit solves repeatedly in dimension 4^N
MLE_MAX_ITER = 5000
MLE_TOL = 1e-8
_WEIGHT_VAR_FLOOR = 1e-4


class FrequencyVector:
    """Outcome counts for one dataset, convertible to frequency estimates.

    SIC: counts indexed by the base-4 outcome word, frequencies n_j / M.
    Pauli: counts shaped (3^N settings, 2^N outcomes); the frequency of the
    flat outcome j = s * 2^N + b is n_{s,b} / (N_s * 3^N), which estimates
    tr(E_j rho) for the uniform-setting POVM and needs N_s >= 1 everywhere.
    """

    def __init__(self, kind, n_qubits, counts):
        if kind not in ("sic", "pauli"):
            raise ValueError("kind must be 'sic' or 'pauli'")
        self.kind = kind
        self.n_qubits = int(n_qubits)
        counts = np.asarray(counts)
        if np.any(counts < 0) or not np.issubdtype(counts.dtype, np.integer):
            raise ValueError("counts must be non-negative integers")
        if kind == "sic":
            if counts.shape != (4**self.n_qubits,):
                raise ValueError("sic counts must have length 4^N")
        else:
            if counts.shape != (3**self.n_qubits, 2**self.n_qubits):
                raise ValueError("pauli counts must be (3^N, 2^N)")
            if (counts.sum(axis=1) == 0).any():
                raise ValueError("every Pauli setting needs at least one shot")
        self.counts = counts

    @classmethod
    def from_sic_shots(cls, digits, n_qubits=None):
        digits = np.asarray(digits)
        n = digits.shape[1] if n_qubits is None else n_qubits
        shifts = 4 ** np.arange(n - 1, -1, -1, dtype=np.int64)
        idx = digits.astype(np.int64) @ shifts
        return cls("sic", n, np.bincount(idx, minlength=4**n))

    @classmethod
    def from_pauli_shots(cls, settings, bits):
        """settings: (M, N) codes 0/1/2 for X/Y/Z, or a sequence of strings."""
        bits = np.asarray(bits)
        n = bits.shape[1]
        if isinstance(settings, np.ndarray) and settings.dtype != object:
            codes = settings.astype(np.int64)
        else:
            letter = {"X": 0, "Y": 1, "Z": 2}
            codes = np.array([[letter[c] for c in s] for s in settings],
                             dtype=np.int64)
        pow3 = 3 ** np.arange(n - 1, -1, -1, dtype=np.int64)
        s_idx = codes @ pow3
        b_idx = bits.astype(np.int64) @ (2 ** np.arange(n - 1, -1, -1, dtype=np.int64))
        counts = np.zeros((3**n, 2**n), dtype=np.int64)
        np.add.at(counts, (s_idx, b_idx), 1)
        return cls("pauli", n, counts)

    @property
    def total_shots(self):
        return int(self.counts.sum())

    def frequencies(self):
        """Flat estimates of the POVM outcome probabilities, summing to 1."""
        if self.kind == "sic":
            return self.counts / self.total_shots
        per_setting = self.counts.sum(axis=1, keepdims=True)
        return (self.counts / per_setting / 3**self.n_qubits).ravel()

    def per_outcome_shots(self):
        """Shots behind each flat frequency entry (for statistical weights)."""
        if self.kind == "sic":
            return np.full(self.counts.size, float(self.total_shots))
        per_setting = self.counts.sum(axis=1, keepdims=True)
        return np.broadcast_to(per_setting, self.counts.shape).ravel().astype(float)


@dataclass
class ReconstructionResult:
    estimate: np.ndarray
    method: str
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True
    objective_history: list = field(default_factory=list)

    def to_json_dict(self, shots=None):
        d = {
            "n_qubits": int(round(math.log2(self.estimate.shape[0]))),
            "kind": "mixed",
            "re": self.estimate.real.reshape(-1).tolist(),  # row-major
            "im": self.estimate.imag.reshape(-1).tolist(),
            "meta": {"method": self.method, "residual": self.residual,
                     "iterations": self.iterations,
                     "converged": self.converged},
        }
        if shots is not None:
            d["meta"]["shots"] = int(shots)
        return d


def _freq_array(freqs, superop):
    if isinstance(freqs, FrequencyVector):
        if freqs.kind != superop.kind or freqs.n_qubits != superop.n_qubits:
            raise ValueError("frequency vector does not match superoperator")
        return freqs.frequencies()
    f = np.asarray(freqs, dtype=float)
    if f.shape != (superop.n_outcomes,):
        raise ValueError("frequency vector has wrong length")
    return f


def lininv(freqs, superop):
    """Pseudo-inverse linear inversion; Hermitian but possibly not PSD."""
    f = _freq_array(freqs, superop)
    dim = 2**superop.n_qubits
    rho = superop.lininv_vec(f).reshape(dim, dim)
    rho = (rho + rho.conj().T) / 2
    resid = float(np.linalg.norm(superop.probability_map() @ rho.ravel() - f))
    return ReconstructionResult(estimate=rho, method="lininv", residual=resid)


def simplex_projection(v):
    """Euclidean projection of a real vector onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = (np.cumsum(u) - 1.0) / np.arange(1, v.size + 1)
    k = np.nonzero(u > css)[0][-1]
    return np.clip(v - css[k], 0.0, None)


def _project_density(mat):
    """Frobenius-nearest density matrix (eigenvalues onto the simplex)."""
    vals, vecs = np.linalg.eigh((mat + mat.conj().T) / 2)
    w = simplex_projection(vals)
    return (vecs * w) @ vecs.conj().T


def pls(rho_hat):
    """Projected least squares: snap a Hermitian estimate to a density matrix."""
    rho_hat = np.asarray(rho_hat, dtype=complex)
    if not np.allclose(rho_hat, rho_hat.conj().T, atol=1e-8):
        raise ValueError("input must be Hermitian within 1e-8")
    return DensityOperator(_project_density(rho_hat))


def pls_from_freqs(freqs, superop):
    res = lininv(freqs, superop)
    rho = pls(res.estimate).matrix
    resid = float(np.linalg.norm(
        superop.probability_map() @ rho.ravel() - _freq_array(freqs, superop)))
    return ReconstructionResult(estimate=rho, method="pls", residual=resid)


def _weight_vector(freqs, weights, superop):
    if weights is None:
        return np.ones(superop.n_outcomes)
    if isinstance(weights, str):
        if weights != "multinomial":
            raise ValueError("weights must be None, 'multinomial', or a vector")
        if not isinstance(freqs, FrequencyVector):
            raise ValueError("multinomial weights need counts, not bare frequencies")
        f = freqs.frequencies()
        var = np.maximum(f * (1 - f), _WEIGHT_VAR_FLOOR)
        return np.sqrt(freqs.per_outcome_shots() / var)
    w = np.asarray(weights, dtype=float)
    if w.shape != (superop.n_outcomes,) or (w <= 0).any():
        raise ValueError("weight vector must be positive with one entry per outcome")
    return w


def mle(freqs, superop, weights=None, max_iter=MLE_MAX_ITER, tol=MLE_TOL):
    """Weighted least-squares fit over density matrices.

    Minimizes ||W (A vec(rho) - f)||_2 by projected gradient descent with a
    backtracking line search (steps are only accepted when the objective does
    not increase, so the recorded objective history is monotone). Projection
    after each step is the same eigenvalue-simplex map as pls. Stops when the
    projected step, scaled by the step size, falls below `tol`. The reported
    residual is in the weighted norm (units of standard errors when
    multinomial weights are used).
    """
    if superop.n_qubits > MLE_CAP:
        raise CapExceededError(
            f"mle supports at most {MLE_CAP} qubits "
            f"(requested {superop.n_qubits}); the fit repeatedly solves in "
            f"dimension 4^N")
    f = _freq_array(freqs, superop)
    w = _weight_vector(freqs, weights, superop)
    a_w = w[:, None] * superop.probability_map()
    b = w * f
    s_w = a_w.conj().T @ a_w
    lip = 2 * float(np.linalg.eigvalsh(s_w)[-1])
    dim = 2**superop.n_qubits

    def objective(x):
        r = a_w @ x.ravel() - b
        return float(np.real(np.vdot(r, r)))

    def gradient(x):
        g = 2 * (a_w.conj().T @ (a_w @ x.ravel() - b)).reshape(dim, dim)
        return (g + g.conj().T) / 2

    x = _project_density(lininv(freqs, superop).estimate)
    obj = objective(x)
    history = [obj]
    step = 1.0 / lip
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        g = gradient(x)
        t = min(step * 1.5, 10.0 / lip)
        while True:
            cand = _project_density(x - t * g)
            cand_obj = objective(cand)
            if cand_obj <= obj or t < 1e-18:
                break
            t /= 2
        if cand_obj > obj:
            converged = True  # no descent direction left at float precision
            break
        moved = float(np.linalg.norm(cand - x))
        x, obj, step = cand, cand_obj, t
        history.append(obj)
        if moved / t <= tol:
            converged = True
            break
    return ReconstructionResult(
        estimate=x, method="mle", iterations=iterations,
        residual=math.sqrt(max(obj, 0.0)), converged=converged,
        objective_history=history)


def reconstruct(freqs, superop, method, weights=None):
    """Dispatch by method name: lininv, pls, or mle."""
    if method == "lininv":
        return lininv(freqs, superop)
    if method == "pls":
        return pls_from_freqs(freqs, superop)
    if method == "mle":
        return mle(freqs, superop, weights=weights)
    raise ValueError(f"unknown reconstruction method: {method}")
