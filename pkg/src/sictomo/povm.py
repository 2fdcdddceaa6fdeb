"""SIC and Pauli measurement frames, outcome distributions, shot sampling.

A SIC frame is four single-qubit kets whose projectors tile the Bloch sphere
as a regular tetrahedron. Tensor powers of the four effects (1/2)|psi_i><psi_i|
give a single-setting informationally complete N-qubit measurement. Outcome
digit strings are 0-based (digits 0..3), with qubit 0 as the leftmost digit.
"""

import itertools
import math

import numpy as np
from scipy.linalg import null_space

DIST_CAP = 10  # largest N for materializing a 4^N outcome vector
SIC_SUPEROP_CAP = 6  # 4^N x 4^N dense superoperator
PAULI_SUPEROP_CAP = 5  # 6^N effect rows

OMEGA = np.exp(2j * np.pi / 3)

# Reference frame kets: |0> plus three kets at Bloch angle arccos(-1/3),
# relative phases at the cube roots of unity.
SIC_KETS_STANDARD = np.array([
    [1, 0],
    [1 / math.sqrt(3), math.sqrt(2 / 3)],
    [1 / math.sqrt(3), OMEGA * math.sqrt(2 / 3)],
    [1 / math.sqrt(3), OMEGA**2 * math.sqrt(2 / 3)],
], dtype=complex)

# Ququart embedding unitary: row i of the first two columns is the i-th
# measurement ket scaled by 1/sqrt(2) (bit-exact, the columns are computed
# from the kets); the last two columns complete an orthonormal set.
NAIMARK_STANDARD = np.hstack([
    SIC_KETS_STANDARD / math.sqrt(2),
    np.array([
        [0, 1 / math.sqrt(2)],
        [1 / math.sqrt(3), -1 / math.sqrt(6)],
        [OMEGA**2 / math.sqrt(3), -1 / math.sqrt(6)],
        [OMEGA / math.sqrt(3), -1 / math.sqrt(6)],
    ], dtype=complex),
])

# Bloch tetrahedron with an even number of minus signs per vertex; gives the
# frame whose outcome statistics look identical along the X, Y and Z axes.
ROTATED_BLOCH = np.array([
    [1, 1, 1],
    [1, -1, -1],
    [-1, 1, -1],
    [-1, -1, 1],
], dtype=float) / math.sqrt(3)


class CapExceededError(ValueError):
    """A size cap would be exceeded (dense storage or enumeration)."""


def bloch_to_ket(v):
    x, y, z = v
    theta = math.acos(max(-1.0, min(1.0, z)))
    phi = math.atan2(y, x)
    return np.array([math.cos(theta / 2),
                     np.exp(1j * phi) * math.sin(theta / 2)], dtype=complex)


def ket_to_bloch(psi):
    a, b = psi
    return np.array([2 * (a.conjugate() * b).real,
                     2 * (a.conjugate() * b).imag,
                     (abs(a) ** 2 - abs(b) ** 2)])


_SWAP2 = np.zeros((4, 4))
for _i in range(2):
    for _j in range(2):
        _SWAP2[_i * 2 + _j, _j * 2 + _i] = 1.0


class SicFrame:
    """Four single-qubit kets forming a symmetric IC POVM.

    kets: array (4, 2). The constructor verifies the 1-design, 2-design and
    symmetric-overlap identities, so any accepted custom frame is a genuine
    SIC frame.
    """

    def __init__(self, name, kets):
        kets = np.asarray(kets, dtype=complex)
        if kets.shape != (4, 2):
            raise ValueError("a SIC frame needs exactly 4 single-qubit kets")
        self.name = name
        self.kets = kets
        self.projectors = np.einsum("ia,ib->iab", kets, kets.conj())
        one = self.projectors.sum(axis=0) / 4
        if np.max(np.abs(one - np.eye(2) / 2)) > 1e-12:
            raise ValueError("frame fails the 1-design identity")
        two = sum(np.kron(p, p) for p in self.projectors) / 4
        if np.max(np.abs(two - (np.eye(4) + _SWAP2) / 6)) > 1e-12:
            raise ValueError("frame fails the 2-design identity")
        ov = np.abs(kets @ kets.conj().T) ** 2
        if np.max(np.abs(ov - (np.eye(4) * (1 - 1 / 3) + 1 / 3))) > 1e-12:
            raise ValueError("frame overlaps are not symmetric at 1/3")

    @property
    def effects(self):
        """The four POVM effects (1/2)|psi_i><psi_i|."""
        return self.projectors / 2

    @property
    def bloch_vectors(self):
        return np.array([ket_to_bloch(k) for k in self.kets])

    def __repr__(self):
        return f"SicFrame({self.name!r})"


def sic_frame(name):
    if name == "standard":
        return SicFrame("standard", SIC_KETS_STANDARD)
    if name == "rotated":
        return SicFrame("rotated", np.array([bloch_to_ket(v) for v in ROTATED_BLOCH]))
    raise ValueError(f"unknown SIC frame {name!r}")


def naimark_unitary(frame):
    """4x4 unitary embedding the frame as a ququart projective measurement."""
    if frame.name == "standard":
        return NAIMARK_STANDARD.copy()
    v = frame.kets / math.sqrt(2)
    w = null_space(v.conj().T)
    return np.hstack([v, w])


# --- outcome distributions --------------------------------------------------

def _state_parts(state):
    """(matrix_or_none, amplitudes_or_none, n_qubits)."""
    amp = getattr(state, "amplitudes", None)
    if amp is not None:
        return None, amp, state.n_qubits
    return state.matrix, None, state.n_qubits


def sic_outcome_distribution(state, frame, cap=DIST_CAP):
    """Pr[i1..iN | rho] = 2^-N <psi_i1...psi_iN| rho |psi_i1...psi_iN>.

    Returns a length 4^N vector indexed with qubit 0 as the most significant
    base-4 digit. Tiny negative entries from roundoff are clamped to 0.
    """
    mat, amp, n = _state_parts(state)
    if n > cap:
        raise CapExceededError(
            f"outcome distribution needs 4^{n} entries; cap is N <= {cap}")
    if amp is not None:
        # contract each qubit with the bra tensor; probabilities are the
        # squared magnitudes of the resulting outcome-amplitude tensor
        v = frame.kets.conj() / math.sqrt(2)  # v[i, a]
        t = amp.reshape((2,) * n)
        for _ in range(n):
            t = np.tensordot(t, v, axes=[(0,), (1,)])
        probs = np.abs(t.reshape(-1)) ** 2
    else:
        # Pr = sum_{ab} rho[a, b] * prod_k E_{i_k}[b_k, a_k]; after k
        # contractions the layout is row axes, then col axes, then outcome
        # axes, so the live qubit always sits at axes (0, n - k)
        e = frame.effects  # e[i, row, col]
        t = mat.reshape((2,) * (2 * n))
        for k in range(n):
            t = np.tensordot(t, e, axes=[(0, n - k), (2, 1)])
        probs = t.reshape(-1).real
    probs = np.where(probs < 0, 0.0, probs)
    return probs


_PAULI_EIGVECS = {
    "X": np.array([[1, 1], [1, -1]], dtype=complex).T / math.sqrt(2),
    "Y": np.array([[1, 1j], [1, -1j]], dtype=complex).T / math.sqrt(2),
    "Z": np.array([[1, 0], [0, 1]], dtype=complex).T,
}
# _PAULI_EIGVECS[L][:, b] is the eigenvector with eigenvalue (-1)^b


def pauli_outcome_distribution(state, setting):
    """Projective eigenbasis measurement probabilities for one setting.

    `setting` is a string over X, Y, Z (one letter per qubit). Outcome bit 0
    is the +1 eigenstate. Returns 2^N probabilities.
    """
    mat, amp, n = _state_parts(state)
    if len(setting) != n:
        raise ValueError("setting length does not match qubit count")
    if any(ch not in "XYZ" for ch in setting):
        raise ValueError("setting letters must be X, Y or Z")
    if amp is not None:
        t = amp.reshape((2,) * n)
        for ch in setting:
            v = _PAULI_EIGVECS[ch].conj().T  # v[b, a]
            t = np.tensordot(t, v, axes=[(0,), (1,)])
        probs = np.abs(t.reshape(-1)) ** 2
    else:
        t = mat.reshape((2,) * (2 * n))
        for k, ch in enumerate(setting):
            vecs = _PAULI_EIGVECS[ch]
            proj = np.einsum("ab,cb->bac", vecs, vecs.conj())  # proj[b] = |v_b><v_b|
            t = np.tensordot(t, proj, axes=[(0, n - k), (2, 1)])
        probs = t.reshape(-1).real
    return np.where(probs < 0, 0.0, probs)


# --- sampling ----------------------------------------------------------------

STREAM_IDS = {
    "sic-shots": 0,
    "pauli-shots": 1,
    "game-secret": 2,
    "game-shots": 3,
    "triples": 4,
    "bench": 5,
    "convergence": 6,
    "variance-mc": 7,
    "state": 8,
}


def derive_rng(seed, stream, index=0):
    """Deterministic per-component generator from one user seed.

    Splitmix-style expansion: the (stream, index) pair is folded into the
    SeedSequence spawn key, so distinct components never share a stream.
    """
    sid = STREAM_IDS[stream] if isinstance(stream, str) else int(stream)
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(sid, int(index))))


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def digits_from_indices(indices, n_qubits):
    """Decode flat outcome indices into (M, N) base-4 digit rows."""
    shifts = 4 ** np.arange(n_qubits - 1, -1, -1, dtype=np.int64)
    return ((np.asarray(indices, dtype=np.int64)[:, None] // shifts) % 4).astype(np.uint8)


def indices_from_digits(digits):
    digits = np.asarray(digits, dtype=np.int64)
    n = digits.shape[1]
    shifts = 4 ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return digits @ shifts


def sample_sic_shots(state, frame, n_shots, rng, mode="auto", chunk=4096):
    """Draw SIC outcome digit rows, shape (n_shots, N) dtype uint8.

    mode 'multinomial' materializes the exact 4^N distribution, draws counts
    and shuffles the expansion (same law as iid draws). mode 'pershot' samples
    each qubit conditionally and never builds the 4^N vector. 'auto' picks
    multinomial whenever N is within the distribution cap.
    """
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    rng = _as_rng(rng)
    n = state.n_qubits
    if mode == "auto":
        mode = "multinomial" if n <= DIST_CAP else "pershot"
    if mode == "multinomial":
        probs = sic_outcome_distribution(state, frame)
        total = probs.sum()
        counts = rng.multinomial(n_shots, probs / total)
        flat = np.repeat(np.arange(counts.size, dtype=np.int64), counts)
        rng.shuffle(flat)
        return digits_from_indices(flat, n)
    if mode != "pershot":
        raise ValueError(f"unknown sampling mode {mode!r}")
    amp = getattr(state, "amplitudes", None)
    if amp is not None:
        out = np.empty((n_shots, n), dtype=np.uint8)
        for lo in range(0, n_shots, chunk):
            hi = min(lo + chunk, n_shots)
            out[lo:hi] = _pershot_pure(amp, frame, hi - lo, n, rng)
        return out
    return _pershot_mixed(state.matrix, frame, n_shots, n, rng)


def _pershot_pure(amp, frame, m, n, rng):
    v = frame.kets.conj() / math.sqrt(2)  # v[i, a]
    cur = np.broadcast_to(amp, (m, amp.size)).copy()
    digits = np.empty((m, n), dtype=np.uint8)
    for k in range(n):
        rest = cur.shape[1] // 2
        cond = np.einsum("ia,cas->ics", v, cur.reshape(m, 2, rest))
        p = np.einsum("ics,ics->ci", cond, cond.conj()).real
        p_norm = p / p.sum(axis=1, keepdims=True)
        u = rng.random(m)
        d = (u[:, None] > np.cumsum(p_norm, axis=1)).sum(axis=1).astype(np.uint8)
        d = np.minimum(d, 3)  # guard the u == 1.0 edge
        digits[:, k] = d
        sel = cond[d, np.arange(m), :]
        cur = sel / np.sqrt(p[np.arange(m), d])[:, None]
    return digits


def _pershot_mixed(mat, frame, m, n, rng):
    # one shot at a time: contract the measured qubit on both sides of the
    # conditional matrix, exact but not vectorized
    eff = frame.effects
    digits = np.empty((m, n), dtype=np.uint8)
    for s in range(m):
        cur = mat
        for k in range(n):
            dim = cur.shape[0] // 2
            blocks = cur.reshape(2, dim, 2, dim)
            cond = np.einsum("iba,asbt->ist", eff, blocks)
            p = np.einsum("iss->i", cond).real
            p = np.where(p < 0, 0.0, p)
            d = rng.choice(4, p=p / p.sum())
            digits[s, k] = d
            cur = cond[d] / p[d]
        # cur ends as the fully contracted scalar block; nothing left to do
    return digits


def pauli_settings(n_qubits):
    """All 3^N settings in lexicographic order (X < Y < Z)."""
    return ["".join(s) for s in itertools.product("XYZ", repeat=n_qubits)]


def allocate_pauli_shots(n_shots, n_qubits):
    """Equal shots per setting; the remainder goes to the lexicographically
    first settings."""
    s = 3**n_qubits
    base, rem = divmod(n_shots, s)
    return base + (np.arange(s) < rem).astype(np.int64)


_LETTER_CODE = {"X": 0, "Y": 1, "Z": 2}


def sample_pauli_shots(state, n_shots, rng):
    """Sample all 3^N settings. Returns (settings, bits), both (n_shots, N)
    uint8, grouped by setting in lexicographic order."""
    rng = _as_rng(rng)
    n = state.n_qubits
    alloc = allocate_pauli_shots(n_shots, n)
    settings = np.empty((n_shots, n), dtype=np.uint8)
    bits = np.empty((n_shots, n), dtype=np.uint8)
    row = 0
    for s_idx, setting in enumerate(pauli_settings(n)):
        m = int(alloc[s_idx])
        if m == 0:
            continue
        probs = pauli_outcome_distribution(state, setting)
        counts = rng.multinomial(m, probs / probs.sum())
        flat = np.repeat(np.arange(counts.size, dtype=np.int64), counts)
        rng.shuffle(flat)
        shifts = 2 ** np.arange(n - 1, -1, -1, dtype=np.int64)
        settings[row:row + m] = [_LETTER_CODE[c] for c in setting]
        bits[row:row + m] = ((flat[:, None] // shifts) % 2).astype(np.uint8)
        row += m
    return settings, bits


# --- measurement superoperator ------------------------------------------------

def _vec(mat):
    return mat.reshape(-1)  # row-major


class FrameSuperoperator:
    """Frame Gram superoperator S_p = sum_j |E_j>><<E_j| and helpers.

    probability_map() returns A with rows <<E_j|, so A @ vec(rho) is the
    outcome probability vector; S_p = A^dagger A. The pseudo-inverse drops
    eigenvalues below 1e-10 times the largest.
    """

    def __init__(self, kind, n_qubits, frame=None):
        if kind == "sic":
            if n_qubits > SIC_SUPEROP_CAP:
                raise CapExceededError(
                    f"SIC superoperator cap is N <= {SIC_SUPEROP_CAP}, got {n_qubits}")
            self.frame = frame if frame is not None else sic_frame("standard")
        elif kind == "pauli":
            if n_qubits > PAULI_SUPEROP_CAP:
                raise CapExceededError(
                    f"Pauli superoperator cap is N <= {PAULI_SUPEROP_CAP}, got {n_qubits}")
            self.frame = None
        else:
            raise ValueError(f"unknown povm kind {kind!r}")
        self.kind = kind
        self.n_qubits = n_qubits
        self._a = None
        self._sp = None
        self._pinv = None

    @property
    def n_outcomes(self):
        return (4 if self.kind == "sic" else 6) ** self.n_qubits

    def effect(self, j):
        n = self.n_qubits
        if self.kind == "sic":
            digits = [(j // 4**(n - 1 - k)) % 4 for k in range(n)]
            out = np.ones((1, 1), dtype=complex)
            for d in digits:
                out = np.kron(out, self.frame.effects[d])
            return out
        s_idx, b_idx = divmod(j, 2**n)
        letters = []
        for k in range(n):
            letters.append("XYZ"[(s_idx // 3**(n - 1 - k)) % 3])
        out = np.ones((1, 1), dtype=complex)
        for k, ch in enumerate(letters):
            b = (b_idx >> (n - 1 - k)) & 1
            vec = _PAULI_EIGVECS[ch][:, b]
            out = np.kron(out, np.outer(vec, vec.conj()))
        return out / 3**n

    def probability_map(self):
        if self._a is None:
            d2 = 4**self.n_qubits
            a = np.empty((self.n_outcomes, d2), dtype=complex)
            for j in range(self.n_outcomes):
                a[j] = _vec(self.effect(j)).conj()
            self._a = a
        return self._a

    def matrix(self):
        if self._sp is None:
            a = self.probability_map()
            self._sp = a.conj().T @ a
        return self._sp

    def pinv_matrix(self, cutoff=1e-10):
        if self._pinv is None:
            w, v = np.linalg.eigh(self.matrix())
            keep = w > cutoff * w.max()
            inv = np.zeros_like(w)
            inv[keep] = 1.0 / w[keep]
            self._pinv = (v * inv) @ v.conj().T
        return self._pinv

    def lininv_vec(self, freqs):
        """S_p^+ applied to sum_j f_j |E_j>>, as a vec'd matrix."""
        a = self.probability_map()
        rhs = a.conj().T @ np.asarray(freqs, dtype=complex)
        return self.pinv_matrix() @ rhs
