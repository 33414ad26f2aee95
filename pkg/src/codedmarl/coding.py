"""Assignment matrices for coded distributed updates, and their decoders.

A learner ``j`` returns ``y_j = sum_i C[j, i] * theta_i`` where ``theta_i`` is the
updated parameter block of agent ``i``.  Any subset of responses whose rows of
``C`` have rank ``M`` is enough to recover every block.

Learner and agent ids are 0-based throughout.
"""

from __future__ import annotations

import enum
import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

RANK_RTOL = 1e-8
RANDOM_SPARSE_MAX_TRIES = 100
TOLERANCE_MAX_N = 20


class CodingError(ValueError):
    """Base class for coding failures."""


class InvalidDims(CodingError):
    pass


class DegenerateAlphas(CodingError):
    pass


class RankRetryExhausted(CodingError):
    pass


class InvalidLdpcParams(CodingError):
    pass


class NotDecodable(CodingError):
    pass


class DimensionMismatch(CodingError):
    pass


class PeelingStuck(CodingError):
    pass


class TooLarge(CodingError):
    pass


class MissingBlock(CodingError):
    pass


class Scheme(str, enum.Enum):
    UNCODED = "uncoded"
    REPLICATION = "replication"
    MDS = "mds"
    RANDOM_SPARSE = "random_sparse"
    LDPC = "ldpc"


BINARY_SCHEMES = frozenset({Scheme.UNCODED, Scheme.REPLICATION, Scheme.LDPC})


@dataclass(frozen=True, eq=False)
class AssignmentMatrix:
    """N x M assignment/code matrix. ``entries`` is read-only."""

    entries: np.ndarray
    scheme: Scheme
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        arr = np.array(self.entries, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise InvalidDims(f"entries must be 2-D, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)
        object.__setattr__(self, "scheme", Scheme(self.scheme))

    @property
    def n_learners(self) -> int:
        return self.entries.shape[0]

    @property
    def n_agents(self) -> int:
        return self.entries.shape[1]

    def row(self, j: int) -> np.ndarray:
        return self.entries[j]

    def assigned_agents(self, j: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.entries[j])]

    def load(self, j: int) -> int:
        """Number of agents learner ``j`` must update."""
        return int(np.count_nonzero(self.entries[j]))

    def active_learners(self) -> list[int]:
        return [j for j in range(self.n_learners) if self.load(j) > 0]

    def to_dict(self) -> dict[str, Any]:
        return {
            "scheme": self.scheme.value,
            "n": self.n_learners,
            "m": self.n_agents,
            "params": self.params,
            "entries": self.entries.reshape(-1).tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AssignmentMatrix":
        n, m = int(data["n"]), int(data["m"])
        entries = np.asarray(data["entries"], dtype=np.float64)
        if entries.size != n * m:
            raise InvalidDims(f"expected {n * m} entries, got {entries.size}")
        return cls(entries.reshape(n, m), Scheme(data["scheme"]), dict(data.get("params", {})))

    @classmethod
    def from_json(cls, text: str) -> "AssignmentMatrix":
        return cls.from_dict(json.loads(text))


def _check_dims(n: int, m: int) -> None:
    if n <= 0 or m <= 0:
        raise InvalidDims(f"n and m must be positive, got n={n}, m={m}")
    if m > n:
        raise InvalidDims(f"need m <= n, got n={n}, m={m}")


def _equilibrate(x: np.ndarray, sweeps: int = 3) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Alternately scale rows and columns to unit 2-norm.

    Returns ``(scaled, row_scale, col_scale)`` with
    ``scaled = diag(row_scale) @ x @ diag(col_scale)``.
    """
    scaled = np.array(x, dtype=np.float64, copy=True)
    rs = np.ones(scaled.shape[0])
    cs = np.ones(scaled.shape[1])
    for _ in range(sweeps):
        r = np.linalg.norm(scaled, axis=1)
        r[r == 0] = 1.0
        scaled /= r[:, None]
        rs /= r
        c = np.linalg.norm(scaled, axis=0)
        c[c == 0] = 1.0
        scaled /= c[None, :]
        cs /= c
    return scaled, rs, cs


def numerical_rank(x: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Rank of ``x`` after row/column equilibration, threshold ``rtol * sigma_max``."""
    if x.size == 0:
        return 0
    scaled, _, _ = _equilibrate(x)
    s = np.linalg.svd(scaled, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


def _require_full_rank(entries: np.ndarray, m: int, what: str) -> None:
    r = numerical_rank(entries)
    if r != m:
        raise CodingError(f"{what}: constructed matrix has rank {r}, expected {m}")


def build_uncoded(n: int, m: int) -> AssignmentMatrix:
    _check_dims(n, m)
    entries = np.zeros((n, m))
    entries[np.arange(m), np.arange(m)] = 1.0
    return AssignmentMatrix(entries, Scheme.UNCODED, {})


def build_replication(n: int, m: int) -> AssignmentMatrix:
    """Round-robin: learner ``j`` (0-based) updates agent ``j mod m``."""
    _check_dims(n, m)
    entries = np.zeros((n, m))
    entries[np.arange(n), np.arange(n) % m] = 1.0
    return AssignmentMatrix(entries, Scheme.REPLICATION, {})


def default_alphas(m: int) -> list[float]:
    if m == 1:
        return [1.0]
    return [float(a) for a in np.linspace(0.5, 1.5, m)]


def build_mds(n: int, m: int, alphas: Sequence[float] | None = None) -> AssignmentMatrix:
    """Vandermonde code ``C[j, i] = alphas[i] ** j``; any ``m`` rows are nonsingular."""
    _check_dims(n, m)
    if alphas is None:
        alphas = default_alphas(m)
    a = np.asarray(alphas, dtype=np.float64)
    if a.shape != (m,):
        raise DegenerateAlphas(f"need exactly {m} alphas, got {a.size}")
    if np.any(a == 0):
        raise DegenerateAlphas("alphas must be non-zero")
    if len(set(a.tolist())) != m:
        raise DegenerateAlphas(f"alphas must be pairwise distinct, got {a.tolist()}")
    entries = a[None, :] ** np.arange(n, dtype=np.float64)[:, None]
    logger.debug("mds(%d,%d) condition number %.3e", n, m, np.linalg.cond(entries))
    return AssignmentMatrix(entries, Scheme.MDS, {"alphas": a.tolist()})


def build_random_sparse(n: int, m: int, p_m: float, seed: int) -> AssignmentMatrix:
    """Each entry is N(0, 1) with probability ``p_m``, else 0.

    Draws are regenerated (stream keyed on ``(seed, attempt)``) until the matrix
    has rank ``m`` and no empty row.
    """
    _check_dims(n, m)
    if not 0 < p_m <= 1:
        raise CodingError(f"p_m must be in (0, 1], got {p_m}")
    for attempt in range(RANDOM_SPARSE_MAX_TRIES):
        rng = np.random.default_rng([seed, attempt])
        mask = rng.random((n, m)) < p_m
        values = rng.standard_normal((n, m))
        entries = np.where(mask, values, 0.0)
        if np.all(mask.any(axis=1)) and numerical_rank(entries) == m:
            return AssignmentMatrix(
                entries, Scheme.RANDOM_SPARSE, {"p_m": p_m, "seed": seed, "attempt": attempt}
            )
    raise RankRetryExhausted(
        f"no rank-{m} draw in {RANDOM_SPARSE_MAX_TRIES} attempts for n={n}, p_m={p_m}"
    )


def _is_prime(w: int) -> bool:
    if w < 2:
        return False
    return all(w % d for d in range(2, int(w**0.5) + 1))


def cyclic_permutation(w: int) -> np.ndarray:
    """w x w matrix with ones on the superdiagonal and in the bottom-left corner."""
    return np.roll(np.eye(w, dtype=np.uint8), 1, axis=1)


def ldpc_parity_check(n: int, y: int, w: int) -> np.ndarray:
    """Block parity-check matrix over GF(2); block (r, c) is ``A ** (r * c)``."""
    a = cyclic_permutation(w)
    blocks = [
        [np.linalg.matrix_power(a, (r * c) % w) for c in range(n // w)]
        for r in range(y // w)
    ]
    return np.block(blocks).astype(np.uint8)


def _gf2_systematic(h: np.ndarray) -> np.ndarray | None:
    """Row-reduce ``h`` (r x n) over GF(2) so its last r columns are the identity.

    Returns the left r x (n - r) block, or None if those columns are singular.
    """
    h = h.copy() % 2
    r, n = h.shape
    offset = n - r
    for k in range(r):
        col = offset + k
        pivots = np.flatnonzero(h[k:, col]) + k
        if pivots.size == 0:
            return None
        p = pivots[0]
        if p != k:
            h[[k, p]] = h[[p, k]]
        for row in np.flatnonzero(h[:, col]):
            if row != k:
                h[row] ^= h[k]
    return h[:, :offset]


def build_ldpc(n: int, m: int, w: int) -> AssignmentMatrix:
    """Systematic regular-LDPC assignment: identity on top, parity rows below."""
    _check_dims(n, m)
    y = n - m
    problems = []
    if not _is_prime(w):
        problems.append(f"w={w} is not prime")
    else:
        if n % w:
            problems.append(f"n={n} is not a multiple of w={w}")
        if y <= 0 or y % w:
            problems.append(f"n-m={y} must be a positive multiple of w={w}")
        elif y // w > w:
            problems.append(f"(n-m)/w={y // w} exceeds w={w} block rows")
    if problems:
        raise InvalidLdpcParams("; ".join(problems))
    h = ldpc_parity_check(n, y, w)
    parity = _gf2_systematic(h)
    if parity is None:
        raise InvalidLdpcParams(
            f"parity-check matrix for (n={n}, m={m}, w={w}) has no systematic form over GF(2)"
        )
    entries = np.vstack([np.eye(m), parity.astype(np.float64)])
    return AssignmentMatrix(entries, Scheme.LDPC, {"w": w})


def build(scheme: Scheme | str, n: int, m: int, **params: Any) -> AssignmentMatrix:
    """Dispatch on scheme name; ``params`` are the scheme-specific keywords."""
    scheme = Scheme(scheme)
    if scheme is Scheme.UNCODED:
        return build_uncoded(n, m)
    if scheme is Scheme.REPLICATION:
        return build_replication(n, m)
    if scheme is Scheme.MDS:
        return build_mds(n, m, params.get("alphas"))
    if scheme is Scheme.RANDOM_SPARSE:
        return build_random_sparse(n, m, params.get("p_m", 0.8), params.get("seed", 0))
    return build_ldpc(n, m, params["w"])


def _sorted_ids(c: AssignmentMatrix, indices: Iterable[int]) -> list[int]:
    ids = sorted(set(int(j) for j in indices))
    for j in ids:
        if not 0 <= j < c.n_learners:
            raise CodingError(f"learner id {j} outside [0, {c.n_learners})")
    return ids


def is_decodable(c: AssignmentMatrix, indices: Iterable[int]) -> bool:
    ids = _sorted_ids(c, indices)
    if len(ids) < c.n_agents:
        return False
    return numerical_rank(c.entries[ids]) == c.n_agents


def _stack_payloads(
    c: AssignmentMatrix, responses: Mapping[int, np.ndarray]
) -> tuple[list[int], np.ndarray]:
    ids = _sorted_ids(c, responses.keys())
    payloads = [np.asarray(responses[j], dtype=np.float64) for j in ids]
    dims = {p.shape for p in payloads}
    if len(dims) > 1:
        raise DimensionMismatch(f"payload shapes differ: {sorted(dims)}")
    if payloads and payloads[0].ndim != 1:
        raise DimensionMismatch("payloads must be 1-D vectors")
    return ids, np.stack(payloads) if payloads else np.zeros((0, 0))


def decode(c: AssignmentMatrix, responses: Mapping[int, np.ndarray]) -> np.ndarray:
    """Least-squares recovery of all ``M`` blocks; returns an ``(M, d)`` array."""
    ids, y = _stack_payloads(c, responses)
    sub = c.entries[ids]
    if len(ids) < c.n_agents or numerical_rank(sub) != c.n_agents:
        raise NotDecodable(f"responses from {ids} do not determine {c.n_agents} agents")
    scaled, rs, cs = _equilibrate(sub)
    z, *_ = np.linalg.lstsq(scaled, y * rs[:, None], rcond=None)
    return z * cs[:, None]


def peel_decode(c: AssignmentMatrix, responses: Mapping[int, np.ndarray]) -> np.ndarray:
    """Iterative erasure decoding for 0/1 matrices.

    Repeatedly takes a response with exactly one unresolved agent, reads that
    agent off, and subtracts it from every other response that contains it.
    """
    if not np.all((c.entries == 0) | (c.entries == 1)):
        raise CodingError(f"peeling needs a 0/1 matrix, scheme is {c.scheme.value}")
    ids, y = _stack_payloads(c, responses)
    m = c.n_agents
    residual = {j: y[k].copy() for k, j in enumerate(ids)}
    unknown = {j: set(c.assigned_agents(j)) for j in ids}
    rows_of: dict[int, list[int]] = {i: [] for i in range(m)}
    for j in ids:
        for i in unknown[j]:
            rows_of[i].append(j)

    solved: dict[int, np.ndarray] = {}
    ready = [j for j in ids if len(unknown[j]) == 1]
    while ready and len(solved) < m:
        j = ready.pop(0)
        if len(unknown[j]) != 1:
            continue
        (i,) = unknown[j]
        value = residual[j]
        solved[i] = value
        for other in rows_of[i]:
            if i in unknown[other]:
                unknown[other].discard(i)
                if other != j:
                    residual[other] = residual[other] - value
                    if len(unknown[other]) == 1:
                        ready.append(other)
    if len(solved) < m:
        missing = sorted(set(range(m)) - solved.keys())
        raise PeelingStuck(f"no degree-1 response left; unresolved agents {missing}")
    return np.stack([solved[i] for i in range(m)])


def recover(c: AssignmentMatrix, responses: Mapping[int, np.ndarray]) -> np.ndarray:
    """Peel when the code is binary, otherwise (or if peeling stalls) least squares."""
    if c.scheme in BINARY_SCHEMES:
        try:
            return peel_decode(c, responses)
        except PeelingStuck:
            pass
    return decode(c, responses)


def worst_case_tolerance(c: AssignmentMatrix) -> int:
    """Largest ``k`` such that every set of ``N - k`` responses is decodable."""
    n, m = c.n_learners, c.n_agents
    if n > TOLERANCE_MAX_N:
        raise TooLarge(f"brute force limited to N <= {TOLERANCE_MAX_N}, got {n}")
    best = -1
    for k in range(0, n - m + 1):
        if all(is_decodable(c, s) for s in itertools.combinations(range(n), n - k)):
            best = k
        else:
            break
    return max(best, 0)


def encode_response(
    c: AssignmentMatrix, j: int, blocks: Mapping[int, np.ndarray] | Sequence[np.ndarray] | np.ndarray
) -> np.ndarray:
    """``sum_i C[j, i] * blocks[i]``, accumulated in ascending agent order."""
    acc = None
    for i in c.assigned_agents(j):
        try:
            block = blocks[i]
        except (KeyError, IndexError):
            block = None
        if block is None:
            raise MissingBlock(f"learner {j} needs the block of agent {i}")
        term = c.entries[j, i] * np.asarray(block, dtype=np.float64)
        acc = term if acc is None else acc + term
    if acc is None:
        d = _block_dim(blocks)
        return np.zeros(d)
    return acc


def _block_dim(blocks: Any) -> int:
    if isinstance(blocks, np.ndarray):
        return blocks.shape[-1]
    values = blocks.values() if isinstance(blocks, Mapping) else blocks
    for b in values:
        if b is not None:
            return len(b)
    return 0


def pad_blocks(blocks: Sequence[np.ndarray]) -> tuple[np.ndarray, list[int]]:
    """Zero-pad 1-D blocks to a common length; returns ``(stacked, original_lengths)``."""
    lengths = [len(b) for b in blocks]
    d = max(lengths)
    out = np.zeros((len(blocks), d))
    for i, b in enumerate(blocks):
        out[i, : lengths[i]] = b
    return out, lengths


def unpad_blocks(stacked: np.ndarray, lengths: Sequence[int]) -> list[np.ndarray]:
    return [np.array(stacked[i, :n]) for i, n in enumerate(lengths)]
