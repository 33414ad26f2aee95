import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codedmarl import coding as cd
from oracles import brute_tolerance, exact_det, exact_rank


def test_uncoded_identity():
    assert np.array_equal(cd.build_uncoded(3, 3).entries, np.eye(3))


def test_uncoded_idle_rows():
    c = cd.build_uncoded(15, 8)
    assert np.array_equal(c.entries[:8], np.eye(8))
    assert not c.entries[8:].any()
    assert c.active_learners() == list(range(8))


@pytest.mark.parametrize("n,m", [(2, 3), (0, 1), (3, 0), (-1, -1)])
def test_invalid_dims(n, m):
    with pytest.raises(cd.InvalidDims):
        cd.build_uncoded(n, m)
    with pytest.raises(cd.InvalidDims):
        cd.build_replication(n, m)


def test_replication_round_robin():
    c = cd.build_replication(4, 2)
    assert [c.assigned_agents(j) for j in range(4)] == [[0], [1], [0], [1]]
    assert c.entries.sum(axis=0).tolist() == [2, 2]


def test_replication_15_8_column_sums():
    # 1-indexed rule: learner j -> agent (j mod 8), with 0 mapped to 8
    expected = np.zeros((15, 8))
    for j in range(1, 16):
        i = j % 8 + 8 * (j % 8 == 0)
        expected[j - 1, i - 1] = 1
    c = cd.build_replication(15, 8)
    assert np.array_equal(c.entries, expected)
    assert c.entries.sum(axis=0).tolist() == [2] * 7 + [1]


def test_replication_square_is_uncoded():
    assert np.array_equal(cd.build_replication(5, 5).entries, cd.build_uncoded(5, 5).entries)


def test_mds_values():
    c = cd.build_mds(3, 2, [1, 2])
    assert c.entries.tolist() == [[1, 1], [1, 2], [1, 4]]


@pytest.mark.parametrize("alphas", [[1, 1], [0, 2], [2]])
def test_mds_degenerate(alphas):
    with pytest.raises(cd.DegenerateAlphas):
        cd.build_mds(3, 2, alphas)


@pytest.mark.parametrize("n,m", [(n, m) for n in range(2, 9) for m in range(1, n)])
def test_mds_every_square_submatrix_nonsingular(n, m):
    c = cd.build_mds(n, m)
    for rows in itertools.combinations(range(n), m):
        assert exact_det(c.entries[list(rows)]) != 0
        assert cd.is_decodable(c, rows)


def test_mds_integer_alphas_exact():
    c = cd.build_mds(6, 4, [1, 2, 3, 5])
    for rows in itertools.combinations(range(6), 4):
        assert exact_det(c.entries[list(rows)]) != 0


def test_random_sparse_density_and_rank():
    c = cd.build_random_sparse(15, 8, 0.8, seed=11)
    assert cd.numerical_rank(c.entries) == 8
    assert exact_rank(c.entries) == 8
    assert np.all((c.entries != 0).any(axis=1))
    assert c.params["p_m"] == 0.8 and c.params["seed"] == 11


def test_random_sparse_mean_density():
    counts = [np.count_nonzero(cd.build_random_sparse(15, 8, 0.8, seed=s).entries) for s in range(200)]
    # E[nnz] = N*M*p_m = 96; rank/empty-row rejection shifts it only slightly
    assert abs(np.mean(counts) - 96) < 2


def test_random_sparse_dense_and_deterministic():
    a = cd.build_random_sparse(6, 3, 1.0, seed=3)
    b = cd.build_random_sparse(6, 3, 1.0, seed=3)
    assert np.all(a.entries != 0)
    assert np.array_equal(a.entries, b.entries)
    assert not np.array_equal(a.entries, cd.build_random_sparse(6, 3, 1.0, seed=4).entries)


def test_random_sparse_retry_exhausted():
    with pytest.raises(cd.RankRetryExhausted):
        cd.build_random_sparse(3, 3, 0.01, seed=0)


def test_ldpc_6_3_3():
    c = cd.build_ldpc(6, 3, 3)
    # H = [I3 I3] is already systematic, so the parity block is I3
    assert np.array_equal(c.entries, np.vstack([np.eye(3), np.eye(3)]))
    assert exact_rank(c.entries) == 3


def test_ldpc_systematic_and_binary():
    for n, m, w in [(6, 3, 3), (9, 6, 3), (10, 5, 5), (15, 10, 5), (15, 12, 3)]:
        c = cd.build_ldpc(n, m, w)
        assert c.entries.shape == (n, m)
        assert np.array_equal(c.entries[:m], np.eye(m))
        assert set(np.unique(c.entries)) <= {0.0, 1.0}
        assert exact_rank(c.entries) == m


def test_ldpc_parity_rows_satisfy_h():
    n, m, w = 9, 6, 3
    c = cd.build_ldpc(n, m, w)
    h = cd.ldpc_parity_check(n, n - m, w)
    # codeword of agent-indicator x is [x, P^T x]; H must annihilate it mod 2
    for x in itertools.product([0, 1], repeat=m):
        word = (c.entries @ np.array(x)) % 2
        assert not ((h @ word) % 2).any()


def test_cyclic_permutation():
    a = cd.cyclic_permutation(3)
    assert a.tolist() == [[0, 1, 0], [0, 0, 1], [1, 0, 0]]


@pytest.mark.parametrize(
    "n,m,w,needle",
    [(6, 3, 4, "not prime"), (7, 4, 3, "multiple"), (6, 4, 3, "multiple of w"), (9, 3, 3, "systematic")],
)
def test_ldpc_invalid(n, m, w, needle):
    with pytest.raises(cd.InvalidLdpcParams, match=needle):
        cd.build_ldpc(n, m, w)


def test_is_decodable_examples():
    mds = cd.build_mds(3, 2, [1, 2])
    assert cd.is_decodable(mds, {1, 2})
    assert not cd.is_decodable(cd.build_uncoded(3, 3), {0, 1})
    assert not cd.is_decodable(mds, set())
    assert not cd.is_decodable(mds, {2})


def test_decode_uncoded_identity():
    c = cd.build_uncoded(3, 3)
    blocks = np.arange(12.0).reshape(3, 4)
    out = cd.decode(c, {j: blocks[j] for j in range(3)})
    np.testing.assert_array_equal(out, blocks)


def test_decode_mds_hand_solved():
    c = cd.build_mds(3, 2, [1, 2])
    out = cd.decode(c, {1: np.array([1.0, 2.0]), 2: np.array([1.0, 4.0])})
    np.testing.assert_allclose(out, [[1, 0], [0, 1]], atol=1e-12)


def test_decode_errors():
    c = cd.build_mds(3, 2, [1, 2])
    with pytest.raises(cd.NotDecodable):
        cd.decode(c, {0: np.ones(2)})
    with pytest.raises(cd.DimensionMismatch):
        cd.decode(c, {0: np.ones(2), 1: np.ones(3)})


def test_encode_response_examples():
    c = cd.AssignmentMatrix(np.array([[1.0, 0.0], [1.0, 1.0]]), cd.Scheme.REPLICATION)
    blocks = {0: np.array([2.0, 2.0]), 1: np.array([5.0, 5.0])}
    assert cd.encode_response(c, 0, blocks).tolist() == [2, 2]
    assert cd.encode_response(c, 1, blocks).tolist() == [7, 7]
    mds = cd.build_mds(3, 2, [1, 2])
    np.testing.assert_array_equal(cd.encode_response(mds, 2, blocks), 1 * blocks[0] + 4 * blocks[1])


def test_encode_response_missing_block():
    c = cd.build_mds(3, 2, [1, 2])
    with pytest.raises(cd.MissingBlock):
        cd.encode_response(c, 1, {0: np.ones(2)})


def test_encode_idle_row_is_zero():
    c = cd.build_uncoded(4, 2)
    assert cd.encode_response(c, 3, np.ones((2, 3))).tolist() == [0, 0, 0]


def _all_schemes(n, m):
    out = [cd.build_uncoded(n, m), cd.build_replication(n, m), cd.build_mds(n, m),
           cd.build_random_sparse(n, m, 0.8, seed=1)]
    return out


@pytest.mark.parametrize("n,m", [(4, 2), (6, 3), (15, 8)])
def test_construction_rank(n, m):
    for c in _all_schemes(n, m):
        assert cd.numerical_rank(c.entries) == m, c.scheme
        if c.scheme is not cd.Scheme.UNCODED:
            assert np.all((c.entries != 0).any(axis=1)), c.scheme


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from([(4, 2), (5, 3), (6, 3), (8, 5)]),
    st.sampled_from(list(cd.Scheme)),
    st.integers(0, 2**32 - 1),
)
def test_round_trip_property(dims, scheme, seed):
    n, m = dims
    if scheme is cd.Scheme.LDPC:
        c = cd.build_ldpc(6, 3, 3)
        n, m = 6, 3
    else:
        c = cd.build(scheme, n, m, seed=seed % 1000, p_m=0.8)
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((m, 5))
    size = int(rng.integers(m, n + 1))
    subset = sorted(rng.choice(n, size=size, replace=False).tolist())
    if not cd.is_decodable(c, subset):
        return
    responses = {j: cd.encode_response(c, j, theta) for j in subset}
    out = cd.decode(c, responses)
    assert np.linalg.norm(out - theta) <= 1e-6 * np.linalg.norm(theta)


@settings(max_examples=80, deadline=None)
@given(st.sampled_from(list(cd.Scheme)), st.data())
def test_monotonicity(scheme, data):
    c = cd.build_ldpc(6, 3, 3) if scheme is cd.Scheme.LDPC else cd.build(scheme, 6, 3, seed=5)
    small = data.draw(st.sets(st.integers(0, 5)))
    extra = data.draw(st.sets(st.integers(0, 5)))
    if cd.is_decodable(c, small):
        assert cd.is_decodable(c, small | extra)


def test_is_decodable_matches_exact_rank():
    for c in [*_all_schemes(6, 3), cd.build_ldpc(6, 3, 3), cd.build_ldpc(9, 6, 3)]:
        n, m = c.entries.shape
        for size in range(n + 1):
            for s in itertools.combinations(range(n), size):
                assert cd.is_decodable(c, s) == (exact_rank(c.entries[list(s)]) == m)


def test_worst_case_tolerance_examples():
    assert cd.worst_case_tolerance(cd.build_uncoded(6, 3)) == 0
    assert cd.worst_case_tolerance(cd.build_replication(15, 8)) == 0
    assert cd.worst_case_tolerance(cd.build_replication(6, 3)) == 1


@pytest.mark.parametrize("n,m", [(n, m) for n in range(3, 9) for m in range(2, n)])
def test_worst_case_tolerance_mds_bruteforce(n, m):
    c = cd.build_mds(n, m)
    assert cd.worst_case_tolerance(c) == n - m == brute_tolerance(c.entries)
    assert cd.worst_case_tolerance(cd.build_uncoded(n, m)) == 0


def test_worst_case_tolerance_ldpc_matches_oracle():
    for c in [cd.build_ldpc(6, 3, 3), cd.build_ldpc(9, 6, 3)]:
        assert cd.worst_case_tolerance(c) == brute_tolerance(c.entries)


def test_worst_case_tolerance_too_large():
    with pytest.raises(cd.TooLarge):
        cd.worst_case_tolerance(cd.build_uncoded(21, 2))


def _decodable_by_peeling_oracle(entries, rows):
    """Reference peeling over row supports only (no payloads)."""
    m = entries.shape[1]
    supports = [set(np.flatnonzero(entries[j])) for j in rows]
    known = set()
    changed = True
    while changed:
        changed = False
        for s in supports:
            left = s - known
            if len(left) == 1:
                known |= left
                changed = True
    return len(known) == m


def test_peel_uncoded_read_off():
    c = cd.build_uncoded(4, 4)
    theta = np.random.default_rng(0).standard_normal((4, 3))
    out = cd.peel_decode(c, {j: theta[j] for j in range(4)})
    np.testing.assert_array_equal(out, theta)


def test_peel_ldpc_single_erasures_match_decode():
    c = cd.build_ldpc(6, 3, 3)
    theta = np.random.default_rng(1).standard_normal((3, 7))
    parity_used = False
    for dropped in range(6):
        rows = [j for j in range(6) if j != dropped]
        responses = {j: cd.encode_response(c, j, theta) for j in rows}
        peeled = cd.peel_decode(c, responses)
        ls = cd.decode(c, responses)
        assert np.max(np.abs(peeled - ls)) <= 1e-9 * np.max(np.abs(ls))
        parity_used |= dropped < 3
    assert parity_used


def test_peel_ldpc_9_6_3_patterns_agree_with_oracle():
    c = cd.build_ldpc(9, 6, 3)
    theta = np.random.default_rng(2).standard_normal((6, 4))
    stuck = 0
    for size in range(6, 10):
        for rows in itertools.combinations(range(9), size):
            responses = {j: cd.encode_response(c, j, theta) for j in rows}
            if _decodable_by_peeling_oracle(c.entries, rows):
                peeled = cd.peel_decode(c, responses)
                np.testing.assert_allclose(peeled, cd.decode(c, responses), rtol=1e-9, atol=1e-12)
            else:
                stuck += 1
                with pytest.raises(cd.PeelingStuck):
                    cd.peel_decode(c, responses)
    assert stuck > 0


def test_peel_stuck_two_unknowns_sharing_rows():
    # found by brute force: drop systematic rows of agents 0 and 3, which
    # share parity row 6 and no other surviving row
    c = cd.build_ldpc(9, 6, 3)
    rows = [1, 2, 4, 5, 6, 7, 8]
    theta = np.ones((6, 2))
    with pytest.raises(cd.PeelingStuck, match=r"\[0, 3\]"):
        cd.peel_decode(c, {j: cd.encode_response(c, j, theta) for j in rows})


def test_recover_falls_back_when_peeling_stalls():
    # a 3-cycle of weight-2 rows: full rank over the reals, no degree-1 row
    c = cd.AssignmentMatrix(np.array([[1.0, 1, 0], [0, 1, 1], [1, 0, 1]]), cd.Scheme.LDPC)
    theta = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    responses = {j: cd.encode_response(c, j, theta) for j in range(3)}
    with pytest.raises(cd.PeelingStuck):
        cd.peel_decode(c, responses)
    np.testing.assert_allclose(cd.recover(c, responses), theta, atol=1e-12)


def test_peel_rejects_non_binary():
    c = cd.build_mds(3, 2)
    with pytest.raises(cd.CodingError):
        cd.peel_decode(c, {0: np.ones(1), 1: np.ones(1)})


def test_json_round_trip():
    c = cd.build_random_sparse(6, 3, 0.8, seed=9)
    data = json.loads(c.to_json())
    assert set(data) == {"scheme", "n", "m", "params", "entries"}
    assert data["scheme"] == "random_sparse" and data["n"] == 6 and data["m"] == 3
    back = cd.AssignmentMatrix.from_json(c.to_json())
    assert np.array_equal(back.entries, c.entries)
    assert back.scheme is c.scheme and back.params == c.params


def test_entries_read_only():
    c = cd.build_uncoded(2, 2)
    with pytest.raises(ValueError):
        c.entries[0, 0] = 5


def test_pad_unpad():
    blocks = [np.ones(3), np.arange(5.0)]
    stacked, lengths = cd.pad_blocks(blocks)
    assert stacked.shape == (2, 5) and lengths == [3, 5]
    assert stacked[0, 3:].tolist() == [0, 0]
    back = cd.unpad_blocks(stacked, lengths)
    assert all(np.array_equal(a, b) for a, b in zip(back, blocks))


def test_heterogeneous_blocks_round_trip():
    blocks = [np.arange(3.0), np.arange(7.0) + 1, np.arange(5.0) - 2]
    stacked, lengths = cd.pad_blocks(blocks)
    c = cd.build_mds(5, 3)
    responses = {j: cd.encode_response(c, j, stacked) for j in (0, 2, 4)}
    back = cd.unpad_blocks(cd.decode(c, responses), lengths)
    for a, b in zip(back, blocks):
        np.testing.assert_allclose(a, b, atol=1e-10)
