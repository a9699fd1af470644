import numpy as np
import pytest

from mlhash import (
    PackedCodes,
    RelevanceJudge,
    average_precision,
    evaluate_retrieval,
    hamming_distance,
    hamming_to_all,
    load_codes,
    mean_average_precision,
    pack_codes,
    pr_curve,
    precision_at_k,
    precision_at_radius,
    rank_database,
    save_codes,
    unpack_codes,
)
from mlhash.errors import DimensionError, FormatError

import numtools as nt


def random_instance(seed, n_db=200, n_q=10, m=32, n_classes=5, multi=False):
    rng = np.random.default_rng(seed)
    db_bits = rng.integers(0, 2, size=(n_db, m)).astype(np.uint8)
    q_bits = rng.integers(0, 2, size=(n_q, m)).astype(np.uint8)
    if multi:
        db_labels = rng.integers(0, 2, size=(n_db, n_classes)).astype(np.uint8)
        q_labels = rng.integers(0, 2, size=(n_q, n_classes)).astype(np.uint8)
    else:
        db_labels = rng.integers(0, n_classes, size=n_db)
        q_labels = rng.integers(0, n_classes, size=n_q)
    return q_bits, db_bits, q_labels, db_labels


def test_pack_codes_lsb_first_convention():
    packed = pack_codes(np.array([[1, 0, 1, 1]]))
    assert packed.words[0, 0] == 0b1101
    assert packed.words_per_code == 1


def test_pack_codes_all_zero():
    packed = pack_codes(np.zeros((3, 70), dtype=np.uint8))
    assert not packed.words.any()
    assert packed.words_per_code == 2


def test_pack_unpack_roundtrip_m67():
    rng = np.random.default_rng(0)
    bits = rng.integers(0, 2, size=(1000, 67)).astype(np.uint8)
    packed = pack_codes(bits)
    assert packed.words_per_code == 2
    assert np.array_equal(unpack_codes(packed), bits)


def test_pack_codes_rejects_bad_input():
    with pytest.raises(DimensionError):
        pack_codes([[1, 0], [1]])  # ragged
    with pytest.raises(DimensionError):
        pack_codes(np.array([[0, 2]]))


def test_hamming_distance_hand_cases():
    a = pack_codes(np.array([[0, 1, 0, 1]]))  # reads 0b1010 written MSB-first
    b = pack_codes(np.array([[0, 1, 1, 0]]))
    assert hamming_distance(a[0], a[0]) == 0
    assert hamming_distance(a[0], b[0]) == 2
    with pytest.raises(DimensionError):
        hamming_distance(np.zeros(1, dtype=np.uint64), np.zeros(2, dtype=np.uint64))


def test_hamming_distance_matches_naive_bit_loop():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 2, size=(2000, 128)).astype(np.uint8)
    b = rng.integers(0, 2, size=(2000, 128)).astype(np.uint8)
    pa, pb = pack_codes(a), pack_codes(b)
    for i in range(0, 2000, 67):
        assert hamming_distance(pa[i], pb[i]) == nt.naive_hamming(a[i], b[i])
    # vectorized path against per-pair popcounts
    dist = np.bitwise_count(pa.words ^ pb.words).sum(axis=1)
    naive = (a != b).sum(axis=1)
    assert np.array_equal(dist, naive)


def test_hamming_is_a_metric_on_samples():
    rng = np.random.default_rng(2)
    bits = rng.integers(0, 2, size=(30, 48)).astype(np.uint8)
    packed = pack_codes(bits)
    for _ in range(200):
        i, j, k = rng.integers(0, 30, size=3)
        dij = hamming_distance(packed[i], packed[j])
        dji = hamming_distance(packed[j], packed[i])
        dik = hamming_distance(packed[i], packed[k])
        dkj = hamming_distance(packed[k], packed[j])
        assert dij == dji
        assert (dij == 0) == np.array_equal(bits[i], bits[j])
        assert dij <= dik + dkj


def test_rank_database_self_first_and_tie_rule():
    db = pack_codes(np.array([[1, 1, 0, 0], [0, 0, 1, 1], [1, 0, 0, 0], [1, 1, 0, 0]]))
    query = pack_codes(np.array([[1, 1, 0, 0]]))
    order = rank_database(query[0], db)
    assert order[0] == 0  # exact match, lowest index first on the tie with 3
    assert order[1] == 3
    # two equidistant entries keep ascending index order
    assert hamming_to_all(query[0], db)[order[0]] == 0


def test_rank_database_matches_sort_oracle():
    rng = np.random.default_rng(3)
    bits = rng.integers(0, 2, size=(500, 24)).astype(np.uint8)
    db = pack_codes(bits)
    query_bits = rng.integers(0, 2, size=24).astype(np.uint8)
    query = pack_codes(query_bits[None, :])
    expected = nt.naive_rank(query_bits, bits)
    assert np.array_equal(rank_database(query[0], db), expected)


def test_average_precision_hand_values():
    assert average_precision([1, 1, 0], total_relevant=2, k=3) == 1.0
    assert abs(average_precision([1, 0, 1], 2, 3) - (1.0 + 2.0 / 3.0) / 2.0) < 1e-15
    assert average_precision([0, 0, 0], 5, 3) == 0.0
    assert average_precision([1, 1], 0, 2) == 0.0


def test_mean_ap_self_retrieval_is_one():
    rng = np.random.default_rng(4)
    bits = rng.integers(0, 2, size=(20, 16)).astype(np.uint8)
    labels = np.arange(20)  # each query's only relevant item is itself
    packed = pack_codes(bits)
    assert mean_average_precision(packed, packed, labels, labels) == 1.0


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("multi", [False, True])
def test_mean_ap_matches_reference_exactly(seed, multi):
    q_bits, db_bits, q_labels, db_labels = random_instance(seed, multi=multi)
    got = mean_average_precision(
        pack_codes(q_bits), pack_codes(db_bits), q_labels, db_labels, k=50
    )
    assert got == nt.naive_mean_ap(q_bits, db_bits, q_labels, db_labels, k=50)


def test_mean_ap_k_all_equals_full_map():
    q_bits, db_bits, q_labels, db_labels = random_instance(9)
    packed_q, packed_db = pack_codes(q_bits), pack_codes(db_bits)
    full = mean_average_precision(packed_q, packed_db, q_labels, db_labels, k=None)
    explicit = mean_average_precision(
        packed_q, packed_db, q_labels, db_labels, k=db_bits.shape[0]
    )
    assert full == explicit
    assert full == nt.naive_mean_ap(q_bits, db_bits, q_labels, db_labels, k=None)


def test_mean_ap_empty_query_set():
    db = pack_codes(np.zeros((3, 8), dtype=np.uint8))
    empty = pack_codes(np.zeros((0, 8), dtype=np.uint8))
    with pytest.raises(ValueError):
        mean_average_precision(empty, db, np.zeros(0, dtype=int), np.zeros(3, dtype=int))


def test_mean_ap_invariant_under_permutation_without_ties():
    # db code i has the first i bits set: all distances to the zero query differ
    n, m = 40, 64
    bits = np.zeros((n, m), dtype=np.uint8)
    for i in range(n):
        bits[i, :i] = 1
    labels = np.arange(n) % 3
    query = pack_codes(np.zeros((1, m), dtype=np.uint8))
    base = mean_average_precision(query, pack_codes(bits), np.array([0]), labels)
    perm = np.random.default_rng(5).permutation(n)
    shuffled = mean_average_precision(
        query, pack_codes(bits[perm]), np.array([0]), labels[perm]
    )
    assert base == shuffled


def test_precision_at_k_cases_and_reference():
    q_bits, db_bits, q_labels, db_labels = random_instance(6)
    got = precision_at_k(
        pack_codes(q_bits), pack_codes(db_bits), q_labels, db_labels, ks=[1, 5, 20]
    )
    assert got == nt.naive_precision_at_k(q_bits, db_bits, q_labels, db_labels, [1, 5, 20])
    # identical database: top-1 is the query itself
    packed = pack_codes(q_bits)
    top1 = precision_at_k(packed, packed, np.arange(len(q_bits)), np.arange(len(q_bits)), [1])
    assert top1 == [(1, 1.0)]
    # no relevant items anywhere
    none = precision_at_k(
        pack_codes(q_bits), pack_codes(db_bits), np.full(len(q_bits), 7), db_labels, [5]
    )
    assert none == [(5, 0.0)]


def test_precision_at_radius_cases():
    bits = np.array([[0, 0, 0, 0], [1, 1, 1, 1], [1, 1, 1, 0]], dtype=np.uint8)
    labels = np.array([0, 1, 1])
    packed = pack_codes(bits)
    query = pack_codes(bits[:1])
    # ball of radius 2 around the first code holds only itself
    assert precision_at_radius(query, packed, labels[:1], labels, radius=2) == 1.0
    # radius >= m retrieves the whole database
    assert precision_at_radius(query, packed, labels[:1], labels, radius=4) == 1.0 / 3.0


def test_precision_at_radius_empty_retrieval_policy():
    db = pack_codes(np.ones((2, 8), dtype=np.uint8))
    query = pack_codes(np.zeros((1, 8), dtype=np.uint8))
    labels = np.array([0, 0])
    qlab = np.array([0])
    assert precision_at_radius(query, db, qlab, labels, radius=2) == 0.0
    assert precision_at_radius(query, db, qlab, labels, radius=2, skip_empty=True) == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_precision_at_radius_matches_reference(seed):
    q_bits, db_bits, q_labels, db_labels = random_instance(seed, m=12)
    for radius in (0, 2, 5):
        got = precision_at_radius(
            pack_codes(q_bits), pack_codes(db_bits), q_labels, db_labels, radius
        )
        ref = nt.naive_precision_at_radius(q_bits, db_bits, q_labels, db_labels, radius)
        assert got == ref


def test_pr_curve_perfect_separation():
    # relevant items at distance <= 1, irrelevant ones far away
    m = 8
    db_bits = np.array(
        [[0] * m, [1] + [0] * (m - 1), [1] * m, [1] * (m - 1) + [0]], dtype=np.uint8
    )
    db_labels = np.array([0, 0, 1, 1])
    query = pack_codes(np.zeros((1, m), dtype=np.uint8))
    points = pr_curve(query, pack_codes(db_bits), np.array([0]), db_labels)
    for recall, precision in points:
        if recall < 1.0 or precision == 1.0:
            assert precision == 1.0
    assert any(r == 1.0 and p == 1.0 for r, p in points)
    recalls = [r for r, _ in points]
    assert recalls == sorted(recalls)


@pytest.mark.parametrize("seed", range(3))
def test_pr_curve_matches_reference(seed):
    q_bits, db_bits, q_labels, db_labels = random_instance(seed, m=10)
    got = pr_curve(pack_codes(q_bits), pack_codes(db_bits), q_labels, db_labels)
    assert got == nt.naive_pr_curve(q_bits, db_bits, q_labels, db_labels, 10)


def test_pr_curve_excludes_queries_without_relevant_items():
    rng = np.random.default_rng(8)
    db_bits = rng.integers(0, 2, size=(30, 6)).astype(np.uint8)
    db_labels = rng.integers(0, 2, size=30)
    q_bits = rng.integers(0, 2, size=(3, 6)).astype(np.uint8)
    q_labels = np.array([0, 1, 9])  # label 9 never occurs in the database
    got = pr_curve(pack_codes(q_bits), pack_codes(db_bits), q_labels, db_labels)
    kept = pr_curve(
        pack_codes(q_bits[:2]), pack_codes(db_bits), q_labels[:2], db_labels
    )
    assert got == kept


def test_relevance_judge_is_symmetric():
    judge = RelevanceJudge("multi")
    a = np.array([1, 0, 1])
    b = np.array([0, 0, 1])
    assert judge.relevant(a, b[None, :])[0] == judge.relevant(b, a[None, :])[0]
    with pytest.raises(DimensionError):
        RelevanceJudge("sometimes")


def test_evaluate_retrieval_bundles_everything():
    q_bits, db_bits, q_labels, db_labels = random_instance(10, n_db=60, n_q=4, m=16)
    report = evaluate_retrieval(
        pack_codes(q_bits), pack_codes(db_bits), q_labels, db_labels, k=20, radius=2
    )
    assert 0.0 <= report.map_at_k <= 1.0
    assert all(0.0 <= p <= 1.0 for _, p in report.precision_at_k)
    assert 0.0 <= report.p_at_h2 <= 1.0
    recalls = [r for r, _ in report.pr_curve]
    assert recalls == sorted(recalls)


def test_scan_throughput_scales_roughly_linearly():
    # smoke test, not a benchmark: 8x the rows must not cost 40x the time
    import time

    rng = np.random.default_rng(12)
    small = pack_codes(rng.integers(0, 2, size=(2_000, 64)).astype(np.uint8))
    big = pack_codes(rng.integers(0, 2, size=(16_000, 64)).astype(np.uint8))
    query = small[0]

    def scan_time(db, reps):
        start = time.perf_counter()
        for _ in range(reps):
            hamming_to_all(query, db)
        return (time.perf_counter() - start) / reps

    scan_time(big, 3)  # warm up
    t_small = scan_time(small, 20)
    t_big = scan_time(big, 20)
    assert t_big / t_small < 40.0


def test_codes_file_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    bits = rng.integers(0, 2, size=(17, 67)).astype(np.uint8)
    packed = pack_codes(bits)
    path = tmp_path / "codes.bin"
    save_codes(packed, path)
    loaded = load_codes(path)
    assert loaded.n == 17 and loaded.code_length == 67
    assert np.array_equal(unpack_codes(loaded), bits)


def test_codes_file_errors(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(FormatError) as err:
        load_codes(path)
    assert err.value.offset == 0

    good = tmp_path / "good.bin"
    save_codes(pack_codes(np.ones((4, 8), dtype=np.uint8)), good)
    truncated = tmp_path / "trunc.bin"
    truncated.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(FormatError):
        load_codes(truncated)
