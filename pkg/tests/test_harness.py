from collections import Counter

import numpy as np
import pytest

from deeplift.errors import BadMagic, DataError, Truncated
from deeplift.graph import Dense, Flatten, Graph
from deeplift.harness.digits import digit_images
from deeplift.harness.erasure import ErasureReport, erase, erasure_eval, log_odds, select_pixels
from deeplift.harness.genomics import (
    MotifMatch,
    Pwm,
    SimSequence,
    aggregate_match_importance,
    dataset_arrays,
    decode,
    false_negative_rate,
    generate_dataset,
    log_odds_track,
    read_dataset,
    scan_matches,
    write_dataset,
)
from deeplift.harness.idx import dump_idx, load_idx


# ------------------------------------------------------------------- IDX


def test_idx_three_pixels():
    data = bytes([0, 0, 8, 1, 0, 0, 0, 3, 0, 128, 255])
    assert load_idx(data).tolist() == [0.0, 128 / 255, 1.0]


def test_idx_bad_magic():
    with pytest.raises(BadMagic):
        load_idx(bytes([1, 0, 8, 1, 0, 0, 0, 1, 0]))


def test_idx_truncated():
    data = bytes([0, 0, 8, 1, 0, 0, 0, 10]) + bytes(9)
    with pytest.raises(Truncated):
        load_idx(data)


def test_idx_round_trip():
    arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    assert load_idx(dump_idx(arr), scale=False).tolist() == arr.tolist()
    f = np.linspace(-1, 1, 6, dtype=np.float32).reshape(2, 3)
    assert load_idx(dump_idx(f, "f32")).tolist() == f.astype(np.float64).tolist()


def test_digit_images_layout():
    tx, ty, sx, sy = digit_images(seed=0, n_test=50)
    assert tx.shape[1:] == (28, 28) and sx.shape == (50, 28, 28)
    assert tx.dtype == np.uint8 and set(np.unique(sy)) <= set(range(10))
    assert len(tx) + len(sx) == 1797
    # 2-pixel border stays empty
    assert not tx[:, :2].any() and not tx[:, :, -2:].any()


# ------------------------------------------------------------- sequences


def test_dataset_has_four_equal_groups():
    seqs = generate_dataset(400, seed=0)
    assert Counter(s.labels for s in seqs) == {"111": 100, "010": 100, "001": 100, "000": 100}


def test_background_frequencies():
    seqs = [s for s in generate_dataset(400, seed=1) if s.labels == "000"]
    counts = Counter("".join(s.sequence for s in seqs))
    total = sum(counts.values())
    for base, p in zip("ACGT", (0.3, 0.2, 0.2, 0.3)):
        assert abs(counts[base] / total - p) < 0.02


def test_dataset_is_deterministic():
    a, b = generate_dataset(40, seed=3), generate_dataset(40, seed=3)
    assert a == b
    assert generate_dataset(40, seed=4) != a


def test_dataset_size_must_split_into_quarters():
    with pytest.raises(DataError):
        generate_dataset(401, seed=0)


def test_one_hot_and_annotations():
    seqs = generate_dataset(80, seed=2)
    x, y = dataset_arrays(seqs)
    assert x.shape == (80, 200, 4) and y.shape == (80, 3)
    assert np.all(x.sum(axis=2) == 1)
    for s in seqs:
        assert decode(s.onehot) == s.sequence
        spans = sorted((m.start, m.start + len(m.instance)) for m in s.motifs)
        assert all(e <= s2 for (_, e), (s2, _) in zip(spans, spans[1:]))
        for m in s.motifs:
            assert s.sequence[m.start : m.start + len(m.instance)] == m.instance
        names = {m.name.upper() for m in s.motifs}
        assert ("GATA1" in names) == (s.labels[1] == "1")
        assert ("TAL1" in names) == (s.labels[2] == "1")


def test_dataset_tsv_round_trip(tmp_path):
    seqs = generate_dataset(20, seed=5)
    write_dataset(seqs, tmp_path / "s.tsv")
    assert read_dataset(tmp_path / "s.tsv") == seqs


# ------------------------------------------------------------------ PWMs


@pytest.mark.parametrize("name", ["gata1", "tal1"])
def test_shipped_pwm_rows_sum_to_one(name):
    pwm = Pwm.shipped(name)
    np.testing.assert_allclose(pwm.matrix.sum(axis=1), 1.0, atol=1e-12)


def test_tal1_mismatch_scores_lower():
    pwm = Pwm.shipped("tal1")
    assert pwm.score("CAGTTG") < pwm.score("CAGATG")


def test_bad_pwm_rejected():
    with pytest.raises(DataError):
        Pwm.parse("X\n1 2 3\n")
    with pytest.raises(DataError):
        Pwm("X", np.full((2, 4), 0.3))


def test_log_odds_track_matches_window_scores():
    pwm = Pwm.shipped("gata1")
    seq = generate_dataset(4, seed=6)[0].sequence
    track = log_odds_track(seq, pwm)
    for p in range(0, len(track), 17):
        assert abs(track[p] - pwm.score(seq[p : p + len(pwm)])) < 1e-9


def test_embedded_consensus_is_top_match():
    pwm = Pwm.shipped("tal1")
    bg = "T" * 200
    seq = SimSequence(0, bg[:50] + pwm.consensus + bg[50 + len(pwm):], "111")
    top = scan_matches(seq, pwm, top_k=3)
    assert top[0].start == 50
    assert all(a.log_odds >= b.log_odds for a, b in zip(top, top[1:]))
    spans = sorted((m.start, m.end) for m in top)
    assert all(e <= s for (_, e), (s, _) in zip(spans, spans[1:]))


# -------------------------------------------------------- match importance


def match(start=10, length=6, **kw):
    return MotifMatch(0, "111", "TAL1", start, length, 8.0, **kw)


def test_aggregate_importance():
    assert aggregate_match_importance(match(), np.zeros((200, 4))) == 0.0
    scores = np.zeros((200, 4))
    scores[10:16, 2] = 0.1
    assert abs(aggregate_match_importance(match(), scores) - 0.6) < 1e-12
    a, b = np.random.default_rng(0).normal(size=(2, 200, 4))
    assert abs(aggregate_match_importance(match(), a + b)
               - aggregate_match_importance(match(), a) - aggregate_match_importance(match(), b)) < 1e-12
    with pytest.raises(DataError):
        aggregate_match_importance(match(start=198), scores)


def test_false_negative_rate():
    pos = [match(importance={("m", 0): 0.5}) for _ in range(3)]
    neg = [match(importance={("m", 0): -0.5}) for _ in range(2)]
    assert false_negative_rate(pos, "m") == 0.0
    assert false_negative_rate(neg, "m") == 1.0
    assert false_negative_rate(pos + neg, "m") == 0.4
    weak = [MotifMatch(0, "111", "TAL1", 0, 6, 3.0, {("m", 0): -1.0})]
    with pytest.raises(DataError):
        false_negative_rate(weak, "m")
    with pytest.raises(DataError):
        false_negative_rate([], "m")


# ----------------------------------------------------------------- erasure


def test_select_pixels():
    assert select_pixels(-np.abs(np.arange(784.0))).size == 0
    diff = np.zeros(784)
    diff[:200] = np.arange(1, 201)
    picked = select_pixels(diff)
    assert len(picked) == 157
    assert picked.tolist() == list(range(199, 42, -1))


def test_select_pixels_ties_favour_lower_index():
    assert select_pixels(np.array([1.0, 2.0, 2.0, 0.0])).tolist() == [1, 2, 0]


def two_class_model():
    # logit0 = sum of first half, logit1 = sum of second half
    w = np.zeros((8, 2))
    w[:4, 0] = 1.0
    w[4:, 1] = 1.0
    return Graph((Flatten(), Dense(w, np.zeros(2))), (2, 4))


def test_erasure_lowers_log_odds():
    g = two_class_model()
    image = np.array([[1.0, 0.5, 0.0, 0.2], [0.1, 0.0, 0.3, 0.0]])
    rep = erasure_eval(g, image, 0, 1, "gradXinput")
    assert not rep.skipped
    assert set(rep.erased) == {0, 1, 3}
    assert abs(rep.log_odds_before - 1.3) < 1e-12
    assert abs(rep.log_odds_after - (-0.4)) < 1e-12
    assert abs(rep.log_odds_increase - 1.7) < 1e-12
    d = rep.to_dict()
    assert d["n_erased"] == 3 and d["erased"] == list(rep.erased)


def test_erasure_same_class_raises():
    with pytest.raises(DataError):
        erasure_eval(two_class_model(), np.ones((2, 4)), 1, 1, "gradient")


def test_erasure_skips_misclassified():
    image = np.array([[0.0] * 4, [1.0] * 4])
    rep = erasure_eval(two_class_model(), image, 0, 1, "gradXinput")
    assert rep.skipped and rep.n_erased == 0 and rep.note


def test_log_odds_and_erase_helpers():
    out = erase(np.ones((2, 2)), np.zeros((2, 2)), np.array([0, 3]))
    assert out.tolist() == [[0.0, 1.0], [1.0, 0.0]]
    assert log_odds(two_class_model(), np.ones((1, 2, 4)), 0, 1).tolist() == [0.0]
    assert ErasureReport(0, 1, 2, "m").log_odds_increase == 0.0
