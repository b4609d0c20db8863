import numpy as np
import pytest

from oracles import comp_measure_naive
from ldcrf.complexity import comp_measure, label_instances, pair_distance, resample
from ldcrf.data import SynthSpec, make_binary, GroupingSpec, synth
from ldcrf.model import ContractError, Dataset, SequenceSample


def one_d(*groups):
    """Dataset with one single-label sample per 1-D series."""
    samples = []
    for y, series_list in enumerate(groups):
        for i, series in enumerate(series_list):
            x = np.array(series, dtype=float)[:, None]
            samples.append(SequenceSample(f"{y}-{i}", x, np.full(len(x), y)))
    return Dataset(tuple(samples))


def test_resample_examples():
    assert resample(np.array([0.0, 2.0]), 3).tolist() == [0.0, 1.0, 2.0]
    assert resample(np.array([0.0, 3.0, 6.0]), 2).tolist() == [0.0, 6.0]
    x = np.random.default_rng(0).normal(size=(7, 3))
    assert np.array_equal(resample(x, 7), x)


def test_resample_single_frame_repeats():
    assert resample(np.array([[1.0, 2.0]]), 3).tolist() == [[1.0, 2.0]] * 3


def test_resample_endpoints_exact():
    x = np.random.default_rng(1).normal(size=(9, 2))
    for n in (2, 5, 17):
        out = resample(x, n)
        assert np.array_equal(out[0], x[0]) and np.array_equal(out[-1], x[-1])


def test_pair_distance_examples():
    assert pair_distance(np.zeros((3, 2)), np.zeros((3, 2))) == 0.0
    assert pair_distance(np.array([0.0, 0.0]), np.array([2.0, 2.0])) == 4.0
    assert pair_distance(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])) == 5.0


def test_pair_distance_flat_variant():
    a, b = np.array([0.0, 0.0]), np.array([2.0, 2.0])
    assert pair_distance(a, b, "flat") == pytest.approx(np.sqrt(8))


def test_pair_distance_shape_mismatch():
    with pytest.raises(ContractError):
        pair_distance(np.zeros((3, 1)), np.zeros((2, 1)))


def test_single_label():
    p = comp_measure(one_d([[0, 1], [2, 3]]))
    assert p.values == (1.0,)


def test_hand_worked_profile():
    p = comp_measure(one_d([[0, 0], [2, 2]], [[0, 0], [1, 1]]))
    assert p.raw == (4.0, 2.0)
    assert p.values == pytest.approx((2 / 3, 1 / 3), abs=1e-15)
    assert p.pair_counts == (1, 1)


def test_mirror_labels_are_balanced():
    p = comp_measure(one_d([[0, 1, 2], [3, 1, 0]], [[0, -1, -2], [-3, -1, 0]]))
    assert p.values == (0.5, 0.5)


def test_ordered_pairs_double_raw_but_not_values():
    data = one_d([[0, 1], [2, 2], [5, 1]], [[0, 0], [1, 3]])
    u, o = comp_measure(data), comp_measure(data, pairs="ordered")
    assert o.raw == pytest.approx(tuple(2 * r for r in u.raw))
    assert o.values == pytest.approx(u.values)


def test_mean_pair_variant():
    data = one_d([[0, 0], [2, 2], [4, 4]], [[0, 0], [1, 1]])
    p = comp_measure(data, variant="mean-pair")
    # label 0: pairs 4 + 8 + 4 = 16 over 3 pairs; label 1: 2 over 1 pair
    assert p.raw == pytest.approx((16 / 3, 2.0))
    assert p.variant == "mean-pair"


def test_identical_samples_give_zero_raw():
    p = comp_measure(one_d([[1, 2], [1, 2]], [[0, 0], [3, 3]]))
    assert p.raw[0] == 0.0 and p.values == (0.0, 1.0)


def test_zero_total_falls_back_to_uniform():
    with pytest.warns(RuntimeWarning):
        p = comp_measure(one_d([[1, 2], [1, 2]], [[5, 5]]))
    assert p.values == (0.5, 0.5)


def test_resamples_to_label_max_length():
    # [0, 2] stretched to length 3 is [0, 1, 2]; distance to [0, 1, 2] is 0
    p = comp_measure(one_d([[0, 2], [0, 1, 2]], [[0, 0], [0, 1]]))
    assert p.raw[0] == 0.0


def test_instances_are_label_runs():
    s = SequenceSample("a", np.arange(6.0)[:, None], np.array([0, 0, 1, 1, 1, 0]))
    groups = label_instances(Dataset((s,)))
    assert [len(g) for g in groups[0]] == [2, 1]
    assert [len(g) for g in groups[1]] == [3]


def random_dataset(rng):
    n_labels = int(rng.integers(1, 4))
    d = int(rng.integers(1, 4))
    samples = []
    for y in range(n_labels):
        for i in range(int(rng.integers(1, 5))):
            T = int(rng.integers(1, 8))
            samples.append(SequenceSample(f"{y}-{i}", rng.normal(size=(T, d)) * 3, np.full(T, y)))
    return Dataset(tuple(samples))


@pytest.mark.parametrize("seed", range(20))
def test_matches_naive_reference(seed):
    data = random_dataset(np.random.default_rng(seed))
    groups = [[s.features for s in data if s.labels[0] == y] for y in range(data.n_labels)]
    for ordered in (False, True):
        values, raw = comp_measure_naive(groups, ordered=ordered)
        p = comp_measure(data, pairs="ordered" if ordered else "unordered")
        assert list(p.raw) == raw
        assert list(p.values) == values


# some random draws have no same-label pairs and fall back to uniform
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@pytest.mark.parametrize("seed", range(5))
def test_scale_and_permutation_invariance(seed):
    rng = np.random.default_rng(40 + seed)
    data = random_dataset(rng)
    base = comp_measure(data)
    scaled = Dataset(tuple(SequenceSample(s.id, 2.5 * s.features, s.labels) for s in data))
    p = comp_measure(scaled)
    assert np.allclose(p.raw, 2.5 * np.array(base.raw), rtol=1e-12)
    assert np.allclose(p.values, base.values, rtol=1e-12, atol=1e-15)
    shuffled = data.subset(rng.permutation(len(data)).tolist())
    assert np.allclose(comp_measure(shuffled).values, base.values, rtol=1e-12, atol=1e-15)
    assert sum(base.values) == pytest.approx(1.0, abs=1e-12)


def test_collapsed_group_is_more_complex():
    # six distinct gesture classes; grouping five of them makes that side complex
    data = synth(SynthSpec(n_labels=6, samples_per_label=6, noise_sigma=0.2, seed=2))
    binary = make_binary(data, GroupingSpec({0}, {1, 2, 3, 4, 5}))
    p = comp_measure(binary)
    assert p.values[1] > p.values[0]


def test_noise_free_single_prototype_has_zero_spread():
    data = synth(SynthSpec(n_labels=2, noise_sigma=0.0, length_jitter=0, samples_per_label=4))
    with pytest.warns(RuntimeWarning):
        p = comp_measure(data)
    assert p.raw == (0.0, 0.0)


def test_noise_free_with_jitter_is_nearly_zero():
    data = synth(SynthSpec(n_labels=2, noise_sigma=0.0, length_jitter=2, samples_per_label=4))
    noisy = synth(SynthSpec(n_labels=2, noise_sigma=0.3, length_jitter=2, samples_per_label=4))
    assert max(comp_measure(data).raw) < 0.1 * min(comp_measure(noisy).raw)


def test_mixture_label_is_more_complex():
    wins = 0
    for seed in range(20):
        data = synth(SynthSpec(prototypes_per_label=(2, 1), samples_per_label=10, seed=seed))
        p = comp_measure(data)
        wins += p.values[0] > p.values[1]
    assert wins >= 19
