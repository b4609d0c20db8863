import json

import numpy as np
import pytest

from ldcrf import harness
from ldcrf.complexity import ComplexityProfile
from ldcrf.data import SynthSpec, concat_many, synth
from ldcrf.harness import (
    ExperimentConfig,
    confusion,
    fold_indices,
    frame_accuracy,
    nested_cv,
    report_rows,
    run_outer_fold,
    sensitivity_study,
    split,
)
from ldcrf.model import ContractError, Dataset, LatentMap, SequenceSample
from ldcrf.training import TrainConfig, train

FAST = TrainConfig(max_iterations=15)


def small_data(seed=0, n=12):
    return concat_many(synth(SynthSpec(prototypes_per_label=(2, 1), samples_per_label=n, mean_length=6,
                                       length_jitter=1, noise_sigma=0.6, seed=seed)), 2, seed)


def small_config(**kw):
    base = dict(latent_totals=(2, 4), outer_folds=3, inner_folds=2, train_config=FAST)
    return ExperimentConfig(**{**base, **kw})


def test_frame_accuracy_examples():
    assert frame_accuracy([np.array([0, 1, 1])], [np.array([0, 1, 0])]) == pytest.approx(2 / 3)
    # pooled over frames, not averaged over sequences
    assert frame_accuracy([[0], [1, 1, 1]], [[1], [1, 1, 1]]) == 0.75


def test_frame_accuracy_contract():
    with pytest.raises(ContractError):
        frame_accuracy([[0, 1]], [[0]])
    with pytest.raises(ContractError):
        frame_accuracy([], [])


def test_confusion_examples():
    m = confusion([np.array([0, 1, 1, 1])], [np.array([0, 0, 1, 1])], 3)
    assert m.tolist() == [[1, 1, 0], [0, 2, 0], [0, 0, 0]]
    n = confusion([np.array([0, 1, 1, 1])], [np.array([0, 0, 1, 1])], 3, normalize=True)
    assert n.tolist() == [[0.5, 0.5, 0], [0, 1, 0], [0, 0, 0]]


def test_folds_partition_and_stratify():
    data = small_data()
    folds = fold_indices(data, 3, seed=4)
    everything = np.sort(np.concatenate(folds))
    assert everything.tolist() == list(range(len(data)))
    assert max(map(len, folds)) - min(map(len, folds)) <= 1
    assert all(np.array_equal(a, b) for a, b in zip(folds, fold_indices(data, 3, seed=4)))


def test_folds_keep_every_label_in_each_fold():
    data = synth(SynthSpec(samples_per_label=6))
    for fold in fold_indices(data, 3, seed=1):
        assert {int(data[i].labels[0]) for i in fold} == {0, 1}


def test_folds_contract():
    data = small_data()
    with pytest.raises(ContractError):
        fold_indices(data, 1, 0)
    with pytest.raises(ContractError):
        fold_indices(data.subset([0, 1]), 3, 0)


def test_strategies_share_outer_folds():
    data = small_data()
    report = nested_cv(data, small_config(latent_totals=(2,)))
    folds = fold_indices(data, 3, 0)
    assert [o["fold"] for o in report["strategies"]["uniform"]["outer"]] == [0, 1, 2]
    out = run_outer_fold(data, small_config(latent_totals=(2,)), 1)
    assert out["test_ids"] == [data[i].id for i in folds[1]]


def test_uniform_single_grid_entry_is_plain_cross_validation():
    data = small_data()
    report = nested_cv(data, small_config(latent_totals=(2,), strategies=("uniform",)))
    for k, test_idx in enumerate(fold_indices(data, 3, 0)):
        tr, te = split(data, test_idx)
        res = train(tr, LatentMap((1, 1)), FAST)
        expected = harness.evaluate(res.params, LatentMap((1, 1)), te)["accuracy"]
        assert report["strategies"]["uniform"]["outer"][k]["accuracy"] == expected


def test_balanced_profile_matches_uniform(monkeypatch):
    monkeypatch.setattr(harness, "comp_measure",
                        lambda *a, **k: ComplexityProfile((0.5, 0.5), (1.0, 1.0), (1, 1), "literal-sum"))
    report = nested_cv(small_data(), small_config())
    a, b = report["strategies"]["complexity(c=1)"], report["strategies"]["uniform"]
    assert a["outer"] == b["outer"]


def test_infeasible_totals_are_skipped():
    report = nested_cv(small_data(), small_config(latent_totals=(2, 3)))
    outer = report["strategies"]["uniform"]["outer"][0]
    assert [s["total"] for s in outer["skipped"]] == [3]
    assert [s["total"] for s in outer["inner_scores"]] == [2]


def test_explicit_strategy():
    cfg = small_config(strategies=("explicit",), explicit=((2, 1), (1, 2)), latent_totals=())
    report = nested_cv(small_data(), cfg)
    assert {tuple(o["counts"]) for o in report["strategies"]["explicit"]["outer"]} <= {(2, 1), (1, 2)}


def test_config_validation_and_round_trip():
    with pytest.raises(ContractError):
        ExperimentConfig(latent_totals=())
    with pytest.raises(ContractError):
        ExperimentConfig(latent_totals=(2,), strategies=("magic",))
    cfg = small_config(caps=(1.0, 0.75), seed=3)
    back = ExperimentConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert back == cfg and back.digest() == cfg.digest()
    assert harness.with_workers(cfg, 4).digest() == cfg.digest()


def test_report_is_reproducible_and_worker_independent():
    data = small_data(1)
    a = nested_cv(data, small_config())
    b = nested_cv(data, small_config(workers=2))
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    rows = report_rows(a)
    assert {r["strategy"] for r in rows} == {"complexity(c=1)", "uniform"}


def test_sentinel_outlier_in_test_fold_changes_nothing():
    data = small_data(2)
    cfg = small_config()
    fold = 0
    target = int(fold_indices(data, cfg.outer_folds, cfg.seed)[fold][0])
    victim = data[target]
    outlier = SequenceSample(victim.id, np.full_like(victim.features, 1e6), victim.labels)
    poisoned = Dataset(tuple(outlier if i == target else s for i, s in enumerate(data)),
                       n_labels=data.n_labels, name=data.name)
    clean = run_outer_fold(data, cfg, fold)
    dirty = run_outer_fold(poisoned, cfg, fold)
    assert clean["profile"] == dirty["profile"]
    for name, arm in clean["arms"].items():
        assert arm["params"] == dirty["arms"][name]["params"]
        assert arm["counts"] == dirty["arms"][name]["counts"]
    # the outlier is evaluated, so test accuracy is allowed to move
    assert victim.id in dirty["test_ids"]


def test_sentinel_in_training_fold_is_seen():
    data = small_data(2)
    cfg = small_config()
    target = int(fold_indices(data, cfg.outer_folds, cfg.seed)[1][0])
    victim = data[target]
    outlier = SequenceSample(victim.id, victim.features + 50.0, victim.labels)
    poisoned = Dataset(tuple(outlier if i == target else s for i, s in enumerate(data)),
                       n_labels=data.n_labels, name=data.name)
    assert run_outer_fold(data, cfg, 0)["profile"] != run_outer_fold(poisoned, cfg, 0)["profile"]


def test_sensitivity_study_rows():
    data = small_data()
    rep = sensitivity_study(data, [(1, 1), (2, 1)], split_seed=0, train_config=FAST)
    assert [r["counts"] for r in rep["assignments"]] == [[1, 1], [2, 1]]
    assert rep["n_test"] == len(fold_indices(data, 3, 0)[0])
    assert all(0.0 <= r["accuracy"] <= 1.0 for r in rep["assignments"])
