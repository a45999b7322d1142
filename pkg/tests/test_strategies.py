import pytest

from labels import LabelSpace
from strategies import Strategy, StrategyError, StrategyKind, label_ood, sample_reassignments

GT = [0, 3, 4, 1, 3]
OOD = [False, True, True, False, True]


def test_baseline_labels_nothing():
    assert len(label_ood(GT, OOD, StrategyKind.BASELINE, LabelSpace(3))) == 0


def test_reassigned_maps_each_ood_class():
    labels = label_ood(GT, OOD, Strategy("reassigned", (2, 0)), LabelSpace(3))
    assert labels.entries == [(1, 2), (2, 0), (4, 2)]


@pytest.mark.parametrize("mapping", [None, (1, 1), (0, 3)])
def test_reassigned_rejects_bad_maps(mapping):
    with pytest.raises(StrategyError):
        label_ood(GT, OOD, Strategy("reassigned", mapping), LabelSpace(3))


def test_reassigned_map_must_cover_every_ood_class():
    with pytest.raises(StrategyError, match="OOD class 4"):
        label_ood(GT, OOD, Strategy("reassigned", (1,)), LabelSpace(3))


def test_openset_uses_single_extra_class():
    labels = label_ood(GT, OOD, "openset", LabelSpace(3, 1))
    assert labels.entries == [(1, 3), (2, 3), (4, 3)]
    with pytest.raises(StrategyError):
        label_ood(GT, OOD, "openset", LabelSpace(3))


def test_oracle_ranks_ood_classes():
    gt = [5, 0, 3, 5]
    mask = [True, False, True, True]
    labels = label_ood(gt, mask, "oracle", LabelSpace(3, 2))
    assert labels.entries == [(0, 4), (2, 3), (3, 4)]
    with pytest.raises(StrategyError, match="k_extra >= 2"):
        label_ood(gt, mask, "oracle", LabelSpace(3, 1))


def test_id_ground_truth_under_ood_flag():
    with pytest.raises(StrategyError):
        label_ood([0, 1], [True, False], "openset", LabelSpace(3, 1))


def test_pool_without_ood_is_empty():
    assert len(label_ood([0, 1], [False, False], "oracle", LabelSpace(2))) == 0


def test_enumerates_all_maps_in_order():
    maps = sample_reassignments(3, 2, 6, seed=0)
    assert maps == [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]


def test_count_is_capped():
    with pytest.warns(UserWarning):
        maps = sample_reassignments(3, 2, 10, seed=0)
    assert len(maps) == 6


def test_sampled_maps_are_distinct_and_reproducible():
    maps = sample_reassignments(5, 3, 8, seed=4)
    assert len(set(maps)) == 8
    assert maps == sample_reassignments(5, 3, 8, seed=4)
    assert all(len(set(m)) == 3 and max(m) < 5 for m in maps)


def test_rejection_sampling_for_large_spaces():
    maps = sample_reassignments(10, 6, 5, seed=1)
    assert len(set(maps)) == 5
    assert all(len(set(m)) == 6 for m in maps)


@pytest.mark.parametrize("k_id,k_ood,count", [(2, 3, 1), (3, 2, 0)])
def test_invalid_sampling_requests(k_id, k_ood, count):
    with pytest.raises(StrategyError):
        sample_reassignments(k_id, k_ood, count, seed=0)
