import math

import numpy as np
import pytest

import config as cfg
import model
from datagen import generate
from strategies import Strategy
from train import (
    LOG_COLUMNS,
    ConfigError,
    TrainConfig,
    Variant,
    VariantError,
    VariantKind,
    fit_labeled_only,
    lambda_ramp,
    train_upsilon,
    train_variant,
)


def test_lambda_ramp_endpoints():
    assert lambda_ramp(0, 100) == pytest.approx(math.exp(-5.0), abs=1e-9)
    assert lambda_ramp(100, 100) == 1.0
    assert lambda_ramp(250, 100) == 1.0
    assert lambda_ramp(10, 100) < lambda_ramp(50, 100)
    with pytest.raises(ValueError):
        lambda_ramp(-1, 100)


@pytest.mark.parametrize(
    "changes,key",
    [
        ({"tau": 1.0}, "tau"),
        ({"gamma": 0.99}, "gamma"),
        ({"confidence": "entropy", "gamma": 0.2}, "gamma"),
        ({"confidence": "scorediff", "gamma": 1.5}, "gamma"),
        ({"confidence": "margin"}, "confidence"),
        ({"pretrain_epochs": 6}, "pretrain_epochs"),
        ({"pl_source": "shadow"}, "pl_source"),
        ({"activation": "gelu"}, "activation"),
        ({"k_extra": -1}, "k_extra"),
    ],
)
def test_config_errors_name_the_field(small_train, changes, key):
    with pytest.raises(ConfigError) as info:
        small_train.replace(**changes)
    assert info.value.key == key


def test_entropy_threshold_is_negative(small_train):
    assert small_train.replace(confidence="entropy", gamma=-1.2).gamma == -1.2


def test_from_config():
    cfg.TAU = 0.9
    cfg.GAMMA = 0.4
    tcfg = TrainConfig.from_cfg(epochs=10, pretrain_epochs=2)
    assert (tcfg.tau, tcfg.gamma, tcfg.epochs, tcfg.pretrain_epochs) == (0.9, 0.4, 10, 2)
    assert tcfg.sinkhorn.reg == cfg.SINKHORN_REG
    assert not tcfg.ema_warmup


def test_labeling_epochs():
    tcfg = TrainConfig(epochs=10, pretrain_epochs=4, pl_interval=2, gamma=0.3)
    assert [e for e in range(1, 11) if tcfg.is_labeling_epoch(e)] == [4, 6, 8, 10]


def test_variant_parsing():
    assert Variant.parse("baseline").name == "strategy:baseline"
    assert Variant.parse(" Upsilon ").kind is VariantKind.UPSILON
    assert Variant.parse("strategy:oracle").strategy.kind.value == "oracle"
    assert not Variant.parse("strategy:openset").uses_rounds
    with pytest.raises(VariantError):
        Variant.parse("mixmatch")
    with pytest.raises(VariantError):
        Variant.parse("strategy:random")


def test_adapt_config(small_train):
    assert Variant.parse("openset_k1").adapt_config(small_train).k_extra == 1
    assert Variant.parse("rpl_only").adapt_config(small_train).k_extra == 0
    assert Variant.parse("upsilon").adapt_config(small_train).k_extra == 2
    assert Variant.parse("strategy:oracle").adapt_config(small_train, k_ood=5).k_extra == 5
    assert Variant.parse("strategy:openset").adapt_config(small_train).k_extra == 1
    with pytest.raises(VariantError):
        Variant.parse("strategy:oracle").adapt_config(small_train)


def test_variant_checks(small_train):
    with pytest.raises(VariantError):
        Variant.parse("sec_only").check(small_train.replace(k_extra=0))
    with pytest.raises(VariantError):
        Variant.parse("openset_k1").check(small_train)
    with pytest.raises(VariantError):
        Variant.parse("strategy:reassigned").check(small_train)


def test_upsilon_training_log(small_spec, small_train):
    result = train_upsilon(generate(small_spec), small_train)
    log = result.log
    assert log.columns.tolist() == LOG_COLUMNS
    assert log["epoch"].tolist() == list(range(1, 7))
    assert log["accuracy"].between(0, 1).all()
    assert [r.epoch for r in result.rounds] == [2, 3, 4, 5, 6]
    assert result.final_accuracy == pytest.approx(log["accuracy"].iloc[-1])
    assert result.ema.num_updates == 6 * 4
    assert result.params.is_finite()


def test_rpl_rounds_are_balanced(small_spec, small_train):
    result = train_upsilon(generate(small_spec), small_train)
    for r in result.rounds:
        id_counts = r.histogram[:3]
        assert min(id_counts) == max(id_counts) <= r.quota
        assert r.n_rpl == 3 * id_counts[0]
        assert sum(r.histogram[3:]) == r.n_sec


def test_training_is_deterministic(small_spec, small_train):
    ds = generate(small_spec)
    a = train_upsilon(ds, small_train).log
    b = train_upsilon(ds, small_train).log
    assert a.equals(b)


def test_no_round_matches_labeled_only(small_spec, small_train):
    ds = generate(small_spec)
    tcfg = small_train.replace(pretrain_epochs=5, pl_interval=7)
    up = train_upsilon(ds, tcfg)
    base = train_variant(ds, tcfg, "baseline")
    assert up.rounds == []
    np.testing.assert_array_equal(up.log["accuracy"], base.log["accuracy"])
    np.testing.assert_array_equal(up.ema.shadow.w2, base.ema.shadow.w2)


def test_upsilon_without_extra_classes(small_spec, small_train):
    result = train_upsilon(generate(small_spec), small_train.replace(k_extra=0))
    assert (result.log["n_pseudo_sec"] == 0).all()
    assert result.label_space.total == 3


@pytest.mark.parametrize("name", ["vanilla_pl", "rpl_only", "sec_only", "openset_k1"])
def test_variants_run(small_spec, small_train, name):
    variant = Variant.parse(name)
    tcfg = variant.adapt_config(small_train)
    result = train_variant(generate(small_spec), tcfg, variant)
    assert len(result.log) == tcfg.epochs
    if name in ("vanilla_pl", "rpl_only"):
        assert (result.log["n_pseudo_sec"] == 0).all()
    if name == "openset_k1":
        assert all(set(np.flatnonzero(r.histogram[3:])) <= {0} for r in result.rounds)


def test_oracle_strategy_labels_every_ood_sample(small_spec, small_train):
    ds = generate(small_spec)
    variant = Variant.parse("strategy:oracle")
    result = train_variant(ds, variant.adapt_config(small_train, k_ood=ds.k_ood), variant)
    assert result.rounds[0].epoch == 2
    assert result.rounds[0].n_sec == 30 and result.rounds[0].n_rpl == 0
    assert result.rounds[0].histogram[3:] == (15, 15)
    assert result.log["ood_as_id_prop"].iloc[-1] == 0.0


def test_reassigned_strategy_counts_id_labels(small_spec, small_train):
    variant = Variant(VariantKind.STRATEGY, Strategy("reassigned", (2, 0)))
    result = train_variant(generate(small_spec), variant.adapt_config(small_train), variant)
    assert result.rounds[-1].n_rpl == 30
    assert result.log["ood_as_id_prop"].iloc[-1] == 1.0


def test_reassigned_map_errors_surface_as_variant_errors(small_spec, small_train):
    variant = Variant(VariantKind.STRATEGY, Strategy("reassigned", (1,)))
    with pytest.raises(VariantError):
        train_variant(generate(small_spec), small_train.replace(k_extra=0), variant)


def test_ema_source_and_ramp(small_spec, small_train):
    tcfg = small_train.replace(pl_source="ema", lambda_ramp=True, ramp_horizon=8)
    assert len(train_upsilon(generate(small_spec), tcfg).rounds) == 5


def test_fit_labeled_only(small_spec, small_train):
    params = fit_labeled_only(small_train, generate(small_spec), seed=3)
    assert isinstance(params, model.ClassifierParams)
    assert params.n_classes == 3 + small_train.k_extra
