import numpy as np
import pytest

from tactfl.config import ExperimentConfig
from tactfl.exceptions import InputError, ParameterError
from tactfl.federation import (
    build_dataset,
    build_split,
    classification_scores,
    evaluate,
    final_model,
    init_state,
    local_train,
    run_experiment,
    run_round,
    server_head_train,
)
from tactfl.model import HeadParams, init_model
from tactfl.partition import ClientDataset
from tactfl.rng import SplitMix64, derive_seed
from tactfl.synthdata import MultiModalSample


def small_cfg(**kw):
    base = dict(
        samples_per_class=12, dim_a=4, dim_b=3, latent_dim=3, private_dim=0, private_scale=0.0,
        num_clients=3, alpha=1.0, rounds=2, hidden=6, embed=4, batch_size=8,
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def setup():
    cfg = small_cfg()
    samples = build_dataset(cfg)
    split = build_split(cfg, samples)
    return cfg, samples, split


def test_zero_learning_rate_returns_global_bit_exact(setup):
    cfg, samples, split = setup
    state = init_state(cfg, samples, split)
    cfg0 = cfg.replace(local_lr=0.0)
    model, loss = local_train(split.clients[0], state.model, cfg0, SplitMix64(1))
    assert np.array_equal(model.flatten(), state.model.flatten())
    assert np.isfinite(loss)


def test_local_training_moves_encoders_only(setup):
    cfg, samples, split = setup
    state = init_state(cfg, samples, split)
    model, _ = local_train(split.clients[0], state.model, cfg, SplitMix64(1))
    assert np.array_equal(model.flatten("head"), state.model.flatten("head"))
    assert not np.array_equal(model.flatten("encoders"), state.model.flatten("encoders"))


def test_local_training_single_modality_client(setup):
    cfg, samples, split = setup
    state = init_state(cfg, samples, split)
    client = ClientDataset(9, split.clients[0].samples, {"A": False, "B": True})
    model, loss = local_train(client, state.model, cfg, SplitMix64(2))
    assert np.isfinite(loss)
    assert np.array_equal(model.encoders["A"].w_in, state.model.encoders["A"].w_in)


def test_local_training_rejects_empty_client(setup):
    cfg, samples, split = setup
    state = init_state(cfg, samples, split)
    with pytest.raises(InputError):
        local_train(ClientDataset(0, [], {"A": True}), state.model, cfg, SplitMix64(0))


def test_head_training_keeps_encoders(setup):
    cfg, samples, split = setup
    state = init_state(cfg, samples, split)
    model, loss = server_head_train(state.model, split.server_labelled, cfg, SplitMix64(3))
    assert np.array_equal(model.flatten("encoders"), state.model.flatten("encoders"))
    assert np.isfinite(loss)


def test_zero_head_epochs_is_a_no_op(setup):
    cfg, samples, split = setup
    state = init_state(cfg, samples, split)
    model, _ = server_head_train(state.model, split.server_labelled, cfg.replace(head_epochs=0), SplitMix64(3))
    assert np.array_equal(model.flatten(), state.model.flatten())


def test_head_training_fits_separable_embeddings():
    # Modality values are constant over time, so the encoder sees a clean
    # class-dependent input; a linear head on top should fit it.
    rng = np.random.default_rng(0)
    centres = rng.normal(size=(3, 4)) * 3
    proxy = [
        MultiModalSample({"A": np.tile(centres[k] + 0.1 * rng.normal(size=4), (5, 1))}, k, i)
        for i, k in enumerate(np.repeat(np.arange(3), 20))
    ]
    model = init_model({"A": 4}, 3, 16, 8, seed=1)
    cfg = ExperimentConfig(head_epochs=200, head_lr=0.5, batch_size=16)
    trained, _ = server_head_train(model, proxy, cfg, SplitMix64(4))
    acc, _ = evaluate(trained, proxy)
    assert acc >= 90.0


def test_classification_scores_examples():
    assert classification_scores([0, 1, 2], [0, 1, 2], 3) == (100.0, 100.0)
    acc, f1 = classification_scores([0, 0, 1, 1], [0, 0, 0, 0], 2)
    assert acc == 50.0
    # F1 is 2/3 for class 0 and 0 for class 1.
    assert f1 == pytest.approx(100 / 3, abs=1e-9)


def test_evaluate_with_fixed_head():
    model = init_model({"A": 2}, 2, 3, 2, seed=0)
    model.head = HeadParams(np.zeros((2, 2)), np.array([0.0, 1.0]))
    test = [MultiModalSample({"A": np.zeros((3, 2))}, 1, i) for i in range(4)]
    assert evaluate(model, test) == (100.0, pytest.approx(50.0))
    with pytest.raises(InputError):
        evaluate(model, [])


def test_single_client_fedavg_round_matches_manual(setup):
    cfg, samples, _ = setup
    cfg1 = cfg.replace(num_clients=1, aggregator="fedavg", mode="full")
    split = build_split(cfg1, samples)
    state = init_state(cfg1, samples, split)
    start = state.model.copy()
    client = split.clients[0]
    manual, _ = local_train(client, start, cfg1, SplitMix64(derive_seed(cfg1.seed, "client", 0, 0)))
    state, record = run_round(state, cfg1)
    assert record.weights == [1.0]
    np.testing.assert_array_equal(state.model.flatten("encoders"), manual.flatten("encoders"))


def test_records_are_deterministic():
    cfg = small_cfg()
    a = [r.as_dict() for r in run_experiment(cfg)]
    b = [r.as_dict() for r in run_experiment(cfg)]
    assert a == b
    c = [r.as_dict() for r in run_experiment(cfg.replace(seed=1))]
    assert a != c


def test_workers_do_not_change_results():
    cfg = small_cfg()
    a = [r.as_dict() for r in run_experiment(cfg)]
    b = [r.as_dict() for r in run_experiment(cfg.replace(workers=3))]
    assert a == b


def test_single_round_record_shape():
    records = run_experiment(small_cfg(rounds=1))
    assert len(records) == 1
    rec = records[0].as_dict()
    assert rec["round"] == 0 and "ms" not in rec
    assert len(rec["weights"]) == len(rec["client_losses"]) == 3
    assert sum(rec["weights"]) == pytest.approx(1.0)
    assert 0 <= rec["accuracy"] <= 100


@pytest.mark.parametrize("mode", ["full", "tct_only", "ssfl_only", "supervised"])
@pytest.mark.parametrize("aggregator", ["sma", "fedopt"])
def test_every_mode_runs(mode, aggregator):
    cfg = small_cfg(mode=mode, aggregator=aggregator, baseline="fedopt" if aggregator == "fedopt" else "fedavg")
    records, state = final_model(cfg)
    assert state.round == 2
    assert all(np.isfinite(r.head_loss) for r in records)
    if mode == "ssfl_only":
        assert records[0].weights == []


def test_missing_modalities_run():
    records = run_experiment(small_cfg(r_m=0.5, num_clients=4))
    assert np.isfinite(records[-1].accuracy)


def test_invalid_config_is_rejected():
    with pytest.raises(ParameterError):
        run_experiment(small_cfg(rounds=0))
