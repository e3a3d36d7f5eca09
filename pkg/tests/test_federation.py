import math

import numpy as np
import pytest

from fedstress.data import ClientShard, Dataset
from fedstress.federation import (ClientState, aggregate, client_rng, distribute,
                                  local_train, make_clients, run_round)
from fedstress.nn import AdamState, MlpModel
from fedstress.params import ParameterSet, mlp_layout
from fedstress.privacy import NoisedUpdate, PrivacyConfig

DIMS = (4, 6, 1)


def dataset(X, y):
    n = len(y)
    return Dataset(
        np.full(n, "u", dtype="<U32"),
        np.arange(n, dtype=np.int64),
        np.asarray(X, dtype=np.float64),
        np.asarray(y, dtype=np.int64) * 4,  # raw levels 0 or 4
        labels=np.asarray(y, dtype=np.int64),
    )


def shard_for(user_id, n=12, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, DIMS[0]))
    y = (rng.random(n) < 0.5).astype(np.int64)
    ds = dataset(X, y)
    ds.user_ids[:] = user_id
    empty = ds.take(np.zeros(0, dtype=int))
    return ClientShard(user_id, ds, empty)


def template_model(seed=1, dropout=0.0):
    return MlpModel.initialize(DIMS, np.random.default_rng(seed), dropout_rate=dropout)


def make_update(user_id, values, count=1):
    return NoisedUpdate(ParameterSet(mlp_layout([1, 1]), values), user_id, count)


# -- distribute -----------------------------------------------------------------


def test_distribute_copies_global_bit_exact():
    model = template_model()
    clients = make_clients([shard_for("a"), shard_for("b", seed=2)], model)
    fresh = template_model(seed=9)
    distribute(fresh, clients)
    for c in clients:
        assert np.array_equal(c.model.params.values, fresh.params.values)


def test_distribute_empty_network_is_noop():
    distribute(template_model(), [])


def test_client_isolation():
    model = template_model()
    clients = make_clients([shard_for("a"), shard_for("b", seed=2)], model)
    distribute(model, clients)
    before_global = model.params.values.copy()
    before_sibling = clients[1].model.params.values.copy()
    local_train(clients[0], epochs=2, batch_size=4, rng=np.random.default_rng(3))
    assert np.array_equal(model.params.values, before_global)
    assert np.array_equal(clients[1].model.params.values, before_sibling)
    assert not np.array_equal(clients[0].model.params.values, before_global)


# -- local_train ------------------------------------------------------------------


def test_zero_learning_rate_gives_zero_delta():
    model = template_model()
    clients = make_clients([shard_for("a")], model, learning_rate=0.0)
    result = local_train(clients[0], epochs=3, batch_size=4,
                         rng=np.random.default_rng(4))
    assert not result.delta.values.any()


def test_local_train_deterministic_for_same_stream():
    def run():
        clients = make_clients([shard_for("a")], template_model())
        return local_train(clients[0], epochs=2, batch_size=4,
                           rng=client_rng(5, "a", 1, 0)).delta.values

    assert np.array_equal(run(), run())


def test_overfit_single_sample_loss_monotone():
    wins = 0
    for seed in range(20):
        shard = shard_for("solo", n=1, seed=seed)
        clients = make_clients([shard], template_model(seed=seed + 100),
                               learning_rate=0.01)
        result = local_train(clients[0], epochs=30, batch_size=1,
                             rng=np.random.default_rng(seed))
        tail = np.asarray(result.epoch_losses[5:])
        if np.all(np.diff(tail) <= 1e-12):
            wins += 1
    assert wins >= 19  # at least 95% of seeds


def test_empty_shard_rejected():
    shard = shard_for("a")
    empty = ClientShard("a", shard.test, shard.test)
    clients = make_clients([empty], template_model())
    with pytest.raises(ValueError, match="empty training shard"):
        local_train(clients[0], epochs=1, batch_size=4,
                    rng=np.random.default_rng(0))


# -- aggregate --------------------------------------------------------------------


def scalar_model(w=0.0, b=0.0):
    return MlpModel([1, 1], ParameterSet(mlp_layout([1, 1]), [w, b]),
                    dropout_rate=0.0)


def test_aggregate_single_update_absorbed_exactly():
    model = scalar_model(1.0, 2.0)
    out = aggregate(model, [make_update("a", [0.25, -0.5])])
    assert np.array_equal(out.params.values, [1.25, 1.5])


def test_aggregate_cancellation():
    model = scalar_model(1.0, 1.0)
    out = aggregate(model, [make_update("a", [0.2, 0.0]),
                            make_update("b", [-0.2, 0.0])])
    assert np.array_equal(out.params.values, [1.0, 1.0])


def test_aggregate_mean_of_three():
    model = scalar_model(0.0, 0.0)
    out = aggregate(model, [make_update("a", [1.0, 2.0]),
                            make_update("b", [3.0, 4.0]),
                            make_update("c", [5.0, 6.0])])
    assert np.allclose(out.params.values, [3.0, 4.0], rtol=0, atol=1e-15)


def test_aggregate_zero_updates_aborts():
    with pytest.raises(ValueError, match="no client updates"):
        aggregate(scalar_model(), [])


def test_aggregate_matches_compensated_mean():
    rng = np.random.default_rng(11)
    model = template_model()
    size = model.params.size
    for k in (1, 3, 24):
        updates = [
            NoisedUpdate(ParameterSet(model.params.layout, rng.normal(size=size)),
                         f"c{i:02d}", 1)
            for i in range(k)
        ]
        out = aggregate(model, updates)
        stacked = np.stack([u.delta.values for u in updates])
        oracle = np.array([
            math.fsum(stacked[:, j]) / k for j in range(size)
        ])
        assert np.abs(out.params.values - (model.params.values + oracle)).max() < 1e-12


def test_aggregate_permutation_invariant():
    rng = np.random.default_rng(12)
    model = template_model()
    updates = [
        NoisedUpdate(ParameterSet(model.params.layout,
                                  rng.normal(size=model.params.size)), f"c{i}", 1)
        for i in range(7)
    ]
    a = aggregate(model, updates)
    shuffled = [updates[i] for i in rng.permutation(len(updates))]
    b = aggregate(model, shuffled)
    assert np.abs(a.params.values - b.params.values).max() <= 1e-12


def test_weighted_aggregate_uses_sample_counts():
    model = scalar_model(0.0, 0.0)
    out = aggregate(model, [make_update("a", [1.0, 0.0], count=3),
                            make_update("b", [5.0, 0.0], count=1)], weighted=True)
    assert out.params.values[0] == pytest.approx(2.0, abs=1e-15)


# -- run_round --------------------------------------------------------------------


def test_round_with_single_client_equals_local_training():
    shard = shard_for("a", seed=21)
    global_model = template_model(seed=22)
    clients = make_clients([shard], global_model)
    new_global, record = run_round(global_model, clients, 1, local_epochs=2,
                                   batch_size=4, privacy=None, master_seed=77)

    solo = make_clients([shard], global_model)[0]
    local_train(solo, epochs=2, batch_size=4, rng=client_rng(77, "a", 1, 0))
    assert np.array_equal(new_global.params.values, solo.model.params.values)
    assert record.round_index == 1
    assert record.client_ids == ("a",)


def test_identical_shards_and_streams_give_identical_updates():
    shard = shard_for("same", seed=30)
    global_model = template_model(seed=31)
    # Three clients sharing one shard and one id, hence one rng stream.
    clients = [
        ClientState("same", shard, global_model,
                    AdamState.initial(global_model.params.layout))
        for _ in range(3)
    ]
    new_global, _ = run_round(global_model, clients, 1, local_epochs=1,
                              batch_size=4, privacy=None, master_seed=5)
    solo = ClientState("same", shard, global_model,
                       AdamState.initial(global_model.params.layout))
    local_train(solo, epochs=1, batch_size=4, rng=client_rng(5, "same", 1, 0))
    expected = solo.model.params.values
    assert np.abs(new_global.params.values - expected).max() <= 1e-12


def test_one_sgd_step_federation_equals_centralized_full_batch():
    # With equal per-client sample counts, averaging one full-batch SGD
    # step per client equals one centralized full-batch step on the union.
    rng = np.random.default_rng(40)
    shards = [shard_for(f"c{i}", n=8, seed=40 + i) for i in range(3)]
    global_model = template_model(seed=41)
    lam = 0.05

    deltas = []
    for shard in shards:
        client = ClientState(shard.user_id, shard, global_model,
                             AdamState.initial(global_model.params.layout, lam))
        res = local_train(client, epochs=1, batch_size=100,
                          rng=np.random.default_rng(1), optimizer="sgd")
        deltas.append(NoisedUpdate(res.delta, shard.user_id, res.sample_count))
    federated = aggregate(global_model, deltas)

    X = np.vstack([s.train.features for s in shards])
    y = np.concatenate([s.train.labels for s in shards])
    grad, _ = global_model.backward(X, y, rng=rng)
    centralized = global_model.params.sub(grad.scale(lam))
    assert np.abs(federated.params.values - centralized.values).max() < 1e-12


def test_empty_clients_skipped_with_warning(caplog):
    shard = shard_for("a", seed=50)
    empty = ClientShard("b", shard.test, shard.test)
    global_model = template_model(seed=51)
    clients = make_clients([shard, empty], global_model)
    with caplog.at_level("WARNING"):
        new_global, record = run_round(global_model, clients, 1, privacy=None)
    assert "skipping clients" in caplog.text
    assert record.client_ids == ("a",)
    assert not np.array_equal(new_global.params.values, global_model.params.values)


def test_all_clients_empty_fails():
    shard = shard_for("a")
    empty = ClientShard("a", shard.test, shard.test)
    clients = make_clients([empty], template_model())
    with pytest.raises(ValueError, match="no clients with training data"):
        run_round(template_model(), clients, 1, privacy=None)


def test_disabled_privacy_with_infinite_clip_matches_bypass():
    shards = [shard_for(f"c{i}", n=10, seed=60 + i) for i in range(4)]
    base = template_model(seed=61)

    def simulate(privacy):
        model = base
        clients = make_clients(shards, base)
        for round_index in (1, 2, 3):
            model, _ = run_round(model, clients, round_index, local_epochs=1,
                                 batch_size=4, privacy=privacy, master_seed=99)
        return model.params.values

    off = PrivacyConfig(epsilon=1.0, clip_norm=math.inf, enabled=False)
    assert np.array_equal(simulate(None), simulate(off))


def test_round_records_losses_per_client():
    shards = [shard_for(f"c{i}", n=10, seed=70 + i) for i in range(3)]
    model = template_model(seed=71)
    clients = make_clients(shards, model)
    _, record = run_round(model, clients, 1, privacy=None, master_seed=3)
    assert set(record.client_losses) == {"c0", "c1", "c2"}
    assert math.isfinite(record.train_loss_pre)
    assert math.isfinite(record.train_loss_post)
    doc = record.to_json_dict()
    assert doc["round"] == 1 and len(doc["client_losses"]) == 3
