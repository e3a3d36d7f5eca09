"""Simulated federated rounds: distribute the global model, fine-tune it
locally per client, privatize the updates, and average them.

Aggregation is the unweighted mean of client deltas (a sample-count
weighted mode sits behind a flag). Updates are summed in client-id order
regardless of arrival order, so results never depend on scheduling, and
every randomized step draws from a stream derived from
(master seed, client id, round), so concurrent clients are independent
and the whole simulation is reproducible.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import ClientShard, concat_datasets
from .nn import AdamState, MlpModel, adam_step, bce_loss
from .params import ParameterSet
from .privacy import NoisedUpdate, PrivacyConfig, privatize_update

logger = logging.getLogger(__name__)

# Purpose tags keeping a client's training stream independent of its
# privacy-noise stream within the same round.
TRAIN_STREAM = 0
NOISE_STREAM = 1

# The global model is an ordinary MlpModel that only `aggregate` replaces.
GlobalModel = MlpModel


def _stream_key(client_id: str) -> int:
    digest = hashlib.sha256(client_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def client_rng(master_seed: int, client_id: str, round_index: int,
               purpose: int) -> np.random.Generator:
    """Independent, reproducible stream for one client in one round."""
    return np.random.default_rng(np.random.SeedSequence(
        [master_seed, _stream_key(client_id), round_index, purpose]
    ))


@dataclass
class ClientState:
    """One participant: its shard, local model copy, and optimizer state."""

    client_id: str
    shard: ClientShard
    model: MlpModel
    adam: AdamState


def make_clients(shards: list[ClientShard], template: MlpModel,
                 learning_rate: float = 0.001) -> list[ClientState]:
    return [
        ClientState(
            client_id=shard.user_id,
            shard=shard,
            model=template,
            adam=AdamState.initial(template.params.layout, learning_rate),
        )
        for shard in shards
    ]


def distribute(global_model: GlobalModel, clients: list[ClientState]) -> None:
    """Give every client a value copy of the global model.

    Parameters are immutable, so sharing the ParameterSet is a copy in
    effect: a client training forward only ever swaps in new parameter
    objects and can never disturb the global model or its siblings.
    """
    for client in clients:
        client.model = global_model.with_params(global_model.params)


@dataclass(frozen=True)
class LocalTrainResult:
    delta: ParameterSet
    sample_count: int
    epoch_losses: tuple[float, ...]


def local_train(client: ClientState, epochs: int, batch_size: int,
                rng: np.random.Generator, optimizer: str = "adam"
                ) -> LocalTrainResult:
    """Minibatch-train the client's local model on its training shard.

    Returns the parameter delta (post-training minus received), leaving
    the updated model and optimizer state on the client. The "sgd"
    optimizer variant takes plain full-gradient steps at the Adam learning
    rate and leaves the Adam accumulators untouched.
    """
    X = client.shard.train.features
    y = client.shard.train.labels
    n = X.shape[0]
    if n == 0:
        raise ValueError(f"client {client.client_id} has an empty training shard")
    if y is None:
        raise ValueError(f"client {client.client_id} shard has no binarized labels")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")

    start = client.model.params
    model, adam = client.model, client.adam
    epoch_losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for lo in range(0, n, batch_size):
            idx = order[lo: lo + batch_size]
            grad, loss = model.backward(X[idx], y[idx], rng=rng)
            if optimizer == "adam":
                new_params, adam = adam_step(model.params, grad, adam)
            else:
                new_params = model.params.sub(grad.scale(adam.learning_rate))
            model = model.with_params(new_params)
            total += loss
            batches += 1
        epoch_losses.append(total / batches)
    client.model, client.adam = model, adam
    return LocalTrainResult(model.params.sub(start), n, tuple(epoch_losses))


def aggregate(global_model: GlobalModel, updates: list[NoisedUpdate],
              weighted: bool = False) -> GlobalModel:
    """Fold client deltas into a new global model.

    New parameters are old parameters plus the mean client delta
    (sample-count weighted when ``weighted``). Updates are summed in
    client-id order so the result is invariant to arrival order.
    """
    if not updates:
        raise ValueError("round aborted: no client updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    for upd in ordered:
        global_model.params._check_same_layout(upd.delta)
    if weighted:
        total = sum(u.sample_count for u in ordered)
        if total <= 0:
            raise ValueError("weighted aggregation needs positive sample counts")
        weights = [u.sample_count / total for u in ordered]
    else:
        weights = [1.0 / len(ordered)] * len(ordered)
    mean = np.zeros(global_model.params.size)
    for w, upd in zip(weights, ordered):
        mean += w * upd.delta.values
    new_params = ParameterSet._wrap(
        global_model.params.layout, global_model.params.values + mean
    )
    return global_model.with_params(new_params)


@dataclass(frozen=True)
class RoundRecord:
    """What happened in one federated round, for the run log."""

    round_index: int
    client_ids: tuple[str, ...]
    client_losses: dict[str, float] = field(compare=False)
    train_loss_pre: float = float("nan")
    train_loss_post: float = float("nan")
    wall_time_s: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "round": self.round_index,
            "clients": list(self.client_ids),
            "client_losses": {k: self.client_losses[k] for k in sorted(self.client_losses)},
            "train_loss_pre": self.train_loss_pre,
            "train_loss_post": self.train_loss_post,
            "wall_time_s": self.wall_time_s,
        }


def _mean_train_loss(model: MlpModel, clients: list[ClientState]) -> float:
    union = concat_datasets([c.shard.train for c in clients])
    return bce_loss(model.forward(union.features), union.labels)


def run_round(global_model: GlobalModel, clients: list[ClientState],
              round_index: int, *, local_epochs: int = 1, batch_size: int = 32,
              privacy: PrivacyConfig | None = None, master_seed: int = 0,
              weighted: bool = False) -> tuple[GlobalModel, RoundRecord]:
    """One federated round: distribute, train locally, privatize, aggregate.

    Clients with empty training shards are skipped with a warning. When
    ``privacy`` is None the privacy mechanism is bypassed entirely (no
    clip, no noise); pass a disabled PrivacyConfig to keep the clipping
    path active without noise.
    """
    active = [c for c in clients if c.shard.train.n > 0]
    skipped = [c.client_id for c in clients if c.shard.train.n == 0]
    if skipped:
        logger.warning("round %d: skipping clients with empty shards: %s",
                       round_index, ", ".join(skipped))
    if not active:
        raise ValueError(f"round {round_index}: no clients with training data")

    started = time.perf_counter()
    distribute(global_model, clients)
    pre_loss = _mean_train_loss(global_model, active)

    updates: list[NoisedUpdate] = []
    client_losses: dict[str, float] = {}
    for client in sorted(active, key=lambda c: c.client_id):
        train_rng = client_rng(master_seed, client.client_id, round_index, TRAIN_STREAM)
        result = local_train(client, local_epochs, batch_size, train_rng)
        if privacy is None:
            update = NoisedUpdate(result.delta, client.client_id, result.sample_count)
        else:
            noise_rng = client_rng(master_seed, client.client_id, round_index, NOISE_STREAM)
            update = privatize_update(result.delta, privacy, noise_rng,
                                      client_id=client.client_id,
                                      sample_count=result.sample_count)
        updates.append(update)
        client_losses[client.client_id] = result.epoch_losses[-1]

    new_global = aggregate(global_model, updates, weighted=weighted)
    record = RoundRecord(
        round_index=round_index,
        client_ids=tuple(c.client_id for c in sorted(active, key=lambda c: c.client_id)),
        client_losses=client_losses,
        train_loss_pre=pre_loss,
        train_loss_post=_mean_train_loss(new_global, active),
        wall_time_s=time.perf_counter() - started,
    )
    return new_global, record
