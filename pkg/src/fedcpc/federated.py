"""Federated pre-training: select clients, run local updates, aggregate by
sample count, apply the server optimizer, repeat until the data is spent.

One round with local_steps=1 and batches_per_step=1 is plain FedSGD: every
selected client takes a single SGD step from the broadcast weights on one
speaker-pure batch, and the server combines the results as

    w_bar = sum_k (n_k / n) * w_k

where n_k counts the utterances that actually contributed loss terms. The
server then either adopts w_bar directly (plain mode) or feeds the
pseudo-gradient w - w_bar to Adam.

Clients within a round are independent; the thread pool only shortens the
wall clock. Aggregation always sums in ascending client order, so parallel
and serial runs produce bitwise-identical weights.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as m
from .autodiff import Tensor, gradient, scale
from .checkpoint import save_checkpoint
from .errors import ConfigError, NonFiniteUpdateError, TooShortError
from .frontend import features_for_record
from .optim import AdamConfig, AdamState, adam_step
from .rng import TAG_ASSIGN, TAG_SELECT, substream, utterance_rng
from .silo import ClientStream, assign_to_clients, partition_by_speaker

SERVER_OPTS = ("adam", "plain")


def deterministic_mode() -> bool:
    """Whether FEDCPC_DETERMINISTIC asks for serial, clock-free runs."""
    return os.environ.get("FEDCPC_DETERMINISTIC", "") not in ("", "0")


@dataclass(frozen=True)
class FedConfig:
    num_clients: int = 10
    clients_per_round: int = 4
    client_batch_size: int = 4
    local_steps: int = 1
    batches_per_step: int = 1
    rounds_max: int = 200
    client_lr: float = 1.0
    server_opt: str = "adam"
    server_lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 42

    def __post_init__(self):
        if self.num_clients < 1 or self.clients_per_round < 1:
            raise ConfigError("num_clients and clients_per_round must be >= 1")
        if not 1 <= self.client_batch_size <= 8:
            raise ConfigError(f"client_batch_size must be in [1, 8], got {self.client_batch_size}")
        if self.local_steps < 1 or self.batches_per_step < 1:
            raise ConfigError("local_steps and batches_per_step must be >= 1")
        if self.rounds_max < 1:
            raise ConfigError("rounds_max must be >= 1")
        if self.client_lr < 0:
            raise ConfigError("client_lr must be >= 0")
        if self.server_opt not in SERVER_OPTS:
            raise ConfigError(f"server_opt must be one of {SERVER_OPTS}, got {self.server_opt!r}")

    def adam_config(self) -> AdamConfig:
        return AdamConfig(lr=self.server_lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)


@dataclass
class ClientUpdate:
    weights: np.ndarray
    num_utterances: int
    client_index: int
    round_index: int
    mean_loss: float


@dataclass
class ServerState:
    weights: np.ndarray
    adam: AdamState
    round_index: int = 0
    utterances_seen: int = 0

    @classmethod
    def fresh(cls, weights: np.ndarray) -> "ServerState":
        return cls(weights=weights.copy(), adam=AdamState.zeros(weights.size))


@dataclass
class MetricsRow:
    round: int
    clients: int
    utterances: int
    mean_client_loss: float
    grad_norm: float
    wall_ms: int

    def render(self) -> str:
        return "\t".join([str(self.round), str(self.clients), str(self.utterances),
                          repr(self.mean_client_loss), repr(self.grad_norm),
                          str(self.wall_ms)])


METRICS_HEADER = "round\tclients\tutterances\tmean_client_loss\tgrad_norm\twall_ms"


def render_metrics(rows, header_comments: list[str] | None = None) -> str:
    lines = [f"# {c}" for c in (header_comments or [])]
    lines.append("# " + METRICS_HEADER)
    lines.extend(r.render() for r in rows)
    return "\n".join(lines) + "\n"


def write_metrics(path, rows, header_comments: list[str] | None = None) -> None:
    Path(path).write_text(render_metrics(rows, header_comments), encoding="utf-8")


def select_clients(active: list[int], clients_per_round: int,
                   rng: np.random.Generator) -> list[int]:
    """min(clients_per_round, len(active)) distinct client indices, uniform
    without replacement, returned in ascending order."""
    if not active:
        raise ConfigError("no active client streams to select from")
    k = min(clients_per_round, len(active))
    picked = rng.choice(len(active), size=k, replace=False)
    return sorted(active[i] for i in picked)


def batch_mean_loss(weights: np.ndarray, batch, cpc_config: m.CpcConfig,
                    seed: int, base_dir=None) -> tuple[Tensor, m.ModelParams, list]:
    """Mean InfoNCE loss over the batch's usable utterances.

    Returns (loss tensor, live params, usable records). Utterances too short
    for the loss are left out; an unusable batch returns an empty list.
    Negative draws depend only on (seed, utterance_id), so any arm that sees
    the same utterance computes the same loss term.
    """
    params = m.unflatten(cpc_config, weights, requires_grad=True)
    usable = []
    total = None
    for record in batch:
        try:
            feats = features_for_record(record, base_dir)
        except TooShortError:
            continue  # audio below one feature frame counts as unusable
        if not m.usable_frames(feats.num_frames, cpc_config):
            continue
        loss = m.utterance_loss(feats, params, cpc_config,
                                utterance_rng(seed, record.utterance_id))
        total = loss if total is None else (total + loss)
        usable.append(record)
    if not usable:
        return Tensor(np.zeros(())), params, []
    return scale(total, 1.0 / len(usable)), params, usable


def client_update(weights: np.ndarray, stream: ClientStream, fed: FedConfig,
                  cpc_config: m.CpcConfig, round_index: int,
                  base_dir=None) -> ClientUpdate | None:
    """Local training for one client; None when the stream has nothing left.

    Draws batches_per_step batches (skipping any with no usable utterance),
    then takes local_steps passes of one SGD step per batch at client_lr.
    The broadcast ``weights`` array is never modified.
    """
    batches = []
    while len(batches) < fed.batches_per_step:
        batch = stream.next_batch()
        if batch is None:
            break
        batches.append(batch)
    if not batches:
        return None
    local = weights.copy()
    n_k = 0
    loss_sum = 0.0
    first_pass = True
    for _ in range(fed.local_steps):
        for batch in batches:
            loss, params, usable = batch_mean_loss(local, batch, cpc_config,
                                                   fed.seed, base_dir)
            if not usable:
                continue
            grads = gradient(loss, params.tensors())
            flat = np.concatenate([g.ravel() for g in grads])
            local = local - fed.client_lr * flat
            if first_pass:
                n_k += len(usable)
                loss_sum += loss.item() * len(usable)
        first_pass = False
    if n_k == 0:
        # every drawn batch was unusable; let the caller try again while the
        # stream still has batches
        return client_update(weights, stream, fed, cpc_config, round_index, base_dir)
    return ClientUpdate(weights=local, num_utterances=n_k,
                        client_index=stream.client_index,
                        round_index=round_index, mean_loss=loss_sum / n_k)


def aggregate(updates: list[ClientUpdate]) -> np.ndarray:
    """Sample-count-weighted average, summed in ascending client order."""
    if not updates:
        raise ConfigError("nothing to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_index)
    dim = ordered[0].weights.size
    if any(u.weights.size != dim for u in ordered):
        raise ConfigError("client weight vectors disagree in length")
    n = sum(u.num_utterances for u in ordered)
    w_bar = np.zeros(dim)
    for u in ordered:
        w_bar += (u.num_utterances / n) * u.weights
    return w_bar


def server_step(state: ServerState, w_bar: np.ndarray, fed: FedConfig) -> np.ndarray:
    """Advance the server by one round; returns the pseudo-gradient.

    Plain mode adopts w_bar outright; adam mode treats w - w_bar as the
    gradient. A non-finite pseudo-gradient rejects the round untouched.
    """
    if w_bar.shape != state.weights.shape:
        raise ConfigError(f"aggregated weights have shape {w_bar.shape}, "
                          f"server holds {state.weights.shape}")
    g = state.weights - w_bar
    if not np.all(np.isfinite(g)):
        raise NonFiniteUpdateError(f"round {state.round_index + 1}: non-finite aggregated update")
    if fed.server_opt == "plain":
        state.weights = w_bar.copy()
    else:
        state.weights = adam_step(state.adam, state.weights, g, fed.adam_config())
    state.round_index += 1
    return g


@dataclass
class RunResult:
    weights: np.ndarray
    metrics: list[MetricsRow] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)


def build_streams(records, fed: FedConfig) -> list[ClientStream]:
    silos = partition_by_speaker(records)
    return assign_to_clients(silos, fed.num_clients, fed.client_batch_size,
                             substream(fed.seed, TAG_ASSIGN))


def run_federated(records, fed: FedConfig, cpc_config: m.CpcConfig,
                  out_dir=None, workers: int = 1, base_dir=None,
                  checkpoint_meta: dict[str, str] | None = None) -> RunResult:
    """The full single-pass loop; stops at rounds_max or data exhaustion."""
    if deterministic_mode():
        workers = 1
    streams = build_streams(records, fed)
    state = ServerState.fresh(m.flatten(m.init_params(cpc_config, fed.seed)))
    result = RunResult(weights=state.weights)
    ckpt_every = max(1, fed.rounds_max // 10)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for attempt in range(1, fed.rounds_max + 1):
            active = [s.client_index for s in streams if not s.exhausted]
            if not active:
                break
            started = time.monotonic()
            chosen = select_clients(active, fed.clients_per_round,
                                    substream(fed.seed, TAG_SELECT, attempt))
            broadcast = state.weights

            def work(idx: int) -> ClientUpdate | None:
                return client_update(broadcast, streams[idx], fed, cpc_config,
                                     round_index=attempt, base_dir=base_dir)

            if pool is not None:
                updates = [u for u in pool.map(work, chosen) if u is not None]
            else:
                updates = [u for u in map(work, chosen) if u is not None]
            if not updates:
                continue
            g = server_step(state, aggregate(updates), fed)
            n_round = sum(u.num_utterances for u in updates)
            state.utterances_seen += n_round
            wall_ms = 0 if deterministic_mode() else int(round(1000 * (time.monotonic() - started)))
            result.metrics.append(MetricsRow(
                round=state.round_index,
                clients=len(updates),
                utterances=n_round,
                mean_client_loss=sum(u.mean_loss * u.num_utterances for u in updates) / n_round,
                grad_norm=float(np.linalg.norm(g)),
                wall_ms=wall_ms,
            ))
            if out_dir is not None and state.round_index % ckpt_every == 0:
                path = Path(out_dir) / f"round{state.round_index:05d}.ckpt"
                save_checkpoint(path, cpc_config, state.weights, meta=checkpoint_meta)
                result.checkpoints.append(str(path))
    finally:
        if pool is not None:
            pool.shutdown()
    result.weights = state.weights
    if out_dir is not None:
        path = Path(out_dir) / "final.ckpt"
        save_checkpoint(path, cpc_config, state.weights, meta=checkpoint_meta)
        result.checkpoints.append(str(path))
    return result
