"""Round engine for federated training with mid-round rewind.

A federation round moves each node's model to a peer (or to a central
server), where the receiving node spends its fixed epoch budget in three
phases: head epochs on its own data, rewind epochs on the data of the
node the model came from, tail epochs on its own data again. Rewind
reallocates the budget; it never adds epochs.

Topologies:

- cyclic: fixed ring, node j always sends to (j+1) mod N
- random: a fresh uniformly random permutation of senders every round
- star: no peer routing; every node starts each round from the server
  model and the server averages the results

Everything is a pure function of (config, seed): routing, peer choice,
shuffling, and initialization each draw from an independent stream
derived from the experiment seed.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import REWIND_MODES, TOPOLOGIES, ExperimentConfig
from .data import (
    Dataset,
    PartitionSpec,
    Shard,
    dirichlet_partition,
    load_mnist_dir,
    make_blobs,
    subsample,
)
from .metrics import (
    CrossAccuracyMatrix,
    cross_accuracy,
    single_model_row,
    summarize,
)
from .nn import (
    ArchSpec,
    Batch,
    ModelParams,
    TrainConfig,
    average_params,
    init_model,
    train,
    with_shuffle_seed,
)
from .seeding import generator, mix, node_stream
from .tasks import active_view, make_schedules

# sub-stream tags; every per-concern seed is mix(experiment_seed, tag, ...)
STREAM_PARTITION = 1
STREAM_INIT = 2
STREAM_ROUTING = 3
STREAM_PEER = 4
STREAM_SHUFFLE = 5
STREAM_TASKS = 6
STREAM_SUBSET = 7
STREAM_DATA = 8

# phase tags folded into per-phase shuffle seeds
PH_HEAD = 0
PH_REWIND = 1
PH_TAIL = 2

_PHASE_NAMES = {PH_HEAD: "head", PH_REWIND: "rewind", PH_TAIL: "tail"}


@dataclass(frozen=True)
class PhasePlan:
    """Epoch split of one round's budget: head, rewind, tail."""

    head_epochs: int
    rewind_epochs: int
    tail_epochs: int

    def __post_init__(self):
        for name in ("head_epochs", "rewind_epochs", "tail_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.total == 0:
            raise ValueError("phase plan allocates zero epochs")

    @property
    def total(self) -> int:
        return self.head_epochs + self.rewind_epochs + self.tail_epochs


def make_phase_plan(epochs: int, rewind_fraction: float) -> PhasePlan:
    """Split a round's epoch budget by the rewind fraction.

    rewind and tail each get max(1, round(fraction * epochs)) when the
    fraction is positive, otherwise 0; head gets the remainder. head must
    stay >= 1, which needs epochs >= 3 whenever the fraction is positive.
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    if not 0.0 <= rewind_fraction <= 0.5:
        raise ValueError("rewind_fraction must lie in [0, 0.5]")
    if rewind_fraction == 0.0:
        return PhasePlan(epochs, 0, 0)
    if epochs < 3:
        raise ValueError(
            "rewind needs at least 3 epochs per round (one per phase)"
        )
    rewind = max(1, round(rewind_fraction * epochs))
    head = epochs - 2 * rewind
    if head < 1:
        raise ValueError(
            f"rewind_fraction {rewind_fraction} leaves no head epochs "
            f"out of {epochs}"
        )
    return PhasePlan(head, rewind, rewind)


@dataclass(frozen=True)
class RoutingPlan:
    """Bijective model movement for one round.

    dest[j] is where node j's model goes; src is the inverse map, so the
    model node j trains this round arrived from src[j].
    """

    round: int
    dest: tuple[int, ...]

    def __post_init__(self):
        n = len(self.dest)
        if n < 2:
            raise ValueError("routing needs at least 2 nodes")
        if sorted(self.dest) != list(range(n)):
            raise ValueError("dest must be a permutation of node ids")

    @property
    def num_nodes(self) -> int:
        return len(self.dest)

    @property
    def src(self) -> tuple[int, ...]:
        inverse = [0] * len(self.dest)
        for sender, receiver in enumerate(self.dest):
            inverse[receiver] = sender
        return tuple(inverse)


def build_routing(
    kind: str, num_nodes: int, round: int, seed: int
) -> Optional[RoutingPlan]:
    """Routing plan for one round; None for the star topology."""
    if kind not in TOPOLOGIES:
        raise ValueError(f"unknown topology {kind!r}")
    if kind == "star":
        return None
    if num_nodes < 2:
        raise ValueError(f"{kind} topology needs at least 2 nodes")
    if kind == "cyclic":
        dest = tuple((j + 1) % num_nodes for j in range(num_nodes))
    else:  # random: fresh permutation per round, self-loops allowed
        perm = generator(mix(seed, round)).permutation(num_nodes)
        dest = tuple(int(v) for v in perm)
    return RoutingPlan(round=round, dest=dest)


@dataclass(frozen=True)
class FederationState:
    """Snapshot after a round: models[j] is what node j just trained."""

    round: int
    models: tuple[ModelParams, ...]
    server_model: Optional[ModelParams] = None

    def __post_init__(self):
        if not self.models:
            raise ValueError("state needs at least one model")


def initial_state(
    model: ModelParams, num_nodes: int, centralized: bool = False
) -> FederationState:
    """Round-0 state: every node (and the server) holds the same weights."""
    return FederationState(
        round=0,
        models=tuple(model for _ in range(num_nodes)),
        server_model=model if centralized else None,
    )


@dataclass(frozen=True)
class TrainEvent:
    """One executed training phase, for instrumentation."""

    round: int
    node: int
    phase: str
    data_node: int
    epochs: int
    steps: int


def _check_phase_mode(phase: PhasePlan, mode: str) -> None:
    if mode not in REWIND_MODES:
        raise ValueError(f"unknown rewind mode {mode!r}")
    if mode == "none" and phase.rewind_epochs != 0:
        raise ValueError(
            "phase/mode inconsistency: rewind epochs allocated but mode is 'none'"
        )
    if mode != "none" and phase.rewind_epochs == 0:
        raise ValueError(
            f"phase/mode inconsistency: mode {mode!r} with zero rewind epochs"
        )


def _train_batches(
    data: Dataset,
    shards: Sequence[Shard],
    views: Optional[Sequence[np.ndarray]],
) -> list[Optional[Batch]]:
    """Materialize each node's training view; None marks an empty view."""
    batches: list[Optional[Batch]] = []
    for j, shard in enumerate(shards):
        idx = shard.train if views is None else np.asarray(views[j])
        if idx.size == 0:
            batches.append(None)
        else:
            batches.append(Batch(data.features[idx], data.labels[idx]))
    return batches


def _rewind_target(
    mode: str, source: int, node: int, num_nodes: int, peer_seed: int, round: int
) -> Optional[int]:
    if mode == "none":
        return None
    if mode == "source":
        return source
    if num_nodes < 2:
        raise ValueError("random_peer rewind needs at least 2 nodes")
    draw = int(generator(mix(peer_seed, round, node)).integers(num_nodes - 1))
    return draw + 1 if draw >= node else draw  # uniform over nodes != node


def _run_phases(
    model: ModelParams,
    node: int,
    round: int,
    batches: Sequence[Optional[Batch]],
    rewind_node: Optional[int],
    phase: PhasePlan,
    cfg: TrainConfig,
    trace: Optional[list[TrainEvent]],
) -> ModelParams:
    """head on own data, rewind on the peer's, tail on own data."""
    schedule = [
        (PH_HEAD, node, phase.head_epochs),
        (PH_REWIND, rewind_node, phase.rewind_epochs),
        (PH_TAIL, node, phase.tail_epochs),
    ]
    for tag, data_node, epochs in schedule:
        if epochs == 0:
            continue
        batch = batches[data_node]
        steps = 0
        ran = 0
        if batch is not None:  # empty task view: phase is skipped
            counter = [0]

            def bump():
                counter[0] += 1

            phase_cfg = with_shuffle_seed(
                cfg, mix(cfg.shuffle_seed, round, node, tag)
            )
            model = train(model, batch, epochs, phase_cfg, on_step=bump)
            steps = counter[0]
            ran = epochs
        if trace is not None:
            trace.append(
                TrainEvent(round, node, _PHASE_NAMES[tag], data_node, ran, steps)
            )
    return model


def run_round_decentralized(
    state: FederationState,
    data: Dataset,
    shards: Sequence[Shard],
    plan: RoutingPlan,
    phase: PhasePlan,
    mode: str,
    cfg: TrainConfig,
    peer_seed: int = 0,
    views: Optional[Sequence[np.ndarray]] = None,
    trace: Optional[list[TrainEvent]] = None,
) -> FederationState:
    """One peer-to-peer round.

    Node j trains the model that arrived from plan.src[j]; in rewind mode
    "source" the rewind phase runs on that same sender's data. After the
    round, models[j] is node j's result, which plan.dest routes onward at
    the start of the next round.
    """
    n = len(state.models)
    if plan is None:
        raise ValueError("decentralized round needs a routing plan")
    if plan.num_nodes != n:
        raise ValueError("routing plan size does not match state")
    if len(shards) != n:
        raise ValueError(f"expected {n} shards, got {len(shards)}")
    t = state.round + 1
    if plan.round != t:
        raise ValueError(f"routing plan is for round {plan.round}, expected {t}")
    _check_phase_mode(phase, mode)
    batches = _train_batches(data, shards, views)
    src = plan.src
    new_models = []
    for j in range(n):
        source = src[j]
        rewind_node = _rewind_target(mode, source, j, n, peer_seed, t)
        new_models.append(
            _run_phases(
                state.models[source], j, t, batches, rewind_node, phase, cfg, trace
            )
        )
    return FederationState(round=t, models=tuple(new_models))


def centralized_peers(kind: str, num_nodes: int, round: int, seed: int) -> tuple[int, ...]:
    """Rewind-peer assignment when models come from a server, not a node.

    "ring" pairs node j with j-1 mod N; "random" draws a fresh
    permutation each round.
    """
    if kind == "ring":
        return tuple((j - 1) % num_nodes for j in range(num_nodes))
    if kind == "random":
        perm = generator(mix(seed, round)).permutation(num_nodes)
        return tuple(int(v) for v in perm)
    raise ValueError(f"unknown centralized peer kind {kind!r}")


def run_round_centralized(
    state: FederationState,
    data: Dataset,
    shards: Sequence[Shard],
    phase: PhasePlan,
    mode: str,
    cfg: TrainConfig,
    peer_seed: int = 0,
    peer_kind: str = "ring",
    views: Optional[Sequence[np.ndarray]] = None,
    trace: Optional[list[TrainEvent]] = None,
) -> FederationState:
    """One server round: broadcast, three-phase local training, average."""
    if state.server_model is None:
        raise ValueError("centralized round needs a server model")
    n = len(shards)
    _check_phase_mode(phase, mode)
    t = state.round + 1
    if mode == "source":
        peers = centralized_peers(peer_kind, n, t, peer_seed)
    else:
        peers = None
    batches = _train_batches(data, shards, views)
    results = []
    for j in range(n):
        if mode == "source":
            rewind_node = peers[j]
        else:
            rewind_node = _rewind_target(mode, -1, j, n, peer_seed, t)
        results.append(
            _run_phases(
                state.server_model, j, t, batches, rewind_node, phase, cfg, trace
            )
        )
    return FederationState(
        round=t, models=tuple(results), server_model=average_params(results)
    )


def run_standalone(
    init: ModelParams,
    data: Dataset,
    shards: Sequence[Shard],
    rounds: int,
    epochs_per_round: int,
    cfg: TrainConfig,
) -> list[ModelParams]:
    """No-communication baseline: each node trains only on its own shard.

    Node j draws shuffles from a stream derived from its id; node 0 stays
    on the base stream, so a single-node federation matches run_joint on
    that shard bit for bit.
    """
    models = []
    for shard in shards:
        node_cfg = with_shuffle_seed(
            cfg, node_stream(cfg.shuffle_seed, shard.node_id)
        )
        models.append(
            train(init, shard.train_batch(data), rounds * epochs_per_round, node_cfg)
        )
    return models


def run_joint(
    init: ModelParams,
    data: Dataset,
    joint_shard: Shard,
    rounds: int,
    epochs_per_round: int,
    cfg: TrainConfig,
) -> ModelParams:
    """Consolidated-data baseline: one model on the union of all shards."""
    return train(init, joint_shard.train_batch(data), rounds * epochs_per_round, cfg)


# ---------------------------------------------------------------------------
# experiment orchestration


@dataclass(frozen=True)
class EvalPoint:
    """Metrics snapshot at one evaluated round."""

    round: int
    fa: float
    ff: float
    pfa: float
    per_node_acc: tuple[float, ...]
    matrix: tuple[tuple[float, ...], ...]
    server_acc: Optional[float] = None


@dataclass(frozen=True)
class RunRecord:
    """Full result of one experiment: config, metric history, timing."""

    config: ExperimentConfig
    points: tuple[EvalPoint, ...]
    wall_time: float
    version: str

    def __post_init__(self):
        rounds = [p.round for p in self.points]
        if rounds != sorted(set(rounds)):
            raise ValueError("evaluation rounds must be strictly increasing")

    @property
    def final(self) -> EvalPoint:
        return self.points[-1]


def dataset_from_config(config: ExperimentConfig) -> Dataset:
    """Load or synthesize the dataset a config asks for."""
    if config.dataset == "mnist":
        if config.mnist_dir is None:
            raise ValueError(
                "mnist dataset needs mnist_dir (or FEDREWIND_MNIST_DIR)"
            )
        data = load_mnist_dir(config.mnist_dir)
    else:
        data = make_blobs(
            num_classes=config.blob_classes,
            dims=config.blob_dims,
            samples_per_class=config.blob_samples,
            spread=config.blob_spread,
            seed=mix(config.seed, STREAM_DATA),
        )
    if config.subset is not None and config.subset < len(data):
        data = subsample(data, config.subset, mix(config.seed, STREAM_SUBSET))
    return data


def _evaluate(
    models: Sequence[ModelParams],
    shards: Sequence[Shard],
    data: Dataset,
    round: int,
    server: Optional[ModelParams],
) -> EvalPoint:
    matrix = cross_accuracy(models, shards, data, round)
    rec = summarize(matrix)
    server_acc = None
    if server is not None:
        server_acc = float(single_model_row(server, shards, data, round).acc.mean())
    return EvalPoint(
        round=round,
        fa=rec.fa,
        ff=rec.ff,
        pfa=rec.pfa,
        per_node_acc=rec.per_node_acc,
        matrix=tuple(tuple(float(v) for v in row) for row in matrix.acc),
        server_acc=server_acc,
    )


def eval_rounds(total_rounds: int, eval_interval: int) -> list[int]:
    """Rounds at which metrics are recorded: 0, every interval, the last."""
    rounds = [0]
    rounds += [t for t in range(1, total_rounds + 1) if t % eval_interval == 0]
    if total_rounds > 0 and total_rounds % eval_interval != 0:
        rounds.append(total_rounds)
    return rounds


def run_experiment(
    config: ExperimentConfig,
    data: Optional[Dataset] = None,
    trace: Optional[list[TrainEvent]] = None,
) -> RunRecord:
    """Execute a full experiment: partition, train T rounds, evaluate.

    Passing a preloaded dataset skips ingestion (the subset cap is NOT
    re-applied); all derived randomness still comes from config.seed.
    """
    started = time.perf_counter()
    if data is None:
        data = dataset_from_config(config)
    seed = config.seed
    shards = dirichlet_partition(
        data,
        PartitionSpec(
            num_nodes=config.nodes,
            alpha=config.alpha,
            test_fraction=config.test_fraction,
            seed=mix(seed, STREAM_PARTITION),
        ),
    )
    arch = ArchSpec(
        input_dim=data.dim,
        hidden_dim=config.hidden_dim,
        num_classes=data.num_classes,
    )
    init = init_model(arch, mix(seed, STREAM_INIT))
    cfg = TrainConfig(
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        shuffle_seed=mix(seed, STREAM_SHUFFLE),
    )
    if config.rewind == "none":
        phase = PhasePlan(config.epochs, 0, 0)
    else:
        phase = make_phase_plan(config.epochs, config.rewind_fraction)
    schedules = None
    if config.num_tasks > 1:
        schedules = make_schedules(
            num_classes=data.num_classes,
            num_tasks=config.num_tasks,
            num_nodes=config.nodes,
            rounds_per_task=config.rounds_per_task,
            max_offset=config.max_offset,
            seed=mix(seed, STREAM_TASKS),
        )
    centralized = config.topology == "star"
    state = initial_state(init, config.nodes, centralized=centralized)
    points = [_evaluate(state.models, shards, data, 0, state.server_model)]
    want = set(eval_rounds(config.rounds, config.eval_interval))
    routing_seed = mix(seed, STREAM_ROUTING)
    peer_seed = mix(seed, STREAM_PEER)
    for t in range(1, config.rounds + 1):
        views = None
        if schedules is not None:
            views = [
                active_view(schedules[j], shards[j], data, t - 1).indices
                for j in range(config.nodes)
            ]
        if centralized:
            state = run_round_centralized(
                state,
                data,
                shards,
                phase,
                config.rewind,
                cfg,
                peer_seed=peer_seed,
                peer_kind=config.centralized_peer,
                views=views,
                trace=trace,
            )
        else:
            plan = build_routing(config.topology, config.nodes, t, routing_seed)
            state = run_round_decentralized(
                state,
                data,
                shards,
                plan,
                phase,
                config.rewind,
                cfg,
                peer_seed=peer_seed,
                views=views,
                trace=trace,
            )
        if t in want:
            points.append(_evaluate(state.models, shards, data, t, state.server_model))
    from . import __version__

    return RunRecord(
        config=config,
        points=tuple(points),
        wall_time=time.perf_counter() - started,
        version=__version__,
    )
