"""Round engine: phase plans, routing, rounds, baselines, orchestration."""
import math

import numpy as np
import pytest

from fedrewind.config import ExperimentConfig
from fedrewind.data import PartitionSpec, dirichlet_partition, joint_view, make_blobs
from fedrewind.federation import (
    PH_HEAD,
    PhasePlan,
    RoutingPlan,
    build_routing,
    centralized_peers,
    eval_rounds,
    initial_state,
    make_phase_plan,
    run_experiment,
    run_joint,
    run_round_centralized,
    run_round_decentralized,
    run_standalone,
)
from fedrewind.nn import ArchSpec, TrainConfig, average_params, init_model, train, with_shuffle_seed
from fedrewind.seeding import mix

# ---------------------------------------------------------------------------
# phase plans


def test_phase_plan_ten_epochs_tenth_fraction():
    plan = make_phase_plan(10, 0.1)
    assert (plan.head_epochs, plan.rewind_epochs, plan.tail_epochs) == (8, 1, 1)


def test_phase_plan_disabled():
    plan = make_phase_plan(10, 0.0)
    assert (plan.head_epochs, plan.rewind_epochs, plan.tail_epochs) == (10, 0, 0)


def test_phase_plan_minimum_budget():
    plan = make_phase_plan(3, 0.1)
    assert (plan.head_epochs, plan.rewind_epochs, plan.tail_epochs) == (1, 1, 1)


def test_phase_plan_desk_default():
    plan = make_phase_plan(5, 0.2)
    assert (plan.head_epochs, plan.rewind_epochs, plan.tail_epochs) == (3, 1, 1)


def test_phase_plan_budget_neutral():
    for epochs in range(3, 12):
        for frac in (0.1, 0.2, 0.3, 0.4):
            try:
                plan = make_phase_plan(epochs, frac)
            except ValueError:
                continue  # split would starve the head phase
            assert plan.total == epochs
            assert min(plan.head_epochs, plan.rewind_epochs, plan.tail_epochs) >= 1


def test_phase_plan_rejects_small_budget_with_rewind():
    with pytest.raises(ValueError):
        make_phase_plan(2, 0.1)


def test_phase_plan_rejects_no_head():
    # rewind = tail = 2 would leave zero head epochs
    with pytest.raises(ValueError):
        make_phase_plan(4, 0.5)


def test_phase_plan_rejects_bad_fraction():
    with pytest.raises(ValueError):
        make_phase_plan(10, 0.6)
    with pytest.raises(ValueError):
        make_phase_plan(10, -0.1)


# ---------------------------------------------------------------------------
# routing


def test_cyclic_ring():
    plan = build_routing("cyclic", 3, round=1, seed=0)
    assert plan.dest == (1, 2, 0)
    assert plan.src == (2, 0, 1)


def test_cyclic_same_every_round():
    a = build_routing("cyclic", 5, round=1, seed=9)
    b = build_routing("cyclic", 5, round=7, seed=1)
    assert a.dest == b.dest


def test_random_routing_is_bijection():
    for t in range(1, 20):
        plan = build_routing("random", 10, round=t, seed=4)
        assert sorted(plan.dest) == list(range(10))
        # src really is the inverse map
        for j in range(10):
            assert plan.src[plan.dest[j]] == j


def test_random_routing_deterministic():
    a = build_routing("random", 8, round=3, seed=5)
    b = build_routing("random", 8, round=3, seed=5)
    c = build_routing("random", 8, round=4, seed=5)
    d = build_routing("random", 8, round=3, seed=6)
    assert a.dest == b.dest
    assert a.dest != c.dest or a.dest != d.dest


def test_random_routing_varies_with_round():
    plans = {build_routing("random", 6, round=t, seed=2).dest for t in range(1, 30)}
    assert len(plans) > 10


def test_star_has_no_plan():
    assert build_routing("star", 4, round=1, seed=0) is None


def test_routing_rejects_small_federation():
    with pytest.raises(ValueError):
        build_routing("cyclic", 1, round=1, seed=0)


def test_routing_rejects_unknown_kind():
    with pytest.raises(ValueError):
        build_routing("mesh", 4, round=1, seed=0)


def test_routing_plan_rejects_non_permutation():
    with pytest.raises(ValueError):
        RoutingPlan(round=1, dest=(0, 0, 2))


def test_centralized_peers_ring():
    assert centralized_peers("ring", 4, round=1, seed=0) == (3, 0, 1, 2)


def test_centralized_peers_random_is_deterministic_permutation():
    a = centralized_peers("random", 6, round=2, seed=3)
    b = centralized_peers("random", 6, round=2, seed=3)
    assert a == b
    assert sorted(a) == list(range(6))


# ---------------------------------------------------------------------------
# shared fixtures


def small_world(n_nodes=4, seed=0, hidden=4):
    data = make_blobs(4, 2, 40, 0.08, seed=seed)
    shards = dirichlet_partition(data, PartitionSpec(n_nodes, alpha=1.0, seed=seed))
    arch = ArchSpec(input_dim=2, hidden_dim=hidden, num_classes=4)
    init = init_model(arch, seed=seed + 50)
    cfg = TrainConfig(learning_rate=0.2, batch_size=16, shuffle_seed=77)
    return data, shards, init, cfg


def phase_seed(cfg, t, node, tag):
    return mix(cfg.shuffle_seed, t, node, tag)


# ---------------------------------------------------------------------------
# decentralized rounds


def test_decentralized_mode_none_equals_plain_loop():
    # independent reference: receive from ring predecessor, train E epochs
    data, shards, init, cfg = small_world()
    n, epochs = 4, 3
    phase = PhasePlan(epochs, 0, 0)
    state = initial_state(init, n)
    reference = [init] * n
    for t in range(1, 4):
        plan = build_routing("cyclic", n, round=t, seed=1)
        state = run_round_decentralized(
            state, data, shards, plan, phase, "none", cfg
        )
        incoming = [reference[(j - 1) % n] for j in range(n)]
        reference = [
            train(
                incoming[j],
                shards[j].train_batch(data),
                epochs,
                with_shuffle_seed(cfg, phase_seed(cfg, t, j, PH_HEAD)),
            )
            for j in range(n)
        ]
        for j in range(n):
            assert np.array_equal(state.models[j].theta, reference[j].theta)


def test_decentralized_random_mode_none_equals_plain_loop():
    data, shards, init, cfg = small_world()
    n, epochs = 4, 2
    phase = PhasePlan(epochs, 0, 0)
    state = initial_state(init, n)
    reference = [init] * n
    for t in range(1, 4):
        plan = build_routing("random", n, round=t, seed=11)
        state = run_round_decentralized(
            state, data, shards, plan, phase, "none", cfg
        )
        incoming = [reference[plan.src[j]] for j in range(n)]
        reference = [
            train(
                incoming[j],
                shards[j].train_batch(data),
                epochs,
                with_shuffle_seed(cfg, phase_seed(cfg, t, j, PH_HEAD)),
            )
            for j in range(n)
        ]
        for j in range(n):
            assert np.array_equal(state.models[j].theta, reference[j].theta)


def test_decentralized_deterministic():
    data, shards, init, cfg = small_world()
    phase = make_phase_plan(4, 0.25)
    plan = build_routing("cyclic", 4, round=1, seed=0)
    a = run_round_decentralized(initial_state(init, 4), data, shards, plan, phase, "source", cfg)
    b = run_round_decentralized(initial_state(init, 4), data, shards, plan, phase, "source", cfg)
    for x, y in zip(a.models, b.models):
        assert np.array_equal(x.theta, y.theta)


def test_decentralized_conserves_model_count():
    data, shards, init, cfg = small_world()
    phase = make_phase_plan(3, 0.2)
    state = initial_state(init, 4)
    for t in range(1, 5):
        plan = build_routing("random", 4, round=t, seed=3)
        state = run_round_decentralized(state, data, shards, plan, phase, "source", cfg)
        assert len(state.models) == 4
        assert state.round == t


def test_rewind_locality_source_mode():
    data, shards, init, cfg = small_world()
    phase = make_phase_plan(4, 0.25)
    trace = []
    for t, seed in ((1, 5), (2, 5)):
        plan = build_routing("random", 4, round=t, seed=seed)
        state = initial_state(init, 4) if t == 1 else state
        state = run_round_decentralized(
            state, data, shards, plan, phase, "source", cfg, trace=trace
        )
        for ev in trace:
            if ev.round == t and ev.phase == "rewind":
                assert ev.data_node == plan.src[ev.node]


def test_head_and_tail_use_own_data():
    data, shards, init, cfg = small_world()
    phase = make_phase_plan(4, 0.25)
    plan = build_routing("cyclic", 4, round=1, seed=0)
    trace = []
    run_round_decentralized(
        initial_state(init, 4), data, shards, plan, phase, "source", cfg, trace=trace
    )
    for ev in trace:
        if ev.phase in ("head", "tail"):
            assert ev.data_node == ev.node


def test_epoch_budget_invariant_across_modes():
    data, shards, init, cfg = small_world()
    epochs = 5
    for mode, phase in (
        ("none", PhasePlan(epochs, 0, 0)),
        ("source", make_phase_plan(epochs, 0.2)),
        ("random_peer", make_phase_plan(epochs, 0.2)),
    ):
        trace = []
        plan = build_routing("cyclic", 4, round=1, seed=0)
        run_round_decentralized(
            initial_state(init, 4), data, shards, plan, phase, mode, cfg, trace=trace
        )
        for node in range(4):
            spent = sum(ev.epochs for ev in trace if ev.node == node)
            assert spent == epochs


def test_step_counts_match_shard_sizes():
    data, shards, init, cfg = small_world()
    phase = make_phase_plan(4, 0.25)
    plan = build_routing("cyclic", 4, round=1, seed=0)
    trace = []
    run_round_decentralized(
        initial_state(init, 4), data, shards, plan, phase, "source", cfg, trace=trace
    )
    for ev in trace:
        shard_n = shards[ev.data_node].train.size
        assert ev.steps == ev.epochs * math.ceil(shard_n / cfg.batch_size)


def test_random_peer_rewinds_on_other_nodes_data():
    data, shards, init, cfg = small_world()
    phase = make_phase_plan(4, 0.25)
    seen = set()
    state = initial_state(init, 4)
    for t in range(1, 6):
        trace = []
        plan = build_routing("cyclic", 4, round=t, seed=0)
        state = run_round_decentralized(
            state, data, shards, plan, phase, "random_peer", cfg,
            peer_seed=123, trace=trace,
        )
        for ev in trace:
            if ev.phase == "rewind":
                assert ev.data_node != ev.node
                seen.add((ev.node, ev.data_node))
    assert len(seen) > 4  # targets actually vary across rounds


def test_phase_mode_inconsistency_rejected():
    data, shards, init, cfg = small_world()
    plan = build_routing("cyclic", 4, round=1, seed=0)
    state = initial_state(init, 4)
    with pytest.raises(ValueError, match="inconsisten"):
        run_round_decentralized(
            state, data, shards, plan, PhasePlan(3, 1, 1), "none", cfg
        )
    with pytest.raises(ValueError, match="inconsisten"):
        run_round_decentralized(
            state, data, shards, plan, PhasePlan(5, 0, 0), "source", cfg
        )


def test_round_mismatch_rejected():
    data, shards, init, cfg = small_world()
    plan = build_routing("cyclic", 4, round=5, seed=0)
    with pytest.raises(ValueError, match="round"):
        run_round_decentralized(
            initial_state(init, 4), data, shards, plan, PhasePlan(2, 0, 0), "none", cfg
        )


def test_shard_count_mismatch_rejected():
    data, shards, init, cfg = small_world()
    plan = build_routing("cyclic", 4, round=1, seed=0)
    with pytest.raises(ValueError, match="shards"):
        run_round_decentralized(
            initial_state(init, 4), data, shards[:3], plan, PhasePlan(2, 0, 0), "none", cfg
        )


# ---------------------------------------------------------------------------
# centralized rounds


def test_centralized_mode_none_equals_plain_fedavg():
    data, shards, init, cfg = small_world()
    n, epochs = 4, 3
    phase = PhasePlan(epochs, 0, 0)
    state = initial_state(init, n, centralized=True)
    server_ref = init
    for t in range(1, 4):
        state = run_round_centralized(state, data, shards, phase, "none", cfg)
        locals_ref = [
            train(
                server_ref,
                shards[j].train_batch(data),
                epochs,
                with_shuffle_seed(cfg, phase_seed(cfg, t, j, PH_HEAD)),
            )
            for j in range(n)
        ]
        server_ref = average_params(locals_ref)
        assert np.array_equal(state.server_model.theta, server_ref.theta)
        for j in range(n):
            assert np.array_equal(state.models[j].theta, locals_ref[j].theta)


def test_centralized_server_is_mean_of_results():
    data, shards, init, cfg = small_world()
    phase = make_phase_plan(3, 0.2)
    state = run_round_centralized(
        initial_state(init, 4, centralized=True), data, shards, phase, "source", cfg
    )
    stacked = np.stack([m.theta for m in state.models])
    np.testing.assert_allclose(state.server_model.theta, stacked.mean(axis=0), atol=1e-15)


def test_centralized_ring_peer_two_nodes():
    data, shards, init, cfg = small_world(n_nodes=2)
    phase = make_phase_plan(3, 0.2)
    trace = []
    run_round_centralized(
        initial_state(init, 2, centralized=True),
        data, shards[:2], phase, "source", cfg,
        peer_kind="ring", trace=trace,
    )
    rewinds = {ev.node: ev.data_node for ev in trace if ev.phase == "rewind"}
    assert rewinds == {0: 1, 1: 0}


def test_centralized_needs_server_model():
    data, shards, init, cfg = small_world()
    with pytest.raises(ValueError, match="server"):
        run_round_centralized(
            initial_state(init, 4, centralized=False),
            data, shards, PhasePlan(2, 0, 0), "none", cfg,
        )


def test_centralized_single_node_equals_joint_round():
    data, shards, init, cfg = small_world()
    one = [shards[0]]
    state = run_round_centralized(
        initial_state(init, 1, centralized=True), data, one, PhasePlan(3, 0, 0), "none", cfg
    )
    want = train(
        init,
        shards[0].train_batch(data),
        3,
        with_shuffle_seed(cfg, phase_seed(cfg, 1, 0, PH_HEAD)),
    )
    assert np.array_equal(state.server_model.theta, want.theta)


# ---------------------------------------------------------------------------
# baselines


def test_standalone_single_node_matches_joint():
    data, shards, init, cfg = small_world()
    one = [shards[0]]
    alone = run_standalone(init, data, one, rounds=2, epochs_per_round=3, cfg=cfg)
    joint = run_joint(init, data, shards[0], rounds=2, epochs_per_round=3, cfg=cfg)
    assert np.array_equal(alone[0].theta, joint.theta)


def test_standalone_models_differ_across_nodes():
    data, shards, init, cfg = small_world()
    models = run_standalone(init, data, shards, rounds=1, epochs_per_round=2, cfg=cfg)
    assert len(models) == 4
    assert not np.array_equal(models[0].theta, models[1].theta)


def test_joint_is_exactly_train():
    data, shards, init, cfg = small_world()
    joint = joint_view(shards)
    out = run_joint(init, data, joint, rounds=3, epochs_per_round=2, cfg=cfg)
    want = train(init, joint.train_batch(data), 6, cfg)
    assert np.array_equal(out.theta, want.theta)


def test_joint_zero_rounds_returns_init():
    data, shards, init, cfg = small_world()
    out = run_joint(init, data, joint_view(shards), rounds=0, epochs_per_round=5, cfg=cfg)
    assert np.array_equal(out.theta, init.theta)


# ---------------------------------------------------------------------------
# experiment orchestration


BLOB_CFG = dict(
    dataset="blobs", blob_classes=4, blob_dims=2, blob_samples=40,
    blob_spread=0.08, nodes=4, epochs=3, rewind_fraction=0.2,
    alpha=1.0, learning_rate=0.3, batch_size=16, eval_interval=2,
)


def test_eval_rounds_cadence():
    assert eval_rounds(15, 5) == [0, 5, 10, 15]
    assert eval_rounds(7, 3) == [0, 3, 6, 7]
    assert eval_rounds(0, 5) == [0]
    assert eval_rounds(4, 1) == [0, 1, 2, 3, 4]


def test_experiment_zero_rounds():
    cfg = ExperimentConfig(**BLOB_CFG, rounds=0, seed=1)
    rec = run_experiment(cfg)
    assert [p.round for p in rec.points] == [0]


def test_experiment_point_cadence_matches_formula():
    cfg = ExperimentConfig(**BLOB_CFG, rounds=7, seed=1)
    rec = run_experiment(cfg)
    t, ei = 7, 2
    want = t // ei + (1 if t % ei else 0) + 1
    assert len(rec.points) == want
    assert [p.round for p in rec.points] == [0, 2, 4, 6, 7]


def test_experiment_deterministic():
    cfg = ExperimentConfig(**BLOB_CFG, rounds=4, seed=9)
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    assert [p.matrix for p in a.points] == [p.matrix for p in b.points]


def test_experiment_seed_changes_outcome():
    a = run_experiment(ExperimentConfig(**BLOB_CFG, rounds=4, seed=1))
    b = run_experiment(ExperimentConfig(**BLOB_CFG, rounds=4, seed=2))
    assert a.final.matrix != b.final.matrix


def test_rewind_modes_share_round_zero_then_diverge():
    on = run_experiment(
        ExperimentConfig(**BLOB_CFG, rounds=4, seed=3, rewind="source")
    )
    off = run_experiment(
        ExperimentConfig(**BLOB_CFG, rounds=4, seed=3, rewind="none")
    )
    assert on.points[0].matrix == off.points[0].matrix
    assert on.final.matrix != off.final.matrix


def test_star_experiment_reports_server_accuracy():
    cfg = ExperimentConfig(**BLOB_CFG, rounds=2, seed=4, topology="star")
    rec = run_experiment(cfg)
    for p in rec.points:
        assert p.server_acc is not None
        assert 0.0 <= p.server_acc <= 1.0


def test_decentralized_experiment_has_no_server_metric():
    cfg = ExperimentConfig(**BLOB_CFG, rounds=2, seed=4)
    rec = run_experiment(cfg)
    assert all(p.server_acc is None for p in rec.points)


def test_trace_budget_over_full_experiment():
    trace = []
    cfg = ExperimentConfig(**BLOB_CFG, rounds=3, seed=5, rewind="source")
    run_experiment(cfg, trace=trace)
    for t in range(1, 4):
        for node in range(4):
            spent = sum(ev.epochs for ev in trace if ev.round == t and ev.node == node)
            assert spent == 3
