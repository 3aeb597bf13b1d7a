import numpy as np
import pytest
from loguru import logger

from fkbench.config import LocalTrainConfig
from fkbench.exceptions import ClientError, ConfigurationError, DivergenceError, LayoutError
from fkbench.fedopt import (
    STRATEGIES,
    FedGamma,
    LocalResult,
    StepContext,
    local_train,
    sam_perturbation,
    server_update,
)
from fkbench.models import loss_and_gradient
from fkbench.types import Algorithm, Batch, ClientState, ParamVector, ServerState

SCALAR_LAYOUT = (("w", (1,)),)


def _scalar_server(value, **kwargs):
    return ServerState(global_params=ParamVector(values=np.array([value]), layout=SCALAR_LAYOUT), **kwargs)


def _result(client_id, values, **kwargs):
    return LocalResult(
        client_id=client_id,
        params=np.asarray(values, dtype=np.float64),
        client_state=ClientState(client_id=client_id),
        losses=[0.0],
        steps=1,
        **kwargs,
    )


def _train(model, batch, seed=7, **cfg):
    config = LocalTrainConfig(epochs=2, batch_size=5, learning_rate=0.1, **cfg)
    server = ServerState(global_params=model.params.copy())
    return local_train(
        model, server, ClientState(client_id=0), batch, config, np.random.default_rng(seed), round_index=1
    )


# ==================== SAM ====================


def test_sam_perturbation_examples():
    g = ParamVector(values=np.array([3.0, 4.0]), layout=(("w", (2,)),))
    assert sam_perturbation(g, 1.0).values == pytest.approx([0.6, 0.8])
    assert not np.any(sam_perturbation(g, 0.0).values)
    assert not np.any(sam_perturbation(g.with_values(np.zeros(2)), 0.5).values)


def test_sam_perturbation_has_norm_rho():
    g = ParamVector(values=np.random.default_rng(0).normal(size=10), layout=(("w", (10,)),))
    assert np.linalg.norm(sam_perturbation(g, 0.05).values) == pytest.approx(0.05)


# ==================== Server update ====================


def test_fedavg_mean_of_two():
    server = ServerState(global_params=ParamVector(values=np.zeros(2), layout=(("w", (2,)),)))
    updated = server_update(LocalTrainConfig(), server, [_result(0, [0.0, 2.0]), _result(1, [4.0, 6.0])], 10)
    assert updated.global_params.values.tolist() == [2.0, 4.0]
    assert updated.round_index == 1


@pytest.mark.parametrize("algorithm", list(Algorithm))
def test_identical_returns_are_a_fixed_point(algorithm):
    server = _scalar_server(1.25)
    results = [_result(i, [1.25], control_delta=np.zeros(1)) for i in range(3)]
    updated = server_update(LocalTrainConfig(algorithm=algorithm), server, results, 10)
    assert updated.global_params.values.tolist() == [1.25]


def test_feddyn_server_hand_trace():
    cfg = LocalTrainConfig(algorithm=Algorithm.FEDDYN, alpha_dyn=0.1)
    updated = server_update(cfg, _scalar_server(0.0), [_result(0, [1.0]), _result(1, [3.0])], 4)

    h = 0.0 - 0.1 * (((1.0 - 0.0) + (3.0 - 0.0)) / 4)
    theta = (1.0 + 3.0) / 2 - h / 0.1
    assert updated.dyn_h.tolist() == [h] == [-0.1]
    assert updated.global_params.values.tolist() == [theta] == [3.0]


def test_feddyn_server_requires_positive_alpha():
    cfg = LocalTrainConfig(algorithm=Algorithm.FEDDYN, alpha_dyn=0.0)
    with pytest.raises(ConfigurationError):
        server_update(cfg, _scalar_server(0.0), [_result(0, [1.0])], 4)


def test_fedgamma_control_variate_hand_trace():
    cfg = LocalTrainConfig(algorithm=Algorithm.FEDGAMMA, learning_rate=0.1)
    server = _scalar_server(1.0, global_control=np.array([0.05]))
    client = ClientState(client_id=3, control_variate=np.array([0.2]))
    ctx = StepContext(theta_g=server.global_params.values, server=server, client=client, cfg=cfg)

    state, delta = FedGamma(cfg).finish(ctx, np.array([0.6]), steps=4)
    expected = 0.2 - 0.05 + (1.0 - 0.6) / (4 * 0.1)
    assert state.control_variate.tolist() == [expected]
    assert delta.tolist() == [expected - 0.2]

    other = 0.5
    updated = server_update(
        cfg,
        server,
        [_result(3, [0.6], control_delta=delta), _result(1, [0.8], control_delta=np.array([other]))],
        10,
    )
    assert updated.global_control.tolist() == [0.05 + (other + (expected - 0.2)) / 10]
    assert updated.global_params.values.tolist() == [(0.8 + 0.6) / 2]


def test_server_update_ignores_participant_order():
    cfg = LocalTrainConfig(algorithm=Algorithm.FEDDYN)
    rng = np.random.default_rng(1)
    server = ServerState(global_params=ParamVector(values=rng.normal(size=5), layout=(("w", (5,)),)))
    results = [_result(i, rng.normal(size=5)) for i in range(6)]
    forward = server_update(cfg, server, results, 20)
    shuffled = server_update(cfg, server, results[::-1], 20)
    assert np.array_equal(forward.global_params.values, shuffled.global_params.values)


def test_server_update_rejects_wrong_length():
    with pytest.raises(LayoutError):
        server_update(LocalTrainConfig(), _scalar_server(0.0), [_result(0, [1.0, 2.0])], 2)


def test_strategies_cover_every_algorithm():
    assert set(STRATEGIES) == set(Algorithm)


# ==================== Local training ====================


def test_empty_client_raises(small_kan):
    empty = Batch(features=np.zeros((0, 4)), labels=np.zeros(0, dtype=np.int64))
    with pytest.raises(ClientError):
        _train(small_kan, empty)


def test_non_finite_loss_raises_divergence(small_kan):
    bad = Batch(features=np.full((4, 4), np.nan), labels=np.zeros(4, dtype=np.int64))
    with pytest.raises(DivergenceError) as info:
        _train(small_kan, bad)
    assert info.value.round_index == 1
    assert info.value.client_id == 0


@pytest.mark.parametrize(
    "algorithm, overrides",
    [
        (Algorithm.FEDDYN, {"alpha_dyn": 0.0}),
        (Algorithm.FEDSAM, {"rho": 0.0}),
        (Algorithm.FEDGAMMA, {"rho": 0.0}),
        (Algorithm.FEDSPEED, {"rho": 0.0, "prox_weight": 0.0, "merge_alpha": 0.0}),
    ],
)
def test_reductions_to_fedavg(small_kan, client_batch, algorithm, overrides):
    baseline = _train(small_kan, client_batch)
    reduced = _train(small_kan, client_batch, algorithm=algorithm, **overrides)
    assert np.array_equal(baseline.params, reduced.params)
    assert baseline.losses == reduced.losses


def test_fedsmoo_without_perturbation_matches_feddyn(small_mlp, client_batch):
    dyn = _train(small_mlp, client_batch, algorithm=Algorithm.FEDDYN, alpha_dyn=0.05)
    smoo = _train(small_mlp, client_batch, algorithm=Algorithm.FEDSMOO, alpha_dyn=0.05, rho=0.0)
    assert np.array_equal(dyn.params, smoo.params)


def test_feddyn_dual_after_first_round(small_kan, client_batch):
    result = _train(small_kan, client_batch, algorithm=Algorithm.FEDDYN, alpha_dyn=0.1)
    expected = -0.1 * (result.params - small_kan.params.values)
    assert np.array_equal(result.client_state.dyn_dual, expected)


def test_fedgamma_returns_control_delta(small_kan, client_batch):
    result = _train(small_kan, client_batch, algorithm=Algorithm.FEDGAMMA)
    assert result.steps == 10
    assert np.array_equal(result.control_delta, result.client_state.control_variate)


def test_client_summary_is_logged(small_kan, client_batch):
    messages = []
    logger.enable("fkbench")
    sink = logger.add(messages.append, level="DEBUG", format="{message}")
    try:
        result = _train(small_kan, client_batch)
    finally:
        logger.remove(sink)
        logger.disable("fkbench")
    expected = f"client 0 round 1: 10 steps, mean loss {np.mean(result.losses):.4f}"
    assert any(expected in str(message) for message in messages)


def test_local_train_does_not_mutate_inputs(small_kan, client_batch):
    before = small_kan.params.values.copy()
    result = _train(small_kan, client_batch, algorithm=Algorithm.FEDSPEED)
    assert np.array_equal(small_kan.params.values, before)
    assert result.client_state.speed_correction is not None


def test_single_client_matches_centralized_sgd(small_kan, client_batch):
    lr, batch_size, rounds = 0.05, 3, 25
    cfg = LocalTrainConfig(epochs=1, batch_size=batch_size, learning_rate=lr)
    server = ServerState(global_params=small_kan.params.copy())
    theta = small_kan.params.values.copy()
    steps = 0

    for round_index in range(1, rounds + 1):
        result = local_train(
            small_kan,
            server,
            ClientState(client_id=0),
            client_batch,
            cfg,
            np.random.default_rng([round_index, 0]),
            round_index=round_index,
        )
        server = server_update(cfg, server, [result], 1)

        order = np.random.default_rng([round_index, 0]).permutation(len(client_batch))
        for start in range(0, len(client_batch), batch_size):
            idx = order[start : start + batch_size]
            batch = Batch(features=client_batch.features[idx], labels=client_batch.labels[idx])
            _, grad = loss_and_gradient(small_kan, theta, batch)
            theta = theta - lr * grad
            steps += 1

        assert np.max(np.abs(server.global_params.values - theta)) <= 1e-12

    assert steps == 200
