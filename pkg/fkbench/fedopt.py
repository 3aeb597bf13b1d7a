"""
Federated optimization algorithms.

Each algorithm is a strategy class pairing a local step rule with a server
update rule over flat parameter arrays:

- FedAvg:   G = grad f(theta)
- FedDyn:   G = grad f(theta) - lambda_n + alpha_dyn * (theta - theta_g)
- FedSAM:   G = grad f(theta + eps), eps = rho * g / ||g||
- FedGamma: G = grad f(theta + eps) - c_n + c   (control variates)
- FedSMOO:  FedDyn's rule with the gradient taken at the SAM-perturbed point
- FedSpeed: blend of plain and perturbed gradients plus a proximal correction

The server averages participants unweighted, summing in ascending client id
order so the result does not depend on scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, ClassVar, Dict, List, Optional, Sequence, Tuple, Type

import numpy as np
from loguru import logger

from .config import LocalTrainConfig
from .exceptions import ClientError, ConfigurationError, DivergenceError, LayoutError
from .models import Model, loss_and_gradient
from .numkit import NORM_FLOOR, l2_norm
from .types import Algorithm, Batch, ClientState, GradVector, ServerState

GradFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]


def sam_perturbation(g: GradVector, rho: float) -> GradVector:
    """rho * g / max(||g||, 1e-12): zero when rho or g is zero."""
    return g.with_values(_sam_direction(g.values, rho))


def _sam_direction(g: np.ndarray, rho: float) -> np.ndarray:
    norm = l2_norm(g)
    if rho == 0.0 or norm <= NORM_FLOOR:
        return np.zeros_like(g)
    return np.asarray(g * (rho / norm))


@dataclass
class LocalResult:
    """What a client sends back after local training."""

    client_id: int
    params: np.ndarray
    client_state: ClientState
    losses: List[float]
    steps: int
    control_delta: Optional[np.ndarray] = None

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.losses)) if self.losses else float("nan")


@dataclass
class StepContext:
    """Read-only inputs shared by every step of one client's local training."""

    theta_g: np.ndarray
    server: ServerState
    client: ClientState
    cfg: LocalTrainConfig


def _zeros_if_none(array: Optional[np.ndarray], size: int) -> np.ndarray:
    return np.zeros(size, dtype=np.float64) if array is None else array


class FedAlgorithm:
    """
    Base strategy: plain gradient steps and unweighted mean aggregation.

    Subclasses override `step_gradient`, `finish` and `aggregate`.
    """

    algorithm: ClassVar[Algorithm] = Algorithm.FEDAVG

    def __init__(self, cfg: LocalTrainConfig):
        self.cfg = cfg

    def step_gradient(self, ctx: StepContext, theta: np.ndarray, grad_fn: GradFn) -> Tuple[float, np.ndarray]:
        return grad_fn(theta)

    def finish(
        self, ctx: StepContext, theta_n: np.ndarray, steps: int
    ) -> Tuple[ClientState, Optional[np.ndarray]]:
        return ctx.client, None

    def aggregate(
        self, server: ServerState, results: Sequence[LocalResult], num_clients: int
    ) -> ServerState:
        mean = mean_params(results, server.global_params.size)
        return replace(
            server,
            global_params=server.global_params.with_values(mean),
            round_index=server.round_index + 1,
        )

    def _perturbed_gradient(
        self, theta: np.ndarray, grad_fn: GradFn
    ) -> Tuple[float, np.ndarray, np.ndarray]:
        """(loss at theta, grad at theta, grad at theta + eps)."""
        loss, g = grad_fn(theta)
        eps = _sam_direction(g, self.cfg.rho)
        perturbed_loss, g_sharp = grad_fn(theta + eps)
        if not np.isfinite(perturbed_loss):
            loss = perturbed_loss
        return loss, g, g_sharp


class FedAvg(FedAlgorithm):
    algorithm = Algorithm.FEDAVG


class FedSAM(FedAlgorithm):
    algorithm = Algorithm.FEDSAM

    def step_gradient(self, ctx: StepContext, theta: np.ndarray, grad_fn: GradFn) -> Tuple[float, np.ndarray]:
        loss, _, g_sharp = self._perturbed_gradient(theta, grad_fn)
        return loss, g_sharp


class FedDyn(FedAlgorithm):
    algorithm = Algorithm.FEDDYN

    def _dual(self, ctx: StepContext) -> np.ndarray:
        return _zeros_if_none(ctx.client.dyn_dual, ctx.theta_g.shape[0])

    def _regularize(self, ctx: StepContext, theta: np.ndarray, g: np.ndarray) -> np.ndarray:
        return np.asarray(g - self._dual(ctx) + self.cfg.alpha_dyn * (theta - ctx.theta_g))

    def step_gradient(self, ctx: StepContext, theta: np.ndarray, grad_fn: GradFn) -> Tuple[float, np.ndarray]:
        loss, g = grad_fn(theta)
        return loss, self._regularize(ctx, theta, g)

    def finish(
        self, ctx: StepContext, theta_n: np.ndarray, steps: int
    ) -> Tuple[ClientState, Optional[np.ndarray]]:
        dual = self._dual(ctx) - self.cfg.alpha_dyn * (theta_n - ctx.theta_g)
        return replace(ctx.client, dyn_dual=dual), None

    def aggregate(
        self, server: ServerState, results: Sequence[LocalResult], num_clients: int
    ) -> ServerState:
        alpha = self.cfg.alpha_dyn
        if alpha == 0.0:
            raise ConfigurationError(
                f"{self.algorithm.value} requires alpha_dyn > 0 for the server update"
            )
        previous = server.global_params.values
        mean = mean_params(results, previous.shape[0])
        drift = np.zeros_like(previous)
        for result in sorted(results, key=lambda r: r.client_id):
            drift += result.params - previous
        h = _zeros_if_none(server.dyn_h, previous.shape[0]) - alpha * (drift / num_clients)
        theta = mean - h / alpha
        return replace(
            server,
            global_params=server.global_params.with_values(theta),
            dyn_h=h,
            round_index=server.round_index + 1,
        )


class FedSMOO(FedDyn):
    """FedDyn's dynamic regularizer applied to the SAM-perturbed gradient."""

    algorithm = Algorithm.FEDSMOO

    def step_gradient(self, ctx: StepContext, theta: np.ndarray, grad_fn: GradFn) -> Tuple[float, np.ndarray]:
        loss, _, g_sharp = self._perturbed_gradient(theta, grad_fn)
        return loss, self._regularize(ctx, theta, g_sharp)


class FedGamma(FedAlgorithm):
    algorithm = Algorithm.FEDGAMMA

    def step_gradient(self, ctx: StepContext, theta: np.ndarray, grad_fn: GradFn) -> Tuple[float, np.ndarray]:
        size = ctx.theta_g.shape[0]
        loss, _, g_sharp = self._perturbed_gradient(theta, grad_fn)
        local = _zeros_if_none(ctx.client.control_variate, size)
        shared = _zeros_if_none(ctx.server.global_control, size)
        return loss, np.asarray(g_sharp - local + shared)

    def finish(
        self, ctx: StepContext, theta_n: np.ndarray, steps: int
    ) -> Tuple[ClientState, Optional[np.ndarray]]:
        size = ctx.theta_g.shape[0]
        old = _zeros_if_none(ctx.client.control_variate, size)
        shared = _zeros_if_none(ctx.server.global_control, size)
        new = old - shared + (ctx.theta_g - theta_n) / (steps * self.cfg.learning_rate)
        return replace(ctx.client, control_variate=new), new - old

    def aggregate(
        self, server: ServerState, results: Sequence[LocalResult], num_clients: int
    ) -> ServerState:
        size = server.global_params.size
        mean = mean_params(results, size)
        delta = np.zeros(size, dtype=np.float64)
        for result in sorted(results, key=lambda r: r.client_id):
            if result.control_delta is not None:
                delta += result.control_delta
        control = _zeros_if_none(server.global_control, size) + delta / num_clients
        return replace(
            server,
            global_params=server.global_params.with_values(mean),
            global_control=control,
            round_index=server.round_index + 1,
        )


class FedSpeed(FedAlgorithm):
    algorithm = Algorithm.FEDSPEED

    def step_gradient(self, ctx: StepContext, theta: np.ndarray, grad_fn: GradFn) -> Tuple[float, np.ndarray]:
        cfg = self.cfg
        correction = _zeros_if_none(ctx.client.speed_correction, ctx.theta_g.shape[0])
        loss, g_plain, g_sharp = self._perturbed_gradient(theta, grad_fn)
        blended = cfg.merge_alpha * g_sharp + (1.0 - cfg.merge_alpha) * g_plain
        return loss, np.asarray(blended + cfg.prox_weight * (theta - ctx.theta_g) - correction)

    def finish(
        self, ctx: StepContext, theta_n: np.ndarray, steps: int
    ) -> Tuple[ClientState, Optional[np.ndarray]]:
        correction = _zeros_if_none(ctx.client.speed_correction, ctx.theta_g.shape[0])
        updated = correction - self.cfg.prox_weight * (theta_n - ctx.theta_g)
        return replace(ctx.client, speed_correction=updated), None


STRATEGIES: Dict[Algorithm, Type[FedAlgorithm]] = {
    cls.algorithm: cls for cls in (FedAvg, FedDyn, FedSAM, FedGamma, FedSMOO, FedSpeed)
}


def get_strategy(cfg: LocalTrainConfig) -> FedAlgorithm:
    return STRATEGIES[Algorithm.parse(cfg.algorithm)](cfg)


def mean_params(results: Sequence[LocalResult], size: int) -> np.ndarray:
    """Unweighted mean of participant parameters, summed in ascending client id."""
    if not results:
        raise ConfigurationError("server update needs at least one participant")
    total = np.zeros(size, dtype=np.float64)
    for result in sorted(results, key=lambda r: r.client_id):
        if result.params.shape != (size,):
            raise LayoutError(
                f"client {result.client_id} returned {result.params.shape[0]} parameters, "
                f"expected {size}"
            )
        total += result.params
    return total / len(results)


# ==================== Operations ====================


def local_train(
    model: Model,
    server: ServerState,
    client: ClientState,
    data: Batch,
    cfg: LocalTrainConfig,
    rng: np.random.Generator,
    round_index: Optional[int] = None,
) -> LocalResult:
    """
    Run E epochs of mini-batch steps from the broadcast global model.

    Each epoch visits the client's samples in a fresh `rng.permutation`;
    the last batch of an epoch may be short.

    Args:
        model: Model whose spec and layout the parameters follow
        server: Read-only snapshot of the server state
        client: This client's state (not modified; an updated copy is returned)
        data: All of the client's local samples
        cfg: Local training hyperparameters
        rng: The client's private stream for this round
        round_index: Round being executed, used to tag divergence errors

    Raises:
        ClientError: If the client has no samples.
        DivergenceError: If a loss evaluation is not finite.
    """
    n = len(data)
    if n == 0:
        raise ClientError(f"client {client.client_id} has no local data", client.client_id)

    strategy = get_strategy(cfg)
    theta_g = server.global_params.values
    ctx = StepContext(theta_g=theta_g, server=server, client=client, cfg=cfg)
    theta = theta_g.copy()
    losses: List[float] = []
    steps = 0

    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = Batch(features=data.features[idx], labels=data.labels[idx])

            def grad_fn(values: np.ndarray, batch: Batch = batch) -> Tuple[float, np.ndarray]:
                return loss_and_gradient(model, values, batch)

            loss, direction = strategy.step_gradient(ctx, theta, grad_fn)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss on client {client.client_id} at step {steps} "
                    f"of round {round_index}",
                    round_index=round_index,
                    client_id=client.client_id,
                )
            theta = theta - cfg.learning_rate * direction
            losses.append(loss)
            steps += 1

    if not np.all(np.isfinite(theta)):
        raise DivergenceError(
            f"non-finite parameters on client {client.client_id} in round {round_index}",
            round_index=round_index,
            client_id=client.client_id,
        )

    new_state, delta = strategy.finish(ctx, theta, steps)
    logger.opt(lazy=True).debug(
        "client {} round {}: {} steps, mean loss {:.4f}",
        lambda: client.client_id,
        lambda: round_index,
        lambda: steps,
        lambda: float(np.mean(losses)),
    )
    return LocalResult(
        client_id=client.client_id,
        params=theta,
        client_state=new_state,
        losses=losses,
        steps=steps,
        control_delta=delta,
    )


def server_update(
    cfg: LocalTrainConfig,
    server: ServerState,
    results: Sequence[LocalResult],
    num_clients: int,
) -> ServerState:
    """
    Aggregate participant returns into the next server state.

    Raises:
        LayoutError: If a participant's parameters have the wrong length.
        ConfigurationError: If FedDyn/FedSMOO run with alpha_dyn = 0.
    """
    strategy = get_strategy(cfg)
    updated = strategy.aggregate(server, results, num_clients)
    logger.debug(
        f"{strategy.algorithm.value} aggregated {len(results)} clients "
        f"into round {updated.round_index}"
    )
    return updated
