"""
Federated simulation driver.

One coordinator runs rounds in order: sample participants, broadcast a
read-only snapshot of the global model, train participants on a worker pool,
join, aggregate, evaluate on the shared test set. Every random draw comes
from a stream keyed by (seed, purpose, ...ids), so results do not depend on
the worker count or on which other clients were sampled.
"""

from __future__ import annotations

import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .config import DatasetConfig, FederationConfig, resolve_threads
from .datakit import (
    dirichlet_partition,
    iid_partition,
    load_dataset,
    prepare_splits,
    synthetic_blobs,
)
from .exceptions import ConfigurationError, DivergenceError, RunFailedError
from .fedopt import LocalResult, local_train, server_update
from .models import Model, build_model, forward
from .numkit import softmax_cross_entropy
from .types import (
    ClientState,
    Dataset,
    ModelKind,
    ParamVector,
    PartitionMode,
    PartitionPlan,
    RoundRecord,
    RunReport,
    SeedRun,
    ServerState,
)

# Stream tags keep the purposes of random draws independent of each other.
STREAM_DATA = 1
STREAM_SPLIT = 2
STREAM_PARTITION = 3
STREAM_MODEL = 4
STREAM_SAMPLE = 5
STREAM_CLIENT = 6

CONVERGENCE_TAIL = 10
EVAL_CHUNK = 512


def stream(seed: int, tag: int, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, tag, *keys)."""
    return np.random.default_rng(np.random.SeedSequence([seed, tag, *keys]))


def sample_clients(
    round_index: int, num_clients: int, participation: float, run_seed: int
) -> List[int]:
    """Uniform sample of max(1, round(participation*N)) client ids, ascending."""
    count = min(num_clients, max(1, int(round(participation * num_clients))))
    chosen = stream(run_seed, STREAM_SAMPLE, round_index).choice(
        num_clients, size=count, replace=False
    )
    return sorted(int(c) for c in chosen)


def evaluate(params: ParamVector, model: Model, testset: Dataset) -> Tuple[float, float]:
    """
    Top-1 accuracy and mean cross-entropy on a test set.

    Ties in the argmax resolve to the lowest class index.

    Raises:
        ConfigurationError: If the test set is empty.
    """
    n = len(testset)
    if n == 0:
        raise ConfigurationError("cannot evaluate on an empty test set")
    correct = 0
    loss_sum = 0.0
    for start in range(0, n, EVAL_CHUNK):
        features = testset.features[start : start + EVAL_CHUNK]
        labels = testset.labels[start : start + EVAL_CHUNK]
        logits, _ = forward(model, features, params.values)
        loss, _ = softmax_cross_entropy(logits, labels)
        loss_sum += loss * labels.shape[0]
        correct += int(np.count_nonzero(np.argmax(logits, axis=1) == labels))
    return correct / n, loss_sum / n


def convergence_round(series: Sequence[float], fraction: float = 0.99) -> Optional[int]:
    """
    First round (1-based) whose accuracy reaches fraction x the mean of the
    final min(10, len) rounds; None if never reached.
    """
    if not series:
        return None
    tail = series[-min(CONVERGENCE_TAIL, len(series)) :]
    threshold = fraction * (sum(tail) / len(tail))
    for index, accuracy in enumerate(series):
        if accuracy >= threshold:
            return index + 1
    return None


def build_splits(cfg: DatasetConfig, seed: int) -> Tuple[Dataset, Dataset]:
    """Generate or load the dataset for a seed and return standardized (train, test)."""
    if cfg.kind == "fkb":
        assert cfg.path is not None
        dataset = load_dataset(cfg.path)
    else:
        dataset = synthetic_blobs(
            cfg.num_classes, cfg.dim, cfg.per_class, cfg.spread, stream(seed, STREAM_DATA)
        )
    return prepare_splits(dataset, cfg.test_fraction, stream(seed, STREAM_SPLIT))


def build_partition(config: FederationConfig, train: Dataset, seed: int) -> PartitionPlan:
    partition_seed = int(np.random.SeedSequence([seed, STREAM_PARTITION]).generate_state(1)[0])
    if config.partition.mode == PartitionMode.IID.value:
        return iid_partition(len(train), config.num_clients, seed=partition_seed)
    return dirichlet_partition(
        train.labels,
        config.num_clients,
        config.partition.alpha,
        min_samples=config.partition.min_samples,
        seed=partition_seed,
        num_classes=train.num_classes,
    )


class FederatedSimulation:
    """
    One seed of a federated run.

    Owns the server state and every client's persistent state; participant
    training jobs get a read-only snapshot of the server and exclusive use of
    their own ClientState.

    Example:
        sim = FederatedSimulation(create_config({"rounds": 5}), seed=0)
        seed_run = sim.run()
    """

    def __init__(
        self,
        config: FederationConfig,
        seed: int,
        executor: Optional[Executor] = None,
    ):
        self.config = config
        self.seed = seed
        self._executor = executor

        self.train, self.test = build_splits(config.dataset, seed)
        self.plan = build_partition(config, self.train, seed)
        spec = config.model.resolve(self.train.dim, self.train.num_classes)
        self.model = build_model(spec, stream(seed, STREAM_MODEL))
        self.server = ServerState(global_params=self.model.params.copy())
        self.clients: Dict[int, ClientState] = {}
        self._client_data = [self.train.subset(idx) for idx in self.plan.assignments]

    def _snapshot(self) -> ServerState:
        values = self.server.global_params.values.copy()
        values.flags.writeable = False
        return replace(self.server, global_params=self.server.global_params.with_values(values))

    def _train_client(self, snapshot: ServerState, client_id: int) -> LocalResult:
        round_index = snapshot.round_index + 1
        state = self.clients.get(client_id) or ClientState(client_id=client_id)
        return local_train(
            self.model,
            snapshot,
            state,
            self._client_data[client_id].as_batch(),
            self.config.local,
            stream(self.seed, STREAM_CLIENT, round_index, client_id),
            round_index=round_index,
        )

    def run_round(self) -> RoundRecord:
        """
        Execute the next global round.

        Raises:
            DivergenceError: Tagged with the round, client and seed.
        """
        started = time.perf_counter()
        round_index = self.server.round_index + 1
        participants = sample_clients(
            round_index, self.config.num_clients, self.config.participation, self.seed
        )
        snapshot = self._snapshot()

        try:
            if self._executor is not None and len(participants) > 1:
                results = list(
                    self._executor.map(lambda cid: self._train_client(snapshot, cid), participants)
                )
            else:
                results = [self._train_client(snapshot, cid) for cid in participants]
        except DivergenceError as exc:
            exc.seed = self.seed
            raise

        self.server = server_update(
            self.config.local, self.server, results, self.config.num_clients
        )
        for result in results:
            self.clients[result.client_id] = result.client_state

        accuracy, loss = evaluate(self.server.global_params, self.model, self.test)
        record = RoundRecord(
            round=round_index,
            test_accuracy=accuracy,
            test_loss=loss,
            mean_local_loss=float(np.mean([r.mean_loss for r in results])),
            participants=participants,
            wall_ms=int((time.perf_counter() - started) * 1000),
        )
        logger.debug(
            f"seed {self.seed} round {round_index}: acc={accuracy:.4f} loss={loss:.4f} "
            f"({record.wall_ms} ms)"
        )
        return record

    def run(self) -> SeedRun:
        """Run all configured rounds for this seed."""
        seed_run = SeedRun(seed=self.seed)
        for _ in range(self.config.rounds):
            seed_run.records.append(self.run_round())
        seed_run.convergence_round = convergence_round(
            [r.test_accuracy for r in seed_run.records], self.config.convergence_fraction
        )
        return seed_run


def summarize(config: FederationConfig, runs: List[SeedRun]) -> RunReport:
    """Aggregate per-seed runs; statistics use non-failed seeds only."""
    ok = [r for r in runs if not r.failed]
    finals = [r.records[-1].test_accuracy for r in ok]
    rounds = [r.convergence_round for r in ok if r.convergence_round is not None]
    model = config.model
    if model.preset is not None:
        model_label = model.preset.lower()
        is_kan = model_label.startswith("kan")
    else:
        widths = "-".join(str(w) for w in model.hidden_widths or []) or "0"
        model_label = f"{model.kind}-[{widths}]"
        is_kan = (model.kind or "").lower() == ModelKind.KAN.value
    return RunReport(
        config=config.to_dict(),
        runs=runs,
        final_accuracy_mean=float(np.mean(finals)) if finals else float("nan"),
        final_accuracy_std=float(np.std(finals)) if finals else float("nan"),
        convergence_round_mean=float(np.mean(rounds)) if rounds else None,
        failed_seeds=[r.seed for r in runs if r.failed],
        model_label=model_label,
        algorithm=config.local.algorithm.value,
        alpha_label=config.partition.label,
        grid_label=str(model.grid_size) if is_kan else "",
    )


def run_federated(config: FederationConfig, threads: Optional[int] = None) -> RunReport:
    """
    Run every seed of a configuration and aggregate the results.

    Args:
        config: Validated configuration
        threads: Worker pool size; defaults to FKB_THREADS / hardware parallelism

    Raises:
        RunFailedError: If every seed diverged.
    """
    config.validate()
    workers = threads if threads is not None else resolve_threads()
    executor: Optional[ThreadPoolExecutor] = (
        ThreadPoolExecutor(max_workers=workers, thread_name_prefix="fkb-client")
        if workers > 1
        else None
    )
    runs: List[SeedRun] = []
    try:
        for seed in config.seeds:
            logger.info(
                f"seed {seed}: {config.local.algorithm.value} on {config.model.preset or config.model.kind}, "
                f"{config.rounds} rounds, N={config.num_clients}"
            )
            try:
                seed_run = FederatedSimulation(config, seed, executor).run()
            except DivergenceError as exc:
                logger.warning(f"seed {seed} diverged: {exc.message}")
                runs.append(SeedRun(seed=seed, failed=True, error=exc.message))
                continue
            logger.info(
                f"seed {seed}: final accuracy {seed_run.final_accuracy:.4f}, "
                f"convergence round {seed_run.convergence_round}"
            )
            runs.append(seed_run)
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    if all(r.failed for r in runs):
        raise RunFailedError(f"all {len(runs)} seeds diverged")
    return summarize(config, runs)
