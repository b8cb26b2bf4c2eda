"""
Monte Carlo experiment runner.

Every instance generates one environment from its derived seed and runs all
configured algorithms on it. Instances are independent and may run in worker
processes; records are sorted by run id before they are returned.
"""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional

from app.core.environments import BanditEnvironment, make_environment
from app.core.exceptions import BanditError
from app.core.linucb import LinUCB
from app.core.ntk import EffectiveDimension, effective_dimension, log_det_ratio_diagnostic, ntk_gram, subsample_contexts
from app.core.policy import BanditPolicy, BatchNeuralUCB, BatchScheme, BetaSchedule, NeuralUCB, UniformRandom
from app.core.seeding import instance_seed, substream, substream_seed
from app.schemas.experiment import AlgoKind, AlgoSpec, ExperimentConfig, NetworkConfig
from app.schemas.records import BatchRow, RunRecord, RunStatus

logger = logging.getLogger(__name__)


def run_id_for(instance: int, algo: AlgoSpec) -> str:
    return f"i{instance:03d}-{algo.label}"


def build_policy(algo: AlgoSpec, config: ExperimentConfig, env: BanditEnvironment, seed: int) -> BanditPolicy:
    """Instantiate the policy for ``algo`` on ``env``."""
    if algo.kind == AlgoKind.UNIFORM:
        return UniformRandom(seed)
    if algo.kind == AlgoKind.LINUCB:
        lam = algo.lin_lambda if algo.lin_lambda is not None else config.lin_lambda
        beta = algo.lin_beta if algo.lin_beta is not None else config.lin_beta
        return LinUCB(env.raw_dim, lam, beta)

    net = NetworkConfig.from_spec(config.net, env.context_dim)
    beta = BetaSchedule.from_config(config.beta, net)
    if algo.kind == AlgoKind.NEURALUCB:
        return NeuralUCB(net, beta, env.horizon, seed)
    if algo.kind == AlgoKind.BNUCB_FIXED:
        scheme = BatchScheme.fixed(algo.batches)
    else:
        scheme = BatchScheme.adaptive_log(algo.batches, algo.log_q)
    return BatchNeuralUCB(net, scheme, beta, env.horizon, seed)


def run_policy(policy: BanditPolicy, env: BanditEnvironment, record: RunRecord,
               keep_rounds: bool = True) -> RunRecord:
    """Play every round of ``env``; aborts are recorded, not raised."""
    elapsed = 0.0
    total = 0.0
    try:
        for batch in env.batches:
            start = time.perf_counter()
            outcome = policy.step(batch, env)
            elapsed += time.perf_counter() - start
            total += outcome.regret
            if keep_rounds:
                record.rounds.append(batch.round_index, outcome.batch_index, outcome.action,
                                     outcome.reward, outcome.regret)
    except BanditError as exc:
        record.status = RunStatus.ABORTED
        record.error = exc.to_line()
        logger.exception("run %s aborted", record.run_id)

    record.wall_time_ms = elapsed * 1000.0
    record.total_regret = total
    record.n_policy_updates = policy.n_updates
    record.batches = _batch_rows(policy, env.horizon)
    return record


def _batch_rows(policy: BanditPolicy, horizon: int) -> List[BatchRow]:
    rows = []
    boundaries = policy.boundaries
    for i, boundary in enumerate(boundaries):
        t_end = boundaries[i + 1].t_start - 1 if i + 1 < len(boundaries) else horizon
        rows.append(BatchRow(
            batch_index=boundary.batch_index,
            t_start=boundary.t_start,
            t_end=t_end,
            log_ratio_before_trigger=boundary.log_ratio_before_trigger,
        ))
    return rows


def _effective_dimension(config: ExperimentConfig, env: BanditEnvironment, seed: int) -> Optional[EffectiveDimension]:
    if config.ntk_diag is None:
        return None
    contexts = subsample_contexts(env.all_contexts(), config.ntk_diag.subsample, substream(seed, "ntk"))
    try:
        return effective_dimension(ntk_gram(contexts, config.net.depth), config.ntk_diag.lam)
    except BanditError:
        logger.exception("effective dimension diagnostic failed")
        return None


def run_instance(config: ExperimentConfig, instance: int) -> List[RunRecord]:
    """All algorithms of ``config`` on Monte Carlo instance ``instance``."""
    seed = instance_seed(config.master_seed, instance)
    env = make_environment(config.env, substream_seed(seed, "environment"))
    low, high = env.mean_range()
    env_meta = {
        "mean_min": low,
        "mean_max": high,
        "leaves_unit_range": env.leaves_unit_range(),
        "skipped_rows": env.skipped_rows,
    }
    if env_meta["leaves_unit_range"]:
        logger.info("instance %d: mean rewards span [%.4g, %.4g], outside [0, 1]", instance, low, high)
    eff = _effective_dimension(config, env, seed)
    if eff is not None:
        env_meta["d_tilde"] = eff.d_tilde
        env_meta["ntk_subsample"] = eff.n_contexts

    policy_seed = substream_seed(seed, "policy")
    records = []
    for algo in config.algorithms:
        record = RunRecord(run_id=run_id_for(instance, algo), instance=instance,
                           algo=algo.label, seed=policy_seed, metadata=dict(env_meta))
        try:
            start = time.perf_counter()
            policy = build_policy(algo, config, env, policy_seed)
            setup_ms = (time.perf_counter() - start) * 1000.0
        except BanditError as exc:
            record.status = RunStatus.ABORTED
            record.error = exc.to_line()
            logger.error("run %s could not start: %s", record.run_id, exc.message)
            records.append(record)
            continue

        run_policy(policy, env, record, keep_rounds=config.record_rounds)
        record.wall_time_ms += setup_ms
        cov = policy.covariance
        if algo.is_neural and cov is not None and eff is not None:
            ratio = log_det_ratio_diagnostic(cov.logdet_gain(), eff, env.horizon * env.n_arms)
            record.metadata["logdet_ratio_diagnostic"] = ratio
            logger.info("run %s: log-det / effective-dimension ratio %.4g", record.run_id, ratio)
        logger.info(
            "run %s finished: regret %.4f, %d updates, %.1f ms",
            record.run_id, record.total_regret, record.n_policy_updates, record.wall_time_ms,
        )
        records.append(record)
    return records


def run_experiment(config: ExperimentConfig, n_workers: Optional[int] = None) -> List[RunRecord]:
    """``n_instances`` independent instances; output order is independent of scheduling."""
    workers = n_workers or config.n_workers
    instances = list(range(config.n_instances))
    logger.info(
        "running %d instance(s) x %d algorithm(s) on %s (T=%d, profile %s, %d worker(s))",
        len(instances), len(config.algorithms), config.env.kind.value,
        config.env.horizon, config.profile.value, workers,
    )
    records: List[RunRecord] = []
    if workers > 1 and len(instances) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for batch in pool.map(run_instance, [config] * len(instances), instances):
                records.extend(batch)
    else:
        for instance in instances:
            records.extend(run_instance(config, instance))
    return sorted(records, key=lambda r: r.run_id)


def instance_seeds(config: ExperimentConfig) -> Dict[int, int]:
    return {i: instance_seed(config.master_seed, i) for i in range(config.n_instances)}

