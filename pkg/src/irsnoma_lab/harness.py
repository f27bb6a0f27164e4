"""Seeded experiment harness wiring all stages into reproducible runs.

Every command funnels its randomness through a named-seed registry, so each
sub-stream (scenario, per-slot channels, clustering, agent) is independently
replayable and every CSV is bit-identical given (config, seed).  Output
files start with the schema header comment ``# irsnoma-lab v<version>``.

Column conventions: the per-slot pipeline emits
(seed, slot, sum_rate, feasible, occupancy, decoding_orders) where
``occupancy`` joins cluster sizes with '-' and ``decoding_orders`` joins
each cluster's user ids with '>' and clusters with '|'.
"""

from __future__ import annotations

import csv
import io
import json
import os
import zlib
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .channel import (
    PhaseConfig,
    RicianConfig,
    ScenarioGeometry,
    dbm_to_watts,
    default_region,
    load_scenario,
    sample_channels,
    scenario_to_json,
)
from .clustering import cluster_users
from .mobility import (
    ConstantVelocityModel,
    predict_next,
    rejection_sample_positions,
    run_algorithm1,
)
from .noma import NetworkScenario, evaluate_configuration, oma_tdma_sum_rate
from .oracle import SearchSpace, brute_force_optimum, enumerate_phase_configs
from .rl import NomaPhaseEnv, QApproximator, train_agent, train_tabular_agent

SCHEMA_HEADER = f"# irsnoma-lab v{__version__}"
ALGORITHMS = ("dqn", "tabular", "random-phase", "oracle")


class SeedRegistry:
    """Derives independent, replayable random streams from one master seed."""

    def __init__(self, master: int):
        self.master = int(master)

    def seed_sequence(self, name: str) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.master, zlib.crc32(name.encode())])

    def rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng(self.seed_sequence(name))

    def seed(self, name: str) -> int:
        return int(self.seed_sequence(name).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one experiment family."""

    scenario_path: str | None = None
    out_dir: str = "results"
    algorithm: str = "dqn"
    seeds: tuple[int, ...] = (0,)

    n_users: int = 10
    m_clusters: int = 5
    k_elements: int = 25
    resolution_bits: int = 5
    power_dbm: float = 60.0
    alpha_step: float = 0.1
    qos_floor: float = 0.0
    interference_model: str = "incoherent"
    alpha_domain: str = "amplitude"

    powers_dbm: tuple[float, ...] = (20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0)
    element_counts: tuple[int, ...] = (5, 10, 15, 20, 25)

    slots: int = 5
    clustering_epsilon: float = 1e-15

    episodes: int = 30
    steps_per_episode: int = 20
    random_samples: int = 60

    n0: int = 16
    n_max: int = 64
    window_len: int = 8
    speed: float = 1.5
    heading_noise_std: float = 0.05
    predictor_train_steps: int = 600
    save_curves: bool = True

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(
            self, "powers_dbm", tuple(float(p) for p in self.powers_dbm)
        )
        object.__setattr__(
            self, "element_counts", tuple(int(k) for k in self.element_counts)
        )
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(
                f"unknown algorithm {self.algorithm!r}; pick one of {ALGORITHMS}"
            )
        for p in (*self.powers_dbm, self.power_dbm):
            if not 0.0 <= p <= 120.0:
                raise ValueError(f"power {p} dBm outside the sane range [0, 120]")
        if any(k < 1 for k in self.element_counts) or self.k_elements < 1:
            raise ValueError("element counts must be >= 1")
        if self.slots < 1:
            raise ValueError("slot count must be >= 1")

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header: list[str], rows) -> None:
    """Atomically write a schema-stamped CSV (full float precision)."""
    buf = io.StringIO()
    buf.write(SCHEMA_HEADER + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    _atomic_write(path, buf.getvalue())


def _atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Read back a schema-stamped CSV; returns (header, rows)."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [row for row in reader]


def save_learning_curve(path, curve) -> None:
    write_csv(
        path,
        ["episode", "best_reward", "epsilon", "loss"],
        [(p.episode, p.best_reward, p.epsilon, p.loss) for p in curve],
    )


def _occupancy_string(sizes) -> str:
    return "-".join(str(int(s)) for s in sizes)


def _orders_string(plan) -> str:
    if plan is None:
        return ""
    return "|".join(
        ">".join(str(u) for u in order) for order in plan.decoding_order
    )


# ---------------------------------------------------------------------------
# Scenario plumbing
# ---------------------------------------------------------------------------

def resolve_scenario(
    config: ExperimentConfig, registry: SeedRegistry
) -> tuple[ScenarioGeometry, RicianConfig]:
    """Load the configured scenario file or synthesize one from the registry."""
    if config.scenario_path:
        geometry, rician, _ = load_scenario(config.scenario_path)
        return geometry, rician
    region = default_region()
    positions = rejection_sample_positions(
        region, config.n_users, registry.rng("scenario")
    )
    geometry = ScenarioGeometry(
        bs_position=[0.0, -60.0, 10.0],
        user_positions=positions,
        region=region,
    )
    return geometry, RicianConfig()


def _network_scenario(
    config: ExperimentConfig, channels, assignment, power_dbm=None
) -> NetworkScenario:
    return NetworkScenario(
        channels=channels,
        assignment=tuple(int(c) for c in assignment),
        total_power=dbm_to_watts(
            config.power_dbm if power_dbm is None else power_dbm
        ),
        qos_floors=config.qos_floor,
        interference_model=config.interference_model,
        alpha_domain=config.alpha_domain,
    )


@dataclass(frozen=True, eq=False)
class SlotOutcome:
    sum_rate: float
    feasible: bool
    phase: object
    splits: object
    plan: object
    curve: list | None


def optimize_scenario(
    scenario: NetworkScenario, config: ExperimentConfig, rng
) -> SlotOutcome:
    """Run the configured optimizer on one slot's network scenario."""
    algorithm = config.algorithm
    if algorithm == "oracle":
        space = SearchSpace(
            k_elements=scenario.channels.k_elements,
            resolution_bits=config.resolution_bits,
            cluster_sizes=scenario.cluster_sizes(),
            alpha_step=config.alpha_step,
        )
        result = brute_force_optimum(scenario, space)
        if result.feasible_count == 0:
            return SlotOutcome(0.0, False, None, None, None, None)
        plan = evaluate_configuration(
            scenario, result.best_phase, result.best_splits
        ).plan
        return SlotOutcome(
            result.best_rate, True, result.best_phase, result.best_splits, plan, None
        )

    env = NomaPhaseEnv(
        scenario,
        resolution_bits=config.resolution_bits,
        alpha_step=config.alpha_step,
    )
    if algorithm == "dqn":
        approx = QApproximator(env.feature_dim, env.n_actions, seed=rng)
        outcome = train_agent(
            env,
            approx,
            episodes=config.episodes,
            steps_per_episode=config.steps_per_episode,
            seed=rng,
        )
    elif algorithm == "tabular":
        outcome = train_tabular_agent(
            env,
            episodes=config.episodes,
            steps_per_episode=config.steps_per_episode,
            seed=rng,
        )
    elif algorithm == "random-phase":
        best_rate, best_phase, best_splits = -np.inf, None, None
        for _ in range(config.random_samples):
            state, result = env.random_state(rng)
            if result.feasible and result.sum_rate > best_rate:
                best_rate = result.sum_rate
                best_phase = PhaseConfig(state.phase_indices, config.resolution_bits)
                best_splits = state.power_splits
        if best_phase is None:
            return SlotOutcome(0.0, False, None, None, None, None)
        plan = evaluate_configuration(scenario, best_phase, best_splits).plan
        return SlotOutcome(best_rate, True, best_phase, best_splits, plan, None)
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")

    if not outcome.found_feasible:
        return SlotOutcome(0.0, False, None, None, None, outcome.curve)
    plan = evaluate_configuration(
        scenario, outcome.best_phase, outcome.best_splits
    ).plan
    return SlotOutcome(
        outcome.best_rate,
        True,
        outcome.best_phase,
        outcome.best_splits,
        plan,
        outcome.curve,
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(config: ExperimentConfig) -> dict:
    """Write the scenario JSON and a ground-truth trajectory CSV."""
    seed = config.seeds[0]
    registry = SeedRegistry(seed)
    geometry, rician = resolve_scenario(config, registry)
    motion = ConstantVelocityModel(config.speed, config.heading_noise_std)
    rows = []
    for u in range(geometry.n_users):
        path = motion.simulate(
            geometry.region,
            geometry.user_positions[u][:2],
            config.slots - 1,
            registry.rng(f"truth/user{u}"),
        )
        for t, (x, y) in enumerate(path):
            rows.append((u, t, x, y))
    scenario_file = os.path.join(config.out_dir, "scenario.json")
    _atomic_write(scenario_file, scenario_to_json(geometry, rician, seed))
    traj_file = os.path.join(config.out_dir, "trajectories.csv")
    write_csv(traj_file, ["user", "t", "x", "y"], rows)
    return {"scenario": scenario_file, "trajectories": traj_file}


def _simulate_horizon(config, geometry, registry, horizon):
    motion = ConstantVelocityModel(config.speed, config.heading_noise_std)
    return [
        motion.simulate(
            geometry.region,
            geometry.user_positions[u][:2],
            horizon - 1,
            registry.rng(f"truth/user{u}"),
        )
        for u in range(geometry.n_users)
    ]


def _predicted_positions(config, result, truths, slot, region):
    """One-step position forecasts for a slot, clamped to the region."""
    w = config.window_len + 1
    base = config.n_max
    predicted = []
    for u, predictor in enumerate(result.predictors):
        window = truths[u][base - w + slot : base + slot]
        pos = predict_next(predictor, result.scaler, window)
        if not region.contains(pos):
            pos = window[-1]
        predicted.append(pos)
    return np.asarray(predicted)


def cmd_pipeline(config: ExperimentConfig) -> list[tuple]:
    """Predict -> resample channels -> cluster -> optimize, slot by slot."""
    rows = []
    curves = {}
    for seed in config.seeds:
        registry = SeedRegistry(seed)
        geometry, rician = resolve_scenario(config, registry)
        horizon = config.n_max + config.slots
        truths = _simulate_horizon(config, geometry, registry, horizon)
        algo1 = run_algorithm1(
            geometry.region,
            geometry.n_users,
            config.n0,
            config.n_max,
            seed=registry.rng("mobility"),
            window_len=config.window_len,
            train_steps_per_round=config.predictor_train_steps,
            trajectories=truths,
        )
        for slot in range(config.slots):
            predicted = _predicted_positions(
                config, algo1, truths, slot, geometry.region
            )
            slot_geometry = geometry.with_user_positions(predicted)
            channels = sample_channels(
                slot_geometry,
                rician,
                registry.rng(f"channel/slot{slot}"),
                k_elements=config.k_elements,
                n_antennas=config.m_clusters,
            )
            fit = cluster_users(
                channels.user_channels,
                config.m_clusters,
                epsilon=config.clustering_epsilon,
                seed=registry.rng(f"cluster/slot{slot}"),
            )
            scenario = _network_scenario(config, channels, fit.assignment)
            outcome = optimize_scenario(
                scenario, config, registry.rng(f"agent/slot{slot}")
            )
            rows.append(
                (
                    seed,
                    slot,
                    outcome.sum_rate,
                    int(outcome.feasible),
                    _occupancy_string(fit.occupancy()),
                    _orders_string(outcome.plan),
                )
            )
            if outcome.curve is not None:
                curves[(seed, slot)] = outcome.curve
    write_csv(
        os.path.join(config.out_dir, "pipeline.csv"),
        ["seed", "slot", "sum_rate", "feasible", "occupancy", "decoding_orders"],
        rows,
    )
    if config.save_curves:
        for (seed, slot), curve in curves.items():
            save_learning_curve(
                os.path.join(
                    config.out_dir, "curves", f"curve_seed{seed}_slot{slot}.csv"
                ),
                curve,
            )
    return rows


def _sweep_channels(config, registry, geometry, rician, k_elements):
    return sample_channels(
        geometry,
        rician,
        registry.rng("channel"),
        k_elements=k_elements,
        n_antennas=config.m_clusters,
    )


def _sweep_assignment(config, registry, channels):
    fit = cluster_users(
        channels.user_channels,
        config.m_clusters,
        epsilon=config.clustering_epsilon,
        seed=registry.rng("cluster"),
    )
    return fit.assignment


def cmd_sweep_power(config: ExperimentConfig) -> list[tuple]:
    """Sum rate over the transmit-power grid; channels shared across powers."""
    rows = []
    for seed in config.seeds:
        registry = SeedRegistry(seed)
        geometry, rician = resolve_scenario(config, registry)
        channels = _sweep_channels(config, registry, geometry, rician, config.k_elements)
        assignment = _sweep_assignment(config, registry, channels)
        for power in config.powers_dbm:
            scenario = _network_scenario(config, channels, assignment, power_dbm=power)
            outcome = optimize_scenario(
                scenario, config, registry.rng(f"agent/power{power}")
            )
            rows.append((power, config.algorithm, seed, outcome.sum_rate))
    write_csv(
        os.path.join(config.out_dir, "sweep_power.csv"),
        ["power_dbm", "algorithm", "seed", "sum_rate"],
        rows,
    )
    means = _mean_rows(rows, key_cols=(0, 1), value_col=3)
    write_csv(
        os.path.join(config.out_dir, "sweep_power_mean.csv"),
        ["power_dbm", "algorithm", "mean_sum_rate"],
        means,
    )
    return rows


def cmd_sweep_elements(config: ExperimentConfig) -> list[tuple]:
    """Sum rate over element counts; smaller surfaces are prefixes of larger."""
    rows = []
    k_max = max(config.element_counts)
    for seed in config.seeds:
        registry = SeedRegistry(seed)
        geometry, rician = resolve_scenario(config, registry)
        full = _sweep_channels(config, registry, geometry, rician, k_max)
        for k in config.element_counts:
            channels = full.slice_elements(k)
            assignment = _sweep_assignment(config, registry, channels)
            scenario = _network_scenario(config, channels, assignment)
            outcome = optimize_scenario(
                scenario, config, registry.rng(f"agent/k{k}")
            )
            rows.append((k, config.power_dbm, seed, outcome.sum_rate))
    write_csv(
        os.path.join(config.out_dir, "sweep_elements.csv"),
        ["k_elements", "power_dbm", "seed", "sum_rate"],
        rows,
    )
    means = _mean_rows(rows, key_cols=(0, 1), value_col=3)
    write_csv(
        os.path.join(config.out_dir, "sweep_elements_mean.csv"),
        ["k_elements", "power_dbm", "mean_sum_rate"],
        means,
    )
    return rows


def _mean_rows(rows, key_cols, value_col):
    groups: dict = {}
    for row in rows:
        key = tuple(row[c] for c in key_cols)
        groups.setdefault(key, []).append(row[value_col])
    return [(*key, float(np.mean(vals))) for key, vals in groups.items()]


def best_single_user_gain(channels, user: int, resolution_bits: int) -> float:
    """Exact best effective-channel norm for one user over all phase configs."""
    best = 0.0
    for phase in enumerate_phase_configs(channels.k_elements, resolution_bits):
        coeffs = np.exp(
            2j * np.pi * np.asarray(phase.indices) / (1 << resolution_bits)
        )
        h_eff = (np.conj(channels.user_channels[user]) * coeffs) @ channels.g_matrix
        best = max(best, float(np.linalg.norm(h_eff)))
    return best


def aligned_single_user_gain(channels, user: int, resolution_bits: int) -> float:
    """Coordinate-ascent phase alignment for one user (large surfaces)."""
    levels = 1 << resolution_bits
    grid = np.exp(2j * np.pi * np.arange(levels) / levels)
    k = channels.k_elements
    coeffs = np.ones(k, dtype=complex)
    terms = np.conj(channels.user_channels[user])[:, None] * channels.g_matrix
    for _ in range(3):
        for idx in range(k):
            rest = (coeffs[:, None] * terms).sum(axis=0) - coeffs[idx] * terms[idx]
            norms = np.linalg.norm(
                rest[None, :] + grid[:, None] * terms[idx][None, :], axis=1
            )
            coeffs[idx] = grid[int(np.argmax(norms))]
    return float(np.linalg.norm((coeffs[:, None] * terms).sum(axis=0)))


def cmd_compare_oma(config: ExperimentConfig) -> list[tuple]:
    """Paired NOMA-vs-TDMA comparison on identical channels per seed."""
    exhaustive_ok = (
        (1 << config.resolution_bits) ** config.k_elements <= 10**6
    )
    rows = []
    for power in config.powers_dbm:
        for seed in config.seeds:
            registry = SeedRegistry(seed)
            geometry, rician = resolve_scenario(config, registry)
            channels = _sweep_channels(
                config, registry, geometry, rician, config.k_elements
            )
            assignment = _sweep_assignment(config, registry, channels)
            scenario = _network_scenario(config, channels, assignment, power_dbm=power)
            noma = optimize_scenario(
                scenario, config, registry.rng(f"agent/power{power}")
            )
            gain_fn = (
                best_single_user_gain if exhaustive_ok else aligned_single_user_gain
            )
            gains = [
                gain_fn(channels, u, config.resolution_bits)
                for u in range(channels.n_users)
            ]
            oma_rate = oma_tdma_sum_rate(
                gains, dbm_to_watts(power), channels.noise_variance
            )
            gain_percent = (
                100.0 * (noma.sum_rate - oma_rate) / oma_rate if oma_rate > 0 else 0.0
            )
            rows.append((power, noma.sum_rate, oma_rate, gain_percent))
    write_csv(
        os.path.join(config.out_dir, "compare_oma.csv"),
        ["power_dbm", "noma_rate", "oma_rate", "gain_percent"],
        rows,
    )
    return rows


def cmd_oracle(config: ExperimentConfig):
    """Exhaustive optimum for the configured (small) instance."""
    registry = SeedRegistry(config.seeds[0])
    geometry, rician = resolve_scenario(config, registry)
    channels = _sweep_channels(config, registry, geometry, rician, config.k_elements)
    assignment = _sweep_assignment(config, registry, channels)
    scenario = _network_scenario(config, channels, assignment)
    space = SearchSpace(
        k_elements=config.k_elements,
        resolution_bits=config.resolution_bits,
        cluster_sizes=scenario.cluster_sizes(),
        alpha_step=config.alpha_step,
    )
    result = brute_force_optimum(scenario, space)
    _atomic_write(os.path.join(config.out_dir, "oracle.json"), result.to_json())
    return result


def cmd_cluster(config: ExperimentConfig):
    """Cluster one channel draw; writes the assignment CSV and mixture JSON."""
    registry = SeedRegistry(config.seeds[0])
    geometry, rician = resolve_scenario(config, registry)
    channels = _sweep_channels(config, registry, geometry, rician, config.k_elements)
    fit = cluster_users(
        channels.user_channels,
        config.m_clusters,
        epsilon=config.clustering_epsilon,
        seed=registry.rng("cluster"),
    )
    write_csv(
        os.path.join(config.out_dir, "assignment.csv"),
        ["user", "cluster"],
        [(u, int(c)) for u, c in enumerate(fit.assignment)],
    )
    params_doc = fit.params.to_json_dict()
    params_doc["converged"] = fit.converged
    params_doc["n_iter"] = fit.n_iter
    params_doc["log_likelihood"] = fit.log_likelihood
    _atomic_write(
        os.path.join(config.out_dir, "gmm_params.json"),
        json.dumps(params_doc, indent=2, sort_keys=True),
    )
    return fit


def cmd_predict(config: ExperimentConfig):
    """Train the mobility predictor and emit one-step forecasts per slot."""
    registry = SeedRegistry(config.seeds[0])
    geometry, rician = resolve_scenario(config, registry)
    horizon = config.n_max + config.slots
    truths = _simulate_horizon(config, geometry, registry, horizon)
    algo1 = run_algorithm1(
        geometry.region,
        geometry.n_users,
        config.n0,
        config.n_max,
        seed=registry.rng("mobility"),
        window_len=config.window_len,
        train_steps_per_round=config.predictor_train_steps,
        trajectories=truths,
    )
    rows = []
    for slot in range(config.slots):
        predicted = _predicted_positions(config, algo1, truths, slot, geometry.region)
        for u, (x, y) in enumerate(predicted):
            rows.append((u, slot, x, y))
    rows.sort(key=lambda r: (r[0], r[1]))
    write_csv(
        os.path.join(config.out_dir, "predictions.csv"),
        ["user", "t", "x", "y"],
        rows,
    )
    return rows
