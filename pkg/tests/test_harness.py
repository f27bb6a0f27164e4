import json
import os

import numpy as np
import pytest

from irsnoma_lab.channel import load_scenario
from irsnoma_lab.cli import main
from irsnoma_lab.harness import (
    ExperimentConfig,
    SeedRegistry,
    cmd_cluster,
    cmd_compare_oma,
    cmd_generate,
    cmd_pipeline,
    cmd_predict,
    cmd_sweep_elements,
    cmd_sweep_power,
    read_csv,
    write_csv,
)
from irsnoma_lab.mobility import load_trajectories_csv

SMALL = dict(
    algorithm="random-phase",
    seeds=(1,),
    n_users=4,
    m_clusters=2,
    k_elements=4,
    resolution_bits=2,
    power_dbm=60.0,
    alpha_step=0.5,
    slots=2,
    n0=12,
    n_max=24,
    window_len=8,
    predictor_train_steps=25,
    random_samples=20,
    episodes=6,
    steps_per_episode=6,
    save_curves=False,
)

ORACLE_1U = dict(
    algorithm="oracle",
    seeds=(0,),
    n_users=1,
    m_clusters=1,
    k_elements=4,
    resolution_bits=2,
    power_dbm=40.0,
    alpha_step=0.5,
)


def oracle_1u_config(tmp_path, **overrides):
    params = {**ORACLE_1U, "out_dir": str(tmp_path / "out"), **overrides}
    return ExperimentConfig(**params)


def small_config(tmp_path, **overrides):
    params = {**SMALL, "out_dir": str(tmp_path / "out"), **overrides}
    return ExperimentConfig(**params)


class TestSeedRegistry:
    def test_streams_deterministic_and_named(self):
        a = SeedRegistry(7)
        b = SeedRegistry(7)
        assert a.seed("channel") == b.seed("channel")
        assert a.rng("x").integers(1 << 30) == b.rng("x").integers(1 << 30)
        assert a.seed("channel") != a.seed("cluster")

    def test_master_changes_all_streams(self):
        assert SeedRegistry(1).seed("x") != SeedRegistry(2).seed("x")


class TestConfig:
    def test_power_range_enforced(self):
        with pytest.raises(ValueError):
            ExperimentConfig(powers_dbm=(500.0,))
        with pytest.raises(ValueError):
            ExperimentConfig(power_dbm=-10.0)

    def test_seed_list_required(self):
        with pytest.raises(ValueError):
            ExperimentConfig(seeds=())

    def test_algorithm_whitelist(self):
        with pytest.raises(ValueError):
            ExperimentConfig(algorithm="genetic")

    def test_from_json_with_overrides(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"algorithm": "tabular", "seeds": [5]}))
        cfg = ExperimentConfig.from_json(path, out_dir="elsewhere", seeds=(9,))
        assert cfg.algorithm == "tabular"
        assert cfg.seeds == (9,)
        assert cfg.out_dir == "elsewhere"

    def test_default_power_sweep_matches_20_to_90(self):
        cfg = ExperimentConfig()
        assert cfg.powers_dbm == tuple(float(p) for p in range(20, 100, 10))

    def test_clustering_epsilon_default(self):
        assert ExperimentConfig().clustering_epsilon == 1e-15


class TestCsvHelpers:
    def test_roundtrip_with_schema_header(self, tmp_path):
        path = tmp_path / "table.csv"
        write_csv(path, ["a", "b"], [(1, 0.5), (2, 0.25)])
        text = path.read_text()
        assert text.startswith("# irsnoma-lab v")
        header, rows = read_csv(path)
        assert header == ["a", "b"]
        assert rows == [["1", "0.5"], ["2", "0.25"]]


class TestGenerate:
    def test_regenerates_bit_identically(self, tmp_path):
        cfg = small_config(tmp_path)
        paths = cmd_generate(cfg)
        first = {k: open(v, "rb").read() for k, v in paths.items()}
        paths = cmd_generate(cfg)
        second = {k: open(v, "rb").read() for k, v in paths.items()}
        assert first == second

    def test_single_slot_trajectory_is_initial_positions(self, tmp_path):
        cfg = small_config(tmp_path, slots=1)
        paths = cmd_generate(cfg)
        trajs = load_trajectories_csv(paths["trajectories"])
        assert len(trajs) == cfg.n_users
        assert all(len(t) == 1 for t in trajs)
        geometry, _, _ = load_scenario(paths["scenario"])
        for traj, start in zip(trajs, geometry.user_positions):
            assert np.allclose(traj.positions[0], start[:2])

    def test_positions_pass_region_check(self, tmp_path):
        cfg = small_config(tmp_path, slots=6)
        paths = cmd_generate(cfg)
        geometry, _, _ = load_scenario(paths["scenario"])
        for traj in load_trajectories_csv(paths["trajectories"]):
            assert geometry.region.contains_many(traj.positions).all()


class TestPipeline:
    def test_occupancy_sums_to_user_count(self, tmp_path):
        cfg = small_config(tmp_path)
        rows = cmd_pipeline(cfg)
        assert len(rows) == cfg.slots
        for row in rows:
            occupancy = [int(v) for v in row[4].split("-")]
            assert sum(occupancy) == cfg.n_users

    def test_bit_identical_reruns(self, tmp_path):
        cfg = small_config(tmp_path, algorithm="dqn", episodes=4, steps_per_episode=4)
        cmd_pipeline(cfg)
        first = open(os.path.join(cfg.out_dir, "pipeline.csv"), "rb").read()
        cmd_pipeline(cfg)
        second = open(os.path.join(cfg.out_dir, "pipeline.csv"), "rb").read()
        assert first == second

    def test_dqn_beats_random_phase_on_paired_slots(self, tmp_path):
        base = small_config(
            tmp_path, slots=10, episodes=10, steps_per_episode=8, random_samples=20
        )
        random_rows = cmd_pipeline(base.with_overrides(algorithm="random-phase"))
        dqn_rows = cmd_pipeline(base.with_overrides(algorithm="dqn"))
        random_mean = np.mean([r[2] for r in random_rows])
        dqn_mean = np.mean([r[2] for r in dqn_rows])
        assert dqn_mean >= random_mean

    def test_learning_curves_written(self, tmp_path):
        cfg = small_config(
            tmp_path, algorithm="dqn", episodes=4, steps_per_episode=4,
            slots=1, save_curves=True,
        )
        cmd_pipeline(cfg)
        curve = os.path.join(cfg.out_dir, "curves", "curve_seed1_slot0.csv")
        header, rows = read_csv(curve)
        assert header == ["episode", "best_reward", "epsilon", "loss"]
        assert len(rows) == 4


class TestSweeps:
    def test_power_sweep_monotone_under_oracle(self, tmp_path):
        cfg = oracle_1u_config(
            tmp_path,
            seeds=(0, 1, 2),
            powers_dbm=(20.0, 40.0, 60.0, 80.0),
        )
        rows = cmd_sweep_power(cfg)
        for seed in cfg.seeds:
            rates = [r[3] for r in rows if r[2] == seed]
            assert all(b >= a - 1e-12 for a, b in zip(rates, rates[1:]))

    def test_single_power_single_row_per_seed(self, tmp_path):
        cfg = oracle_1u_config(
            tmp_path,
            powers_dbm=(30.0,),
        )
        rows = cmd_sweep_power(cfg)
        assert len(rows) == 1
        header, _ = read_csv(os.path.join(cfg.out_dir, "sweep_power.csv"))
        assert header == ["power_dbm", "algorithm", "seed", "sum_rate"]

    def test_element_sweep_monotone_under_oracle(self, tmp_path):
        cfg = oracle_1u_config(
            tmp_path,
            seeds=(0, 1, 2),
            element_counts=(1, 2, 3, 4),
        )
        rows = cmd_sweep_elements(cfg)
        for seed in cfg.seeds:
            rates = [r[3] for r in rows if r[2] == seed]
            assert all(b >= a - 1e-12 for a, b in zip(rates, rates[1:]))

    def test_element_sweep_diminishing_returns(self, tmp_path):
        # Averaged over 20 seeds, the growth of rate with element count
        # slows down: the coarse-grid second difference is non-positive.
        cfg = oracle_1u_config(
            tmp_path,
            seeds=tuple(range(20)),
            k_elements=8,
            resolution_bits=1,
            element_counts=(2, 5, 8),
            power_dbm=60.0,  # log regime; at low SNR growth is still convex
        )
        rows = cmd_sweep_elements(cfg)
        means = [
            np.mean([r[3] for r in rows if r[0] == k]) for k in cfg.element_counts
        ]
        assert means[2] - 2 * means[1] + means[0] <= 0.0

    def test_degenerate_element_sweep(self, tmp_path):
        cfg = oracle_1u_config(
            tmp_path,
            element_counts=(3,),
        )
        rows = cmd_sweep_elements(cfg)
        assert len(rows) == 1
        assert rows[0][0] == 3

    def test_mean_files_written(self, tmp_path):
        cfg = oracle_1u_config(
            tmp_path,
            seeds=(0, 1),
            powers_dbm=(20.0, 30.0),
        )
        cmd_sweep_power(cfg)
        header, rows = read_csv(os.path.join(cfg.out_dir, "sweep_power_mean.csv"))
        assert header == ["power_dbm", "algorithm", "mean_sum_rate"]
        assert len(rows) == 2


class TestCompareOma:
    def test_single_user_schemes_coincide(self, tmp_path):
        cfg = oracle_1u_config(
            tmp_path,
            powers_dbm=(40.0,),
        )
        rows = cmd_compare_oma(cfg)
        assert len(rows) == 1
        assert rows[0][3] == pytest.approx(0.0, abs=1e-6)

    def test_columns_exactly_as_specified(self, tmp_path):
        cfg = oracle_1u_config(
            tmp_path,
            powers_dbm=(40.0,),
        )
        cmd_compare_oma(cfg)
        header, _ = read_csv(os.path.join(cfg.out_dir, "compare_oma.csv"))
        assert header == ["power_dbm", "noma_rate", "oma_rate", "gain_percent"]

    def test_noma_beats_oma_mean_two_users(self, tmp_path):
        cfg = ExperimentConfig(
            algorithm="oracle",
            out_dir=str(tmp_path / "out"),
            seeds=tuple(range(5)),
            n_users=2,
            m_clusters=1,
            k_elements=4,
            resolution_bits=2,
            alpha_step=0.1,
            powers_dbm=(40.0,),
        )
        rows = cmd_compare_oma(cfg)
        noma = np.mean([r[1] for r in rows])
        oma = np.mean([r[2] for r in rows])
        assert noma > oma
        for row in rows:
            assert row[1] >= row[2] - 1e-9  # per-seed dominance under oracle


class TestClusterAndPredict:
    def test_cluster_outputs(self, tmp_path):
        cfg = small_config(tmp_path)
        fit = cmd_cluster(cfg)
        header, rows = read_csv(os.path.join(cfg.out_dir, "assignment.csv"))
        assert header == ["user", "cluster"]
        assert len(rows) == cfg.n_users
        doc = json.loads(open(os.path.join(cfg.out_dir, "gmm_params.json")).read())
        assert len(doc["weights"]) == cfg.m_clusters
        assert all(c >= 1 for c in fit.occupancy())

    def test_predict_outputs(self, tmp_path):
        cfg = small_config(tmp_path, slots=3)
        rows = cmd_predict(cfg)
        assert len(rows) == cfg.n_users * cfg.slots
        header, _ = read_csv(os.path.join(cfg.out_dir, "predictions.csv"))
        assert header == ["user", "t", "x", "y"]


class TestCli:
    def test_pipeline_roundtrip(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({**SMALL, "out_dir": str(tmp_path / "cli")}))
        assert main(["pipeline", "--config", str(cfg_path)]) == 0
        assert os.path.exists(tmp_path / "cli" / "pipeline.csv")

    def test_validation_error_exit_code(self, tmp_path):
        assert main(["pipeline", "--config", str(tmp_path / "missing.json")]) == 1

    def test_infeasible_oracle_exit_code(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(
            json.dumps(
                {
                    **ORACLE_1U,
                    "out_dir": str(tmp_path / "orc"),
                    "qos_floor": 1e18,
                    "power_dbm": 0.0,
                }
            )
        )
        assert main(["oracle", "--config", str(cfg_path)]) == 2

    def test_seed_and_algorithm_flags_override(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({**SMALL, "out_dir": str(tmp_path / "o1")}))
        rc = main(
            [
                "cluster",
                "--config",
                str(cfg_path),
                "--seed",
                "42",
                "--out",
                str(tmp_path / "o2"),
            ]
        )
        assert rc == 0
        assert os.path.exists(tmp_path / "o2" / "assignment.csv")
