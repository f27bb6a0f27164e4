"""Experiment harness: power/element sweeps and the NOMA-vs-TDMA gap.

Drives the same commands the CLI exposes, on oracle-sized instances, and
prints the trends: rate grows with power and with surface size, and the
non-orthogonal scheme beats the time-shared baseline at every power.
All outputs land in ./demo_results as schema-stamped CSV files.
"""

import numpy as np

from irsnoma_lab.harness import (
    ExperimentConfig,
    cmd_compare_oma,
    cmd_sweep_elements,
    cmd_sweep_power,
)

OUT = "demo_results"

print("=== sum rate vs transmit power (single-user oracle, 8 seeds) ===")
cfg = ExperimentConfig(
    algorithm="oracle", out_dir=OUT, seeds=tuple(range(8)),
    n_users=1, m_clusters=1, k_elements=4, resolution_bits=2, alpha_step=0.5,
    powers_dbm=(20.0, 40.0, 60.0, 80.0),
)
rows = cmd_sweep_power(cfg)
for power in cfg.powers_dbm:
    mean = np.mean([r[3] for r in rows if r[0] == power])
    print(f"P = {power:4.0f} dBm: mean rate {mean:7.3f} bits/s/Hz")

print("\n=== sum rate vs element count (paired prefixes, 8 seeds) ===")
cfg = ExperimentConfig(
    algorithm="oracle", out_dir=OUT, seeds=tuple(range(8)),
    n_users=1, m_clusters=1, k_elements=4, resolution_bits=2, alpha_step=0.5,
    power_dbm=60.0, element_counts=(1, 2, 3, 4),
)
rows = cmd_sweep_elements(cfg)
for k in cfg.element_counts:
    mean = np.mean([r[3] for r in rows if r[0] == k])
    print(f"K = {k}: mean rate {mean:7.3f} bits/s/Hz")

print("\n=== NOMA vs TDMA, phases optimized per scheme (8 seeds) ===")
cfg = ExperimentConfig(
    algorithm="oracle", out_dir=OUT, seeds=tuple(range(8)),
    n_users=2, m_clusters=1, k_elements=4, resolution_bits=2, alpha_step=0.1,
    powers_dbm=(20.0, 40.0, 60.0),
)
rows = cmd_compare_oma(cfg)
for power in cfg.powers_dbm:
    noma = np.mean([r[1] for r in rows if r[0] == power])
    oma = np.mean([r[2] for r in rows if r[0] == power])
    print(f"P = {power:4.0f} dBm: NOMA {noma:6.3f} vs TDMA {oma:6.3f} "
          f"(+{100 * (noma - oma) / oma:.1f}%)")

print(f"\nCSV outputs written under ./{OUT}/")
