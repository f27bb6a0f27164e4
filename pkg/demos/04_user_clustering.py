"""User clustering on channel state: rough K-means pass, then mixture EM.

Shows the full pipeline on a 10-user draw (the scale used throughout the
experiments): normalization, the threshold-gated rough partition, and the
EM refinement with its monotone log-likelihood.
"""

import numpy as np

from irsnoma_lab.channel import RicianConfig, ScenarioGeometry, default_region, sample_channels
from irsnoma_lab.clustering import (
    cluster_users,
    em_e_step,
    em_m_step,
    init_gmm,
    log_likelihood,
    normalize_channels,
    rough_partition,
)
from irsnoma_lab.mobility import rejection_sample_positions

region_users = rejection_sample_positions(default_region(), 10, seed=11)
geometry = ScenarioGeometry(bs_position=[0.0, -60.0, 10.0], user_positions=region_users)
channels = sample_channels(geometry, RicianConfig(), 11, k_elements=25, n_antennas=5)

print("=== normalize CSI and rough-partition ===")
csi = normalize_channels(channels.user_channels)
print("feature space:", csi.features.shape, "(real/imag stacking of unit rows)")
assignment, centers = rough_partition(
    csi.features, 5, seed=2, gate_vectors=csi.normalized
)
print("rough occupancy:", np.bincount(assignment, minlength=5).tolist())

print("\n=== EM refinement, likelihood must never decrease ===")
params = init_gmm(assignment, csi.features)
ll = log_likelihood(params, csi.features)
print(f"iter  0: log-likelihood {ll:.4f}")
for it in range(1, 6):
    params = em_m_step(em_e_step(params, csi.features), csi.features)
    new_ll = log_likelihood(params, csi.features)
    print(f"iter {it:2d}: log-likelihood {new_ll:.4f} (delta {new_ll - ll:+.2e})")
    ll = new_ll

print("\n=== one-call pipeline with the tight convergence rule ===")
fit = cluster_users(channels.user_channels, 5, epsilon=1e-15, seed=2)
print("converged:", fit.converged, "after", fit.n_iter, "iterations")
print("final occupancy:", list(fit.occupancy()))
print("mixture weights:", np.round(fit.params.weights, 3).tolist())
