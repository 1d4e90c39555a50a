"""Frozen configurations for the reference end-to-end evaluation."""

from .forest import ForestConfig
from .rrae import RraeHyperparams
from .synthgen import SynthConfig

ACCEPTANCE_SEEDS = (42, 43, 44, 45, 46)

# run 0 trains the autoencoder path; the forest trains on the first half
ACCEPTANCE_RF_TRAIN_RUNS = (0, 1, 2, 3, 4)
ACCEPTANCE_VAL_RUNS = (5, 6, 7, 8, 9)
ACCEPTANCE_RRAE_TRAIN_RUNS = (0,)
ACCEPTANCE_SLOPE_TRUNCATE = 220


def acceptance_synth_config(seed=42):
    """The 2000-node, 10-run reference dataset."""
    return SynthConfig(
        n_nodes=2000,
        n_runs=10,
        timesteps=289,
        peak_step=220,
        dispersed_fraction=0.5,
        dispersed_spread_mm=(15.0, 50.0),
        noise_floor_mm=1.15,
        wiggle_amplitude_mm=0.5,
        branch_min_level_frac=0.15,
        seed=seed,
    )


def acceptance_rrae_hyperparams(seed=42):
    return RraeHyperparams(
        max_rank=8,
        latent_dim=24,
        recon_weight=0.2,
        cls_weight=5.0,
        joint_epochs=100,
        finetune_epochs=50,
        seed=seed,
    )


def acceptance_forest_config(seed=42):
    return ForestConfig(n_trees=50, seed=seed)
