"""Hazard-regularized variational autoencoder for survival-oriented image embeddings."""

from .analysis import encode_dataset, latent_traversal, pca, spearman
from .data import SyntheticConfig, generate_blob_dataset, read_dataset, split, write_dataset
from .model import CoxVAE, combined_loss, cox_partial_nll, elbo_loss, hazard_ratio
from .survstats import SurvivalTable, concordance_index, integrated_brier, kaplan_meier
from .training import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
