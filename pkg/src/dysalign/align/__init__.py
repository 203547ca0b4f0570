"""Emission grids, aligners (CTC, CSA, FCSA), LCS sampling and alignment losses."""
from .csa import csa_backward, csa_forward, csa_step
from .ctc import ctc_loss, min_frames, monotonic_forward, monotonic_log_likelihood, monotonic_step
from .emission import TransitionModel, emission_grid, sample_token_embeddings
from .fcsa import (PASS_INSERTED, PASS_REMOVED, FcsaGrid, FcsaNetwork, Offsets, backward_bound, fcsa_backward, fcsa_forward, forward_bound,
                   pre_alignment_loss, sample_offsets)
from .lcs import LcsAlignment, export_alignment_csv, export_grid_csv, lcs_align, sample_alignment
from .losses import LOSS_NAMES, consistency_loss, final_loss

__all__ = [
    "PASS_INSERTED", "PASS_REMOVED", "csa_step", "min_frames", "monotonic_step",
    "FcsaGrid", "FcsaNetwork", "LOSS_NAMES", "LcsAlignment", "Offsets", "TransitionModel", "backward_bound",
    "consistency_loss", "csa_backward", "csa_forward", "ctc_loss", "emission_grid", "export_alignment_csv",
    "export_grid_csv", "fcsa_backward", "fcsa_forward", "final_loss", "forward_bound", "lcs_align",
    "monotonic_forward", "monotonic_log_likelihood", "pre_alignment_loss", "sample_alignment",
    "sample_offsets", "sample_token_embeddings",
]
