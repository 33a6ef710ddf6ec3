"""Python bindings for the udeepsc C++ core."""

from ._core import (
    UdscError,
    adaptation_loss,
    awgn,
    bleu,
    config_hash,
    config_json,
    exit_layer,
    psnr_from_mse,
    read_results,
    recall_at_1,
    similarity,
    snr_to_sigma2,
    sweep,
    tasks,
    train,
    version,
)

__all__ = [
    "UdscError",
    "adaptation_loss",
    "awgn",
    "bleu",
    "config_hash",
    "config_json",
    "exit_layer",
    "psnr_from_mse",
    "read_results",
    "recall_at_1",
    "similarity",
    "snr_to_sigma2",
    "sweep",
    "tasks",
    "train",
    "version",
]
