"""Density-matrix simulation of circuits under gate noise, twirling and readout error."""

from dynatherm.noisy.channels import (
    Attachment,
    Channel,
    CoherentRotation,
    Depolarizing,
    GlobalDepolarizing,
    NoiseModel,
    PauliChannel,
    ReadoutModel,
    apply_channel,
    apply_kraus,
    kraus_completeness_error,
    load_preset,
)
from dynatherm.noisy.density import (
    DensityMatrix,
    apply_gate,
    pauli_transfer_matrix,
)
from dynatherm.noisy.simulate import (
    NoisyRun,
    ibu_unfold,
    measurement_probabilities,
    prepare_product_state,
    run_noisy,
    simulate,
    total_variation,
)
from dynatherm.noisy.twirl import RCPolicy, dress_cnot, dressings, equal_up_to_phase, rc_dress

__all__ = [
    "Attachment", "Channel", "CoherentRotation", "Depolarizing", "DensityMatrix",
    "GlobalDepolarizing", "NoiseModel", "NoisyRun", "PauliChannel", "RCPolicy", "ReadoutModel",
    "apply_channel", "apply_gate", "apply_kraus", "dress_cnot", "dressings", "equal_up_to_phase",
    "ibu_unfold", "kraus_completeness_error", "load_preset", "measurement_probabilities",
    "pauli_transfer_matrix", "prepare_product_state", "rc_dress", "run_noisy", "simulate",
    "total_variation",
]
