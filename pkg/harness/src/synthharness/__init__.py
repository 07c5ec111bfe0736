"""Desk-scale experiment harness: synthetic artefact-biased datasets, small
CNN training, and tensor export for the salaudit CLI."""

from .synth import BadSpec, SyntheticSpec, generate_dataset  # noqa: F401
from .train import SmallCNN, TrainingDiverged, TrainResult, train_and_export  # noqa: F401
