from .checkpoint import load_checkpoint, parameter_checksum, save_checkpoint
from .field import (
    FUSION_MODES,
    FieldInputs,
    ModelConfig,
    TopoFieldModel,
    TriPlaneField,
    fourier_features,
    inverse_distance_weights,
    sample_planes,
    triplane_project,
)
from .inputs import prepare_inputs
