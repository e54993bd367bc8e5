"""holofocus: hologram autofocus by classical sharpness search and tiny regression networks."""

from .optics import (
    OpticalConfig, ComplexField, PatternKind, Modality, PatternSpec, HologramRecord,
    DatasetManifest, transfer_function, propagate, make_pattern, record_hologram,
    generate_dataset, read_hologram, write_hologram,
)
from .focus import Metric, FocusCurve, focus_metric, focus_curve, autofocus_classical
from .models import ModelSpec, ViTConfig, SwinConfig, VggConfig, build, load_model

__version__ = "0.1.0"
