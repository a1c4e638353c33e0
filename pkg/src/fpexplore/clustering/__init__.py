from .dpgmm import (ACTIVE_WEIGHT, VARIANCE_FLOOR, EmptyInputError, MixtureModel,
                    closed_form_single_component, fit_dpgmm, max_components,
                    model_from_text, model_to_text, warm_start_usable)
from .kmeans import binary_coherence, distortion, fit_kmeans, nearest_centroid
from .priority import (ConsistencyError, PriorityEntry, allocate_component,
                       cluster_coherence, joint_by_id, prioritize, responsibility)

__all__ = [
    "ACTIVE_WEIGHT", "VARIANCE_FLOOR", "EmptyInputError", "MixtureModel",
    "closed_form_single_component", "fit_dpgmm", "max_components", "model_from_text",
    "model_to_text", "warm_start_usable", "binary_coherence", "distortion", "fit_kmeans",
    "nearest_centroid", "ConsistencyError", "PriorityEntry", "allocate_component",
    "cluster_coherence", "joint_by_id", "prioritize", "responsibility",
]
