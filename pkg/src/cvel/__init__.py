"""Two-phase variational image segmentation with elastica and landmark
constraints, solved by constraint splitting.

The solver runs in four modes depending on which terms are active:
plain region fidelity plus length (cv), with landmarks (cvl), with the
curvature-squared elastica weight (cve), or both (cvel).
"""

from .model import (LandmarkSet, ModelParams, PRESETS, RegionMeans,
                    energy_cvel, landmark_mask, preset_params, q_field,
                    region_means)
from .pipeline import (Contour, Scenario, dice, extract_contour, hausdorff,
                       init_phi, load_image, load_landmarks, mask_from_phi,
                       render_overlay, save_image, save_landmarks,
                       synth_scenario)
from .solver import (ConvergenceReport, SolverState, run_admm,
                     run_cv_gradient_descent, step)

__version__ = "0.1.0"

__all__ = [
    "Contour", "ConvergenceReport", "LandmarkSet", "ModelParams", "PRESETS",
    "RegionMeans", "Scenario", "SolverState", "dice", "energy_cvel",
    "extract_contour", "hausdorff", "init_phi", "landmark_mask", "load_image",
    "load_landmarks", "mask_from_phi", "preset_params", "q_field",
    "region_means", "render_overlay", "run_admm", "run_cv_gradient_descent",
    "save_image", "save_landmarks", "step", "synth_scenario",
]
