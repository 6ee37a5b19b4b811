"""dentvox: volumetric toolkit for 3D tooth instance segmentation tooling."""

from .volume import (LABEL, N_CLASSES, PROB_STACK, SCALAR, VECTOR3,
                     InstanceMap, InstanceRecord, Volume, argmax_labels,
                     one_hot, preprocess_scan, read_volume, resample,
                     write_volume)
from .geometry import (CentroidTable, PenaltyMatrix, QuadrantPenalty,
                       average_dentitions, build_penalty_matrix,
                       bundled_average_table, export_penalty_matrix,
                       intra_quadrant_distances, interpolate_third_molar,
                       load_centroids, load_penalty_matrix)
from .losses import (LossWeights, direction_loss, edt_loss, geo_wdl,
                     segmentation_loss, total_loss, wasserstein_mass,
                     weighted_cross_entropy)
from .fields import (DirectionField, EnergyField, descent_targets,
                     instance_edt, sobel_gradient)
from .watershed import (Seed, WatershedConfig, binarize_segmentation,
                        extract_seeds, instances_to_labels, majority_vote,
                        run_pipeline, seeded_watershed)
from .metrics import (MetricReport, binary_recall, classification_f1,
                      detection_accuracy, detection_match, dice_pr_rc,
                      evaluate, hausdorff_mm, nsd1)
from .phantom import PhantomSpec, corrupt, generate, standard_suite

__version__ = "0.1.0"

__all__ = [
    "LABEL", "N_CLASSES", "PROB_STACK", "SCALAR", "VECTOR3",
    "InstanceMap", "InstanceRecord", "Volume", "argmax_labels", "one_hot",
    "preprocess_scan", "read_volume", "resample", "write_volume",
    "CentroidTable", "PenaltyMatrix", "QuadrantPenalty",
    "average_dentitions", "build_penalty_matrix", "bundled_average_table",
    "export_penalty_matrix", "intra_quadrant_distances",
    "interpolate_third_molar", "load_centroids", "load_penalty_matrix",
    "LossWeights", "direction_loss", "edt_loss", "geo_wdl",
    "segmentation_loss", "total_loss", "wasserstein_mass",
    "weighted_cross_entropy",
    "DirectionField", "EnergyField", "descent_targets", "instance_edt",
    "sobel_gradient",
    "Seed", "WatershedConfig", "binarize_segmentation", "extract_seeds",
    "instances_to_labels", "majority_vote", "run_pipeline", "seeded_watershed",
    "MetricReport", "binary_recall", "classification_f1",
    "detection_accuracy", "detection_match", "dice_pr_rc", "evaluate",
    "hausdorff_mm", "nsd1",
    "PhantomSpec", "corrupt", "generate", "standard_suite",
]
