"""moblink: spatio-temporal entity linkage across anonymized mobility datasets."""

__version__ = "0.1.0"

from .geo import CellId, LatLon, cell_at, cell_distance_km, haversine_km, parent
from .history import (HistoryConfig, MobilityHistory, Record, TimeLocationBin,
                      build_histories)
from .linkage import (GmmFit, LinkageResult, WeightedEdge, expected_prf,
                      fit_gmm2, greedy_match, link, stop_threshold)
from .lsh import (BandingPlan, LshParams, Placeholder, Signature, band_count,
                  banding_plan, build_signatures, candidate_pairs,
                  dominating_cell, lambert_w, signature_similarity)
from .sampling import MobilityModel, SampleConfig, gen_synthetic, sample_pair
from .similarity import (DatasetStats, SimilarityParams, dataset_stats, idf,
                         length_norm, mfn_pairs, mnn_pairs, proximity,
                         runaway_km, score_pair)
from .tuning import TuningCurve, elbow, tune_spatial_level, tuning_curve

__all__ = [
    "BandingPlan", "CellId", "DatasetStats", "GmmFit", "HistoryConfig",
    "LatLon", "LinkageResult", "LshParams", "MobilityHistory", "MobilityModel",
    "Placeholder", "Record", "SampleConfig", "Signature", "SimilarityParams",
    "TimeLocationBin", "TuningCurve", "WeightedEdge", "band_count",
    "banding_plan", "build_histories", "build_signatures", "candidate_pairs",
    "cell_at", "cell_distance_km", "dataset_stats", "dominating_cell", "elbow",
    "expected_prf", "fit_gmm2", "gen_synthetic", "greedy_match", "haversine_km",
    "idf", "lambert_w", "length_norm", "link", "mfn_pairs", "mnn_pairs",
    "parent", "proximity", "runaway_km", "sample_pair", "score_pair",
    "signature_similarity", "stop_threshold", "tune_spatial_level",
    "tuning_curve",
]
