"""Wearable physiology benchmarking toolkit.

End-to-end pipeline for Empatica-E4 style recordings: session ingestion,
subject-level normalization and overlapping windowing, multimodal feature
extraction, linear and nonlinear classifier training, exact SHAP
attribution, subject-separated evaluation (holdout / grouped k-fold /
LOSO), modality ablation with a significance-testing cascade, and a
synthetic generator of labeled multimodal recordings for dataset-free
verification.
"""

__version__ = "0.1.0"
