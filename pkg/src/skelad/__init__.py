"""Skeleton-sequence anomaly detection.

A joint graph is learned from trainable per-joint embeddings, perturbed
by graph-level jigsaw moves as a self-supervised pretext task, encoded by
single-layer graph attention into a conditioning vector, and used to
steer a denoising diffusion model that reconstructs future frames.
Anomaly scores are reconstruction errors aggregated over many diverse
generations.
"""

from .diffusion import (Denoiser, DiffusionSchedule, build_schedule,
                        diffusion_loss, forward_corrupt, forward_transition,
                        reverse_step, sample_future, sample_future_batch,
                        smooth_l1, timestep_embedding)
from .errors import (ConfigError, ContractViolation, DataError,
                     DegeneratePartition, EvalError, ParseError, ScoringError,
                     SkeladError, TrainingError)
from .evaluate import (FrameScoreSeries, RocResult, auroc, auroc_values,
                       emit_report, frame_scores, param_count)
from .forecaster import AttentionForecaster, graph_loss, puzzle_loss
from .graph import Adjacency, build_adjacency, cosine_similarity, init_node_embeddings
from .jigsaw import (Partition, PuzzleMove, class_count, extract_subgraphs,
                     node_density, shuffle_inter, shuffle_intra)
from .pipeline import (Model, ScoreRecord, TrainConfig, aggregate_scores,
                       multi_actor_score, no_puzzle_variant, parse_config_file,
                       score_dataset, score_window, total_loss, train)
from .posedata import (AnomalySpan, PoseTrack, SyntheticSpec, Window,
                       generate_synthetic, load_pose_dataset, make_windows,
                       normalize_window)
from .rng import RngStream
from .tensor import Adam, Tensor, adam_step, grad_check, no_grad

__version__ = "0.1.0"
