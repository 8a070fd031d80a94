"""Training and inference orchestration.

Training follows the per-batch recipe: rebuild the adjacency from the
current embeddings, apply one puzzle move shared by the batch, run
attention and the three heads, corrupt the future block at a drawn step,
estimate the noise conditioned on (timestep, conditioning vector), and
take one Adam step on the combined loss.

Inference scores a window by generating M future blocks from split
streams, measuring each reconstruction against the actual future, and
aggregating. Windows are independent units: the parallel path runs the
same per-window computation on a thread pool, so it reproduces the
sequential results bit for bit.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import jigsaw
from .checkpoint import load_checkpoint, save_checkpoint
from .diffusion import (CHANNEL_PLAN, Denoiser, build_schedule, diffusion_loss,
                        forward_corrupt, sample_future_batch, smooth_l1)
from .errors import ConfigError, ContractViolation, ScoringError, TrainingError
from .forecaster import AttentionForecaster, flatten_past, graph_loss, puzzle_loss
from .graph import build_adjacency, init_node_embeddings
from .posedata import PoseTrack, Window, make_windows, normalize_window, skeleton_for
from .rng import RngStream
from .tensor import Adam, Tensor, no_grad

AGGREGATIONS = ("min", "mean", "median", "max")


@dataclass
class TrainConfig:
    """Hyperparameters; defaults mirror the reference setup."""

    lambda1: float = 0.01
    lambda2: float = 1.0
    lr: float = 1e-4
    batch_size: int = 1024
    epochs: int = 10
    L: int = 6
    l: int = 3
    D: int = 16
    delta: int = 5
    eta: int = 5
    T: int = 10
    scheduler: str = "cosine"
    beta1: float = 1e-4
    betaT: float = 0.01
    M: int = 50
    aggregation: str = "min"
    seed: int = 0
    puzzle_at_inference: bool = True
    puzzle_kind: str = "inter"
    use_puzzle: bool = True
    normalize: str = "center-scale"
    stride: int = 1
    hidden: int = 128
    score_transform: str = "smooth"
    t_per_sample: bool = False
    posterior_variance: str = "beta"
    graph_target: str = "future"
    precision: str = "float32"

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be non-negative")
        if not (0 < self.l < self.L):
            raise ConfigError(f"need 0 < l < L, got l={self.l}, L={self.L}")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}")
        if self.scheduler not in ("linear", "cosine"):
            raise ConfigError(f"scheduler must be linear or cosine")
        if self.puzzle_kind not in ("inter", "intra"):
            raise ConfigError("puzzle_kind must be inter or intra")
        if self.normalize not in ("center-scale", "none"):
            raise ConfigError("normalize must be center-scale or none")
        if self.score_transform not in ("smooth", "raw"):
            raise ConfigError("score_transform must be smooth or raw")
        if self.posterior_variance not in ("beta", "beta_bar"):
            raise ConfigError("posterior_variance must be beta or beta_bar")
        if self.graph_target not in ("future", "past"):
            raise ConfigError("graph_target must be future or past")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be float32 or float64")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64


_BOOL_FIELDS = {"puzzle_at_inference", "use_puzzle", "t_per_sample"}
_STR_FIELDS = {"scheduler", "aggregation", "puzzle_kind", "normalize",
               "score_transform", "posterior_variance", "graph_target", "precision"}


def parse_config_file(path) -> TrainConfig:
    """Flat ``key = value`` text; unknown keys are rejected."""
    path = Path(path)
    known = {f.name: f.type for f in fields(TrainConfig)}
    values: dict = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in _BOOL_FIELDS:
            if val.lower() not in ("true", "false", "0", "1"):
                raise ConfigError(f"{path}:{lineno}: bad boolean {val!r}")
            values[key] = val.lower() in ("true", "1")
        elif key in _STR_FIELDS:
            values[key] = val
        elif key in ("batch_size", "epochs", "L", "l", "D", "delta", "eta", "T",
                     "M", "seed", "stride", "hidden"):
            try:
                values[key] = int(val)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad integer {val!r}") from exc
        else:
            try:
                values[key] = float(val)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad number {val!r}") from exc
    return TrainConfig(**values)


def write_config_file(config: TrainConfig, path) -> None:
    lines = []
    for f in fields(TrainConfig):
        v = getattr(config, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Model container
# ---------------------------------------------------------------------------

_STR_CODES = {
    "scheduler": ("linear", "cosine"),
    "aggregation": AGGREGATIONS,
    "puzzle_kind": ("inter", "intra"),
    "normalize": ("center-scale", "none"),
    "score_transform": ("smooth", "raw"),
    "posterior_variance": ("beta", "beta_bar"),
    "graph_target": ("future", "past"),
    "precision": ("float32", "float64"),
}


class Model:
    """All trainable state plus the schedule, buildable from a checkpoint."""

    def __init__(self, config: TrainConfig, n_joints: int, n_channels: int = 2,
                 plan: tuple[int, ...] = CHANNEL_PLAN, pooled_joints: int | None = None,
                 t_dim: int = 16, rng: RngStream | None = None):
        self.config = config
        self.n_joints = n_joints
        self.n_channels = n_channels
        rng = rng or RngStream(config.seed)
        dtype = config.dtype

        self.n_classes = jigsaw.class_count(config.puzzle_kind, config.eta)
        self.V = init_node_embeddings(n_joints, config.D, rng.split(0), dtype)
        self.forecaster = AttentionForecaster(
            n_joints, config.D, n_channels, config.l, self.n_classes,
            hidden=config.hidden, rng=rng.split(1), dtype=dtype)
        skeleton = skeleton_for(n_joints).adjacency()
        self.schedule = build_schedule(config.scheduler, config.T, config.beta1, config.betaT)
        input_gain = np.sqrt(1.0 - np.concatenate([[1.0], self.schedule.alpha_bar]))
        self.denoiser = Denoiser(
            n_joints, n_channels, config.L - config.l, config.D, skeleton,
            plan=plan, pooled_joints=pooled_joints, t_dim=t_dim,
            input_gain=input_gain, rng=rng.split(2), dtype=dtype)

    def parameters(self) -> dict[str, Tensor]:
        params = {"graph/V": self.V}
        for name, p in self.forecaster.parameters().items():
            params[f"forecaster/{name}"] = p
        for name, p in self.denoiser.parameters().items():
            params[f"denoiser/{name}"] = p
        return params

    # -- conditioning forward ------------------------------------------------

    def encode(self, past: np.ndarray, A_prime: np.ndarray):
        """Run attention over the (possibly permuted) graph.

        past: (B, l, J, C). Returns (alpha, H, cond, forecast).
        """
        x_nodes = Tensor(flatten_past(past).astype(self.config.dtype))
        alpha = self.forecaster.attention(self.V, x_nodes, A_prime)
        H = self.forecaster.representations(alpha, x_nodes)
        cond = self.forecaster.condition(H)
        forecast = self.forecaster.forecast(self.V, H)
        return alpha, H, cond, forecast

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        arrays = {name: p.data for name, p in self.parameters().items()}
        cfg = self.config
        for f in fields(TrainConfig):
            v = getattr(cfg, f.name)
            if f.name in _STR_CODES:
                v = _STR_CODES[f.name].index(v)
            arrays[f"meta/{f.name}"] = np.array([float(v)])
        arrays["meta/n_joints"] = np.array([float(self.n_joints)])
        arrays["meta/n_channels"] = np.array([float(self.n_channels)])
        arrays["meta/plan"] = np.array(self.denoiser.plan, dtype=np.float64)
        arrays["meta/pooled_joints"] = np.array([float(self.denoiser.pooled_joints)])
        arrays["meta/t_dim"] = np.array([float(self.denoiser.t_dim)])
        save_checkpoint(arrays, path)

    @classmethod
    def load(cls, path) -> "Model":
        arrays = load_checkpoint(path)
        int_fields = {"batch_size", "epochs", "L", "l", "D", "delta", "eta", "T",
                      "M", "seed", "stride", "hidden"}
        kwargs = {}
        for f in fields(TrainConfig):
            raw = float(arrays[f"meta/{f.name}"][0])
            if f.name in _STR_CODES:
                kwargs[f.name] = _STR_CODES[f.name][int(raw)]
            elif f.name in _BOOL_FIELDS:
                kwargs[f.name] = bool(int(raw))
            elif f.name in int_fields:
                kwargs[f.name] = int(raw)
            else:
                kwargs[f.name] = raw
        config = TrainConfig(**kwargs)
        model = cls(
            config,
            n_joints=int(arrays["meta/n_joints"][0]),
            n_channels=int(arrays["meta/n_channels"][0]),
            plan=tuple(int(x) for x in arrays["meta/plan"]),
            pooled_joints=int(arrays["meta/pooled_joints"][0]),
            t_dim=int(arrays["meta/t_dim"][0]),
        )
        dtype = config.dtype
        for name, p in model.parameters().items():
            if name not in arrays:
                raise ContractViolation(f"checkpoint missing parameter '{name}'")
            if arrays[name].shape != p.data.shape:
                raise ContractViolation(
                    f"checkpoint shape mismatch for '{name}': "
                    f"{arrays[name].shape} vs {p.data.shape}")
            p.data = arrays[name].astype(dtype)
        return model


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def total_loss(l_graph, l_puzzle, l_diffusion, lambda1: float, lambda2: float):
    """lambda1 * (graph + lambda2 * puzzle) + diffusion."""
    return lambda1 * (l_graph + lambda2 * l_puzzle) + l_diffusion


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def build_training_arrays(tracks: list[PoseTrack], config: TrainConfig):
    """Normalize and stack every window into (past, future) arrays."""
    pasts, futures = [], []
    for tr in tracks:
        for w in make_windows(tr, config.L, config.l, config.stride):
            wn, _ = normalize_window(w, config.normalize)
            pasts.append(wn.past)
            futures.append(wn.future)
    if not pasts:
        raise ConfigError("dataset produced no training windows")
    dtype = config.dtype
    return np.stack(pasts).astype(dtype), np.stack(futures).astype(dtype)


def _puzzle_for_batch(A, config: TrainConfig, stream: RngStream):
    partition = jigsaw.extract_subgraphs(A, config.eta)
    if config.puzzle_kind == "inter":
        return jigsaw.shuffle_inter(A, partition, stream)
    return jigsaw.shuffle_intra(A, partition, stream)


def train(tracks: list[PoseTrack], config: TrainConfig,
          model: Model | None = None) -> tuple[Model, list[dict]]:
    """Fit on normal tracks; returns the model and per-epoch loss history."""
    past, future = build_training_arrays(tracks, config)
    n_windows = past.shape[0]
    J, C = past.shape[2], past.shape[3]

    root = RngStream(config.seed)
    if model is None:
        model = Model(config, J, C, rng=root.split(0))
    shuffle_s = root.split(1)
    puzzle_s = root.split(2)
    t_s = root.split(3)
    eps_s = root.split(4)

    params = model.parameters()
    adam = Adam(params, lr=config.lr)
    schedule = model.schedule
    dtype = config.dtype
    F = config.L - config.l

    history: list[dict] = []
    for epoch in range(config.epochs):
        order = shuffle_s.split(epoch).permutation(n_windows)
        sums = {"total": 0.0, "graph": 0.0, "puzzle": 0.0, "diffusion": 0.0}
        n_batches = 0
        for start in range(0, n_windows, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb_past = past[idx]
            xb_future = future[idx]
            B = xb_past.shape[0]

            A = build_adjacency(model.V, config.delta)
            if config.use_puzzle:
                A_prime, move = _puzzle_for_batch(A, config, puzzle_s)
            else:
                A_prime, move = A.A, None

            _, H, cond, forecast = model.encode(xb_past, A_prime)
            graph_block = xb_future if config.graph_target == "future" else xb_past
            l_graph = graph_loss(forecast, graph_block)
            if move is not None:
                logits = model.forecaster.puzzle_logits(cond)
                l_puzzle, _ = puzzle_loss(logits, move.class_id)
                puzzle_val = float(l_puzzle.data)
            else:
                l_puzzle, puzzle_val = 0.0, 0.0

            eps = eps_s.normal((B, F, J, C), dtype=dtype)
            if config.t_per_sample:
                t_val = np.asarray(t_s.integers(1, config.T, (B,)))
            else:
                t_val = int(t_s.integers(1, config.T))
            x_t = forward_corrupt(xb_future, t_val, eps, schedule)
            eps_hat = model.denoiser.predict(x_t, t_val, cond)
            l_diffusion, noise_val = diffusion_loss(eps, eps_hat)

            loss = total_loss(l_graph, l_puzzle, l_diffusion, config.lambda1, config.lambda2)
            if not np.isfinite(loss.data):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches} "
                    f"(graph={float(l_graph.data)}, puzzle={puzzle_val}, noise={noise_val})")

            adam.zero_grad()
            loss.backward()
            adam.step()

            sums["total"] += float(loss.data)
            sums["graph"] += float(l_graph.data)
            sums["puzzle"] += puzzle_val
            sums["diffusion"] += float(l_diffusion.data)
            n_batches += 1

        history.append({"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}})
    return model, history


def write_loss_history(history: list[dict], path) -> None:
    lines = ["epoch,total,graph,puzzle,diffusion"]
    for row in history:
        lines.append(f"{row['epoch']},{float(row['total'])!r},{float(row['graph'])!r},"
                     f"{float(row['puzzle'])!r},{float(row['diffusion'])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


@dataclass
class ScoreRecord:
    """Per-(window, actor) anomaly evidence."""

    video_id: str
    actor_id: str
    start_frame: int
    scores: np.ndarray  # (M,) per-generation reconstruction errors
    aggregate: float
    strategy: str


def aggregate_scores(scores, strategy: str) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ContractViolation("cannot aggregate an empty score set")
    if strategy == "min":
        return float(scores.min())
    if strategy == "max":
        return float(scores.max())
    if strategy == "mean":
        return float(scores.mean())
    if strategy == "median":
        return float(np.median(scores))
    raise ConfigError(f"unknown aggregation {strategy!r}")


def multi_actor_score(per_actor: list[float]) -> float:
    """Mean across actors plus the log span of the actor range."""
    if not per_actor:
        raise ContractViolation("multi_actor_score needs at least one actor")
    vals = np.asarray(per_actor, dtype=np.float64)
    if np.any(vals < 0):
        raise ContractViolation("actor aggregates must be non-negative")
    return float(vals.mean() + np.log((1.0 + vals.max()) / (1.0 + vals.min())))


def _prepare_inference_graph(model: Model):
    A = build_adjacency(model.V, model.config.delta)
    partition = None
    if model.config.puzzle_at_inference and model.config.use_puzzle:
        partition = jigsaw.extract_subgraphs(A, model.config.eta)
    return A, partition


def _score_window_prepared(model: Model, window: Window, M: int, strategy: str,
                           rng: RngStream, A, partition) -> ScoreRecord:
    cfg = model.config
    wn, _ = normalize_window(window, cfg.normalize)
    dtype = cfg.dtype

    with no_grad():
        if partition is not None:
            if cfg.puzzle_kind == "inter":
                A_prime, _ = jigsaw.shuffle_inter(A, partition, rng.split(0))
            else:
                A_prime, _ = jigsaw.shuffle_intra(A, partition, rng.split(0))
        else:
            A_prime = A.A
        _, _, cond, _ = model.encode(wn.past[None].astype(dtype), A_prime)
        if not np.all(np.isfinite(cond.data)):
            raise ScoringError(f"non-finite conditioning for window at "
                               f"({window.video_id}, {window.actor_id}, {window.start_frame})")

    streams = [rng.split(1 + m) for m in range(M)]
    generated = sample_future_batch(cond, model.schedule, model.denoiser, streams,
                                    cfg.posterior_variance)

    target = wn.future.astype(dtype)[None]
    resid = target - generated
    norms = np.sqrt((resid.astype(np.float64) ** 2).sum(axis=(1, 2, 3)))
    if cfg.score_transform == "smooth":
        scores = np.array([smooth_l1(v) for v in norms])
    else:
        scores = norms
    return ScoreRecord(
        video_id=window.video_id,
        actor_id=window.actor_id,
        start_frame=window.start_frame,
        scores=scores,
        aggregate=aggregate_scores(scores, strategy),
        strategy=strategy,
    )


def score_window(model: Model, window: Window, M: int, strategy: str,
                 rng: RngStream) -> ScoreRecord:
    """Score a single window with M generations drawn from split streams."""
    A, partition = _prepare_inference_graph(model)
    return _score_window_prepared(model, window, M, strategy, rng, A, partition)


def score_dataset(model: Model, tracks: list[PoseTrack], M: int | None = None,
                  strategy: str | None = None, seed: int = 0,
                  workers: int = 1) -> list[ScoreRecord]:
    """Score every window of every track.

    Each window draws from its own split of the seed stream, keyed by the
    window's position in the (video, actor, start) ordering, so results do
    not depend on scheduling; ``workers > 1`` fans windows out to a thread
    pool and reproduces the sequential output exactly.
    """
    cfg = model.config
    M = cfg.M if M is None else M
    strategy = cfg.aggregation if strategy is None else strategy
    windows: list[Window] = []
    for tr in tracks:
        windows.extend(make_windows(tr, cfg.L, cfg.l, cfg.stride))
    windows.sort(key=lambda w: (w.video_id, w.actor_id, w.start_frame))

    A, partition = _prepare_inference_graph(model)
    base = RngStream(seed)

    def work(i: int) -> ScoreRecord:
        return _score_window_prepared(model, windows[i], M, strategy,
                                      base.split(i), A, partition)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(work, range(len(windows))))
    return [work(i) for i in range(len(windows))]


def no_puzzle_variant(config: TrainConfig) -> TrainConfig:
    """Ablation twin: no shuffle applied, no puzzle loss, plain conditioning."""
    return replace(config, use_puzzle=False, puzzle_at_inference=False)
