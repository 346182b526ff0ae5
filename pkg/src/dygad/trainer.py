"""Chronological splits, extreme-label selection, training loop, ablations.

Splits are contiguous index ranges over the time-sorted edge sequence;
labels are only ever read from the selected labeled subset of the training
split (ground truth stays on the store for evaluation). Neighbor sampling
during validation and test may read all earlier events regardless of split:
splits gate labels and loss participation, not graph history.

Training is a single-threaded deterministic loop: per epoch the training
edges are reshuffled (seeded), each batch builds one ego and one context
subgraph per edge (resampled every epoch with per-edge derived seeds),
encodes them with the two independent encoders, applies the objective, and
takes one Adam step. The snapshot with the best validation AUC wins.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .config import ExperimentConfig
from .encoder import EncoderSettings, GraphEncoder, pack
from .evaluation import auc_of_split
from .inject import round_half_away
from .objective import Heads, HeadSettings, LossBatch, total_loss
from .tgraph import ANOMALY, EventStore, sample_subgraph


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.5
    val: float = 0.2
    test: float = 0.3

    def __post_init__(self):
        fracs = (self.train, self.val, self.test)
        if any(f <= 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"fractions must be positive and sum to 1: {fracs}")


@dataclass
class ChronoSplits:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray


def split_chronological(store: EventStore, spec: SplitSpec = SplitSpec()) -> ChronoSplits:
    """Boundary indices floor(train*|E|) and floor((train+val)*|E|)."""
    m = store.n_edges
    b1 = int(np.floor(spec.train * m))
    b2 = int(np.floor((spec.train + spec.val) * m))
    splits = ChronoSplits(
        train_idx=np.arange(0, b1, dtype=np.int64),
        val_idx=np.arange(b1, b2, dtype=np.int64),
        test_idx=np.arange(b2, m, dtype=np.int64),
    )
    for name, idx in (("train", splits.train_idx), ("val", splits.val_idx),
                      ("test", splits.test_idx)):
        if len(idx) == 0:
            raise ValueError(f"{name} split is empty with {m} edges")
    return splits


@dataclass(frozen=True)
class LabelBudget:
    n_anom: int
    seed: int = 0


def select_labels(store: EventStore, train_idx: np.ndarray,
                  budget: LabelBudget) -> dict[int, int]:
    """Uniformly pick n_anom anomalies plus proportionally many normals.

    Returns {store position -> label} for the labeled subset of the
    training split; everything else is treated as unlabeled.
    """
    labels = store.labels[train_idx]
    anom_pos = train_idx[labels == ANOMALY]
    norm_pos = train_idx[labels != ANOMALY]
    if len(anom_pos) < budget.n_anom:
        raise ValueError(
            f"requested {budget.n_anom} labeled anomalies but the training "
            f"split has only {len(anom_pos)}"
        )
    n_norm = round_half_away(len(norm_pos) * budget.n_anom / len(anom_pos))
    rng = np.random.default_rng([budget.seed, 3])
    chosen_anom = rng.choice(anom_pos, size=budget.n_anom, replace=False)
    chosen_norm = rng.choice(norm_pos, size=n_norm, replace=False)
    labeled = {int(p): 1 for p in chosen_anom}
    labeled.update({int(p): 0 for p in chosen_norm})
    return labeled


@dataclass(frozen=True)
class AblationFlags:
    no_local_mha: bool = False
    no_global_mha: bool = False
    no_time_embed: bool = False
    no_contrastive: bool = False
    no_ego_context: bool = False


class Model:
    """Ego encoder, context encoder (independent weights), and loss heads."""

    def __init__(self, config: ExperimentConfig, feat_dim: int,
                 time_scale: float = 1.0):
        self.config = config
        self.feat_dim = feat_dim
        self.time_scale = time_scale
        enc_settings = EncoderSettings(
            layers=config.layers, heads=config.heads, hidden=config.hidden,
            time_dim=config.time_dim, feat_dim=feat_dim,
            degree_buckets=config.degree_buckets, time_scale=time_scale,
            no_local_mha=config.no_local_mha,
            no_global_mha=config.no_global_mha,
            no_time_embed=config.no_time_embed,
            conventional_local_queries=config.conventional_local_queries,
        )
        weight = 0.0 if config.no_contrastive else config.contrastive_weight
        head_settings = HeadSettings(
            hidden=config.hidden, contrastive_weight=weight,
            orientation=config.orientation,
            labeled_only=config.hsc_labeled_only,
            no_ego_context=config.no_ego_context,
        )
        seed = config.model_seed
        self.enc_ego = GraphEncoder(enc_settings, seed, prefix="ego")
        self.enc_ctx = GraphEncoder(enc_settings, seed, prefix="ctx")
        self.heads = Heads(head_settings, seed, prefix="heads")

    @property
    def fanouts(self):
        return list(self.config.fanouts)

    @property
    def shared_hop1_budget(self) -> bool:
        return self.config.shared_hop1_budget

    def parameters(self) -> dict[str, T.Tensor]:
        out: dict[str, T.Tensor] = {}
        for prefix, params in (("ego", self.enc_ego.params),
                               ("ctx", self.enc_ctx.params),
                               ("heads", self.heads.params)):
            for name, p in params.items():
                out[f"{prefix}.{name}"] = p
        return out

    def trainable_parameters(self) -> dict[str, T.Tensor]:
        """Parameters reachable by gradients under the active config."""
        params = self.parameters()
        if self.heads.settings.contrastive_weight == 0.0:
            params = {k: v for k, v in params.items()
                      if not k.startswith("heads.fp.")}
        return params

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"checkpoint shape mismatch for {name}: "
                    f"{arr.shape} vs {p.data.shape}"
                )
            p.data[...] = arr


def apply_ablations(flags: AblationFlags, model: Model) -> Model:
    """Model variant rebuilt with the given switches.

    Parameter init streams are keyed by name, so components shared with the
    unablated model start from identical values.
    """
    cfg = replace(
        model.config,
        no_local_mha=flags.no_local_mha,
        no_global_mha=flags.no_global_mha,
        no_time_embed=flags.no_time_embed,
        no_contrastive=flags.no_contrastive,
        no_ego_context=flags.no_ego_context,
    )
    return Model(cfg, model.feat_dim, model.time_scale)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_auc: float
    seconds: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


@dataclass
class FitResult:
    model: Model
    log: list
    best_epoch: int
    best_val_auc: float
    splits: ChronoSplits
    labeled: dict[int, int]


def time_scale_of(store: EventStore, train_idx: np.ndarray,
                  span: float = 1000.0) -> float:
    """Affine scale mapping the training time range onto [0, span]."""
    ts = store.t[train_idx]
    width = float(ts.max() - ts.min())
    return span / width if width > 0 else 1.0


def _batch_pairs(model: Model, store: EventStore, positions, seeds):
    # one seed drives both views so the context graph is the ego graph's
    # own neighborhood minus the center event, not an independent resample
    ego_subs, ctx_subs = [], []
    for pos, seed in zip(positions, seeds):
        ego_subs.append(sample_subgraph(store, pos, model.fanouts, True,
                                        rng_seed=seed,
                                        shared_hop1_budget=model.shared_hop1_budget))
        ctx_subs.append(sample_subgraph(store, pos, model.fanouts, False,
                                        rng_seed=seed,
                                        shared_hop1_budget=model.shared_hop1_budget))
    packed_ego = pack(ego_subs)
    packed_ctx = pack(ctx_subs)
    z_ego = model.enc_ego.encode_packed(packed_ego)
    z_ctx = model.enc_ctx.encode_packed(packed_ctx)
    h_ego = model.heads.readout(z_ego, packed_ego.src_rows, packed_ego.dst_rows)
    h_ctx = model.heads.readout(z_ctx, packed_ctx.src_rows, packed_ctx.dst_rows)
    return h_ego, h_ctx


def fit(store: EventStore, config: ExperimentConfig,
        progress=None) -> FitResult:
    """Train for the configured number of epochs; return the best snapshot.

    The training loop reads ground-truth labels only through the selected
    labeled subset. Validation AUC (fixed evaluation seed, cached
    subgraphs) picks the returned parameters.
    """
    spec = SplitSpec(config.train_frac, config.val_frac, config.test_frac)
    splits = split_chronological(store, spec)
    labeled = select_labels(store, splits.train_idx,
                            LabelBudget(config.n_labeled_anomalies,
                                        config.label_seed))
    scale = time_scale_of(store, splits.train_idx)
    model = Model(config, store.feat_dim, time_scale=scale)
    opt = T.Adam(model.trainable_parameters(), lr=config.learning_rate)
    shuffle_rng = np.random.default_rng([config.train_seed, 11])
    eval_cache: dict = {}
    log: list[EpochRecord] = []
    best_auc = -np.inf
    best_epoch = -1
    best_state: dict[str, np.ndarray] = {}
    n_train = len(splits.train_idx)

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(splits.train_idx)
        loss_sum = 0.0
        for batch_id, lo in enumerate(range(0, n_train, config.batch_size)):
            chunk = order[lo:lo + config.batch_size]
            y = np.array([labeled.get(int(p), 0) for p in chunk], dtype=np.float64)
            is_labeled = np.array([int(p) in labeled for p in chunk], dtype=bool)
            if (model.heads.settings.labeled_only and not is_labeled.any()
                    and (model.heads.settings.contrastive_weight == 0.0
                         or len(chunk) == 1)):
                continue  # nothing in this batch can contribute a loss term
            seeds = [[config.train_seed, epoch, int(p)] for p in chunk]
            h_ego, h_ctx = _batch_pairs(model, store, chunk, seeds)
            loss = total_loss(LossBatch.assemble(h_ego, h_ctx, y, is_labeled),
                              model.heads)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss in epoch {epoch}, batch {batch_id}")
            loss_sum += value * len(chunk)
            T.backward(loss)
            opt.step()
        val_auc = auc_of_split(model, store, splits.val_idx, config.eval_seed,
                               cache=eval_cache)
        record = EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / n_train,
            val_auc=float(val_auc),
            seconds=time.perf_counter() - started,
        )
        log.append(record)
        if progress is not None:
            progress(record)
        if val_auc > best_auc:
            best_auc = float(val_auc)
            best_epoch = epoch
            best_state = model.state_dict()

    model.load_state(best_state)
    return FitResult(model=model, log=log, best_epoch=best_epoch,
                     best_val_auc=best_auc, splits=splits, labeled=labeled)


def write_training_log(log, path) -> None:
    with open(path, "w") as fh:
        for record in log:
            fh.write(record.to_json() + "\n")
