"""Readout heads, hypersphere and contrastive losses, anomaly scores.

An edge is represented by the squared distance r between its ego-graph and
context-graph readouts. The hypersphere loss is a cross-entropy variant
over exp(-r) with two orientations:

- ``center-anomalies`` (default): labeled anomalies are pulled toward
  r = 0 and normals pushed away; the matching anomaly score is exp(-r).
- ``center-normals``: the roles swap (normals compact around the center);
  the score becomes 1 - exp(-r).

Scoring always follows the active training orientation, so flipping the
flag and complementing scores leaves rankings unchanged.

The contrastive loss compares projector outputs by cosine similarity
mapped to (0, 1) via s -> (s + 1) / 2, pulling an edge's ego and own
context together and pushing apart its pairing with another edge's
context (within-batch cyclic shift by one).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T

R_FLOOR = 1e-8
SIM_EPS = 1e-7

ORIENT_CENTER_ANOMALIES = "center-anomalies"
ORIENT_CENTER_NORMALS = "center-normals"
ORIENTATIONS = (ORIENT_CENTER_ANOMALIES, ORIENT_CENTER_NORMALS)


@dataclass
class PairRepresentation:
    """Ego and context readouts of one edge."""
    h_ego: np.ndarray
    h_ctx: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return self.h_ego - self.h_ctx


@dataclass(frozen=True)
class HeadSettings:
    hidden: int = 128
    contrastive_weight: float = 0.01
    orientation: str = ORIENT_CENTER_ANOMALIES
    labeled_only: bool = False
    no_ego_context: bool = False

    def __post_init__(self):
        if self.contrastive_weight < 0:
            raise ValueError("contrastive_weight must be >= 0")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"unknown orientation {self.orientation!r}")


class Heads:
    """Two-layer readout MLP f_o (2d -> d -> d) and projector f_p (d -> d -> d)."""

    def __init__(self, settings: HeadSettings, seed: int, prefix: str = "heads"):
        self.settings = settings
        d = settings.hidden
        self.params = {
            "fo.w1": T.glorot((2 * d, d), f"{prefix}.fo.w1", seed),
            "fo.b1": T.zeros_param((d,)),
            "fo.w2": T.glorot((d, d), f"{prefix}.fo.w2", seed),
            "fo.b2": T.zeros_param((d,)),
            "fp.w1": T.glorot((d, d), f"{prefix}.fp.w1", seed),
            "fp.b1": T.zeros_param((d,)),
            "fp.w2": T.glorot((d, d), f"{prefix}.fp.w2", seed),
            "fp.b2": T.zeros_param((d,)),
        }

    def readout(self, z: T.Tensor, src_rows: np.ndarray,
                dst_rows: np.ndarray) -> T.Tensor:
        """f_o(concat(z[src], z[dst])), one row per edge; order is (src, dst)."""
        n = z.data.shape[0]
        for rows in (src_rows, dst_rows):
            if len(rows) and (np.min(rows) < 0 or np.max(rows) >= n):
                raise T.ShapeError(f"readout: row index out of range for {n} rows")
        h = T.concat_last([T.gather_rows(z, np.asarray(src_rows, dtype=np.int64)),
                           T.gather_rows(z, np.asarray(dst_rows, dtype=np.int64))])
        hid = T.relu(T.add(T.matmul(h, self.params["fo.w1"]), self.params["fo.b1"]))
        return T.add(T.matmul(hid, self.params["fo.w2"]), self.params["fo.b2"])

    def project(self, h: T.Tensor) -> T.Tensor:
        hid = T.relu(T.add(T.matmul(h, self.params["fp.w1"]), self.params["fp.b1"]))
        return T.add(T.matmul(hid, self.params["fp.w2"]), self.params["fp.b2"])


def _pair_distance(h_ego: T.Tensor, h_ctx: T.Tensor,
                   no_ego_context: bool = False) -> T.Tensor:
    """Clamped squared distance r per row (or squared ego norm when ablated)."""
    arg = h_ego if no_ego_context else T.sub(h_ego, h_ctx)
    return T.clamp(T.rowwise_dot(arg, arg), lo=R_FLOOR)


def hypersphere_terms(h_ego: T.Tensor, h_ctx: T.Tensor, y: np.ndarray,
                      orientation: str = ORIENT_CENTER_ANOMALIES,
                      no_ego_context: bool = False) -> T.Tensor:
    """Per-edge hypersphere classification loss over r = ||h_ego - h_ctx||^2.

    The center-attracted class contributes r, the other -log(1 - exp(-r)).
    """
    y = np.asarray(y, dtype=np.float64)
    r = _pair_distance(h_ego, h_ctx, no_ego_context)
    if orientation == ORIENT_CENTER_ANOMALIES:
        w_center, w_out = y, 1.0 - y
    elif orientation == ORIENT_CENTER_NORMALS:
        w_center, w_out = 1.0 - y, y
    else:
        raise ValueError(f"unknown orientation {orientation!r}")
    pull = T.mul(T.Tensor(w_center), r)
    push = T.mul(T.Tensor(-w_out), T.log1mexp(r))
    return T.add(pull, push)


def contrastive_terms(p_ego: T.Tensor, p_ctx: T.Tensor,
                      neg_idx: np.ndarray) -> T.Tensor:
    """-log S(ego, own ctx) - log(1 - S(ego, partner ctx)) per edge.

    S maps cosine similarity onto (0, 1) and is clamped away from the
    endpoints; zero-norm inputs fall back to cosine 0 (S = 1/2).
    """
    p_neg = T.gather_rows(p_ctx, np.asarray(neg_idx, dtype=np.int64))

    def sim(a, b):
        s = T.scale(T.add_scalar(T.rowwise_cosine(a, b), 1.0), 0.5)
        return T.clamp(s, lo=SIM_EPS, hi=1.0 - SIM_EPS)

    s_pos = sim(p_ego, p_ctx)
    s_neg = sim(p_ego, p_neg)
    one_minus = T.add_scalar(T.scale(s_neg, -1.0), 1.0)
    return T.add(T.scale(T.log(s_pos), -1.0), T.scale(T.log(one_minus), -1.0))


@dataclass
class LossBatch:
    """Per-edge inputs of the training objective."""
    h_ego: T.Tensor          # (B, d) ego readouts
    h_ctx: T.Tensor          # (B, d) context readouts
    y: np.ndarray            # labels; unlabeled entries hold 0
    labeled: np.ndarray      # bool mask of labeled edges
    neg_idx: np.ndarray      # contrastive partner per edge

    @classmethod
    def assemble(cls, h_ego, h_ctx, y, labeled):
        b = len(y)
        neg = (np.arange(b) + 1) % b
        return cls(h_ego, h_ctx, np.asarray(y, dtype=np.float64),
                   np.asarray(labeled, dtype=bool), neg)


def total_loss(batch: LossBatch, heads: Heads) -> T.Tensor:
    """Mean hypersphere term plus weighted mean contrastive term.

    Unlabeled edges enter the hypersphere term as normals unless
    ``labeled_only`` restricts it to the labeled subset. The contrastive
    term covers every edge and is skipped for single-edge batches (no
    within-batch partner exists).
    """
    s = heads.settings
    b = batch.h_ego.data.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    hs = hypersphere_terms(batch.h_ego, batch.h_ctx, batch.y,
                           orientation=s.orientation,
                           no_ego_context=s.no_ego_context)
    if s.labeled_only:
        weights = batch.labeled.astype(np.float64)
        n_active = weights.sum()
        if n_active == 0:
            loss = None
        else:
            loss = T.scale(T.sum_all(T.mul(T.Tensor(weights), hs)), 1.0 / n_active)
    else:
        loss = T.mean_all(hs)

    if s.contrastive_weight > 0 and b > 1:
        cc = contrastive_terms(heads.project(batch.h_ego),
                               heads.project(batch.h_ctx), batch.neg_idx)
        weighted = T.scale(T.mean_all(cc), s.contrastive_weight)
        loss = weighted if loss is None else T.add(loss, weighted)
    if loss is None:
        raise ValueError("batch contributes no loss terms "
                         "(labeled_only with no labeled edges and no contrastive term)")
    return loss


def anomaly_scores(h_ego: np.ndarray, h_ctx: np.ndarray,
                   orientation: str = ORIENT_CENTER_ANOMALIES,
                   no_ego_context: bool = False) -> np.ndarray:
    """Per-edge anomaly score consistent with the training orientation."""
    diff = h_ego if no_ego_context else h_ego - h_ctx
    r = np.sum(diff * diff, axis=1)
    s = np.exp(-r)
    if orientation == ORIENT_CENTER_NORMALS:
        s = 1.0 - s
    return s


# -- single-pair conveniences (thin wrappers over the batched path) ---------

def hypersphere_loss(pair: PairRepresentation, y: int,
                     orientation: str = ORIENT_CENTER_ANOMALIES) -> float:
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y}")
    out = hypersphere_terms(T.Tensor(pair.h_ego.reshape(1, -1)),
                            T.Tensor(pair.h_ctx.reshape(1, -1)),
                            np.array([y]), orientation=orientation)
    return out.item()


def contrastive_loss(p_ego: np.ndarray, p_ctx: np.ndarray,
                     p_neg: np.ndarray) -> float:
    out = contrastive_terms(T.Tensor(np.stack([p_ego, p_ego])),
                            T.Tensor(np.stack([p_ctx, p_neg])),
                            np.array([1, 0]))
    return float(out.data[0])


def anomaly_score(pair: PairRepresentation,
                  orientation: str = ORIENT_CENTER_ANOMALIES) -> float:
    return float(anomaly_scores(pair.h_ego.reshape(1, -1),
                                pair.h_ctx.reshape(1, -1), orientation)[0])
