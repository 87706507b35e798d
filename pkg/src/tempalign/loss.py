"""Contrastive objectives over alignment scores, with analytic gradients.

The sequence-level objective is an InfoNCE over one positive alignment score
and N negative alignment scores, where each score is the (optionally
length-normalized) summed cosine similarity along the minimum-cost warping
path of that candidate.  Gradients hold each candidate's optimal path fixed:
wherever the argmin path is unique this is the exact derivative of the
piecewise objective, and at ties it is a subgradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .align import _align
from .core import SegmentedPair, similarity_matrix
from .negatives import NegativePermutation


@dataclass
class LossConfig:
    """Temperature, joint weights, and how alignment scores are produced."""

    tau: float = 1.0
    w_unit: float = 0.3
    w_seq: float = 0.7
    normalize_score: bool = True
    measure: str = "dtw"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.w_unit < 0 or self.w_seq < 0 or self.w_unit + self.w_seq <= 0:
            raise ValueError(f"weights must be nonnegative with positive sum, got ({self.w_unit}, {self.w_seq})")
        if self.measure not in ("dtw", "otam"):
            raise ValueError(f"measure must be 'dtw' or 'otam', got {self.measure!r}")


def _logsumexp(z: np.ndarray) -> float:
    m = float(np.max(z))
    return m + float(np.log(np.sum(np.exp(z - m))))


def unit_infonce(pos_score: float, neg_scores, tau: float = 1.0) -> float:
    """-log( e^{pos/tau} / (e^{pos/tau} + sum_k e^{neg_k/tau}) ), stably.

    Always >= 0; equals log(1 + K) when all K + 1 scores are equal, and 0
    when there are no negatives.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    scores = np.concatenate(([float(pos_score)], np.asarray(neg_scores, dtype=np.float64).ravel()))
    if not np.all(np.isfinite(scores)):
        raise ValueError("unit_infonce: non-finite score")
    z = scores / tau
    return _logsumexp(z) - float(z[0])


def infonce_with_grad(pos_score: float, neg_scores, tau: float) -> tuple[float, float, np.ndarray]:
    """Loss plus d(loss)/d(pos) and d(loss)/d(neg_k) in closed form."""
    scores = np.concatenate(([float(pos_score)], np.asarray(neg_scores, dtype=np.float64).ravel()))
    z = scores / tau
    z -= z.max()
    w = np.exp(z)
    w /= w.sum()
    loss = unit_infonce(pos_score, neg_scores, tau)
    return loss, (w[0] - 1.0) / tau, w[1:] / tau


@dataclass
class CandidateScore:
    """One scored candidate: its path and the unit indices it touches.

    ``entries[k] = (anchor_index, source_index)`` identifies the similarity
    entry behind path step k; source indices refer to the candidate's source
    sequence.  For visual-anchor negatives the anchor index is the permuted
    caption and the source index the covered clip, so anchor always comes
    first.
    """

    label: str
    source_id: str
    score: float
    distance: float
    length: int
    entries: list[tuple[int, int]]


@dataclass
class SeqLossResult:
    loss: float
    candidates: list[CandidateScore]
    #: d(loss)/d(similarity entry), keyed (candidate_index, anchor_i, source_j);
    #: candidate 0 is the positive.  Populated when gradients are requested.
    grad_entries: dict[tuple[int, int, int], float] = field(default_factory=dict)
    #: Same gradient accumulated per source pair id as dense
    #: (n_anchor, n_source_covered) matrices in covered-position space;
    #: the pair's own id keys the matrix over its own covered clips.
    grad_by_source: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def scores(self) -> np.ndarray:
        return np.array([c.score for c in self.candidates])


#: A resolver maps a source id to (units, original_indices) of the sequence a
#: negative permutation applies to.
SourceResolver = Callable[[str], tuple[np.ndarray, np.ndarray]]


def _corpus_resolver(pair: SegmentedPair, corpus) -> SourceResolver:
    if callable(corpus):
        base = corpus
    else:
        lookup: dict[str, SegmentedPair] = {}
        if corpus is not None:
            for p in corpus if not isinstance(corpus, dict) else corpus.values():
                lookup[p.id] = p
        lookup[pair.id] = pair

        def base(source_id: str) -> tuple[np.ndarray, np.ndarray]:
            if source_id not in lookup:
                raise ValueError(f"negative references unknown pair {source_id!r}; pass the corpus")
            p = lookup[source_id]
            return p.covered_units(), p.covered_indices

    return base


def seq_grad_core(
    anchor_units: np.ndarray,
    covered_units: np.ndarray,
    covered_index: np.ndarray,
    source_id: str,
    negs: list[NegativePermutation],
    cfg: LossConfig,
    resolve: SourceResolver,
    *,
    want_grad: bool = True,
) -> SeqLossResult:
    """Array-level engine behind seq_infonce / seq_infonce_grad.

    ``covered_index`` maps similarity-matrix columns back to original unit
    indices of the positive sequence.  Negatives referencing other sources
    are resolved through ``resolve``.
    """
    base_self = similarity_matrix(anchor_units, covered_units)
    self_col = {int(j): q for q, j in enumerate(covered_index)}
    foreign: dict[str, tuple[np.ndarray, dict[int, int]]] = {}

    # Per record: (label, source_key, score, distance, length,
    #              entries=(anchor_i, source_j) list, cells=(row, col) into the
    #              source's base similarity matrix).
    records = []

    def add(label: str, source_key: str, mat: np.ndarray, path_to_cell, path_to_entry):
        res = _align(1.0 - mat, cfg.measure)
        score = res.score / len(res.path) if cfg.normalize_score else res.score
        entries = [path_to_entry(r, c) for r, c in res.path]
        cells = [path_to_cell(r, c) for r, c in res.path]
        records.append((label, source_key, score, res.distance, len(res.path), entries, cells))

    add(
        "positive", source_id, base_self,
        lambda r, c: (r, c),
        lambda r, c: (r, int(covered_index[c])),
    )
    for neg in negs:
        if neg.strategy == "visual_anchor":
            rows = np.asarray(neg.perm, dtype=np.int64)
            add(
                neg.strategy, source_id, base_self[rows, :],
                lambda r, c, rows=rows: (int(rows[r]), c),
                lambda r, c, rows=rows: (int(rows[r]), int(covered_index[c])),
            )
        else:
            if neg.source_id == source_id:
                base, col_of = base_self, self_col
            else:
                if neg.source_id not in foreign:
                    units, orig = resolve(neg.source_id)
                    foreign[neg.source_id] = (
                        similarity_matrix(anchor_units, units),
                        {int(j): q for q, j in enumerate(orig)},
                    )
                base, col_of = foreign[neg.source_id]
            try:
                cols = np.asarray([col_of[int(j)] for j in neg.perm], dtype=np.int64)
            except KeyError as exc:
                raise ValueError(f"negative for {neg.source_id!r} references uncovered unit {exc}") from exc
            add(
                neg.strategy, neg.source_id, base[:, cols],
                lambda r, c, cols=cols: (r, int(cols[c])),
                lambda r, c, perm=neg.perm: (r, int(perm[c])),
            )

    candidates = [
        CandidateScore(label=lab, source_id=src, score=score, distance=dist, length=length, entries=entries)
        for lab, src, score, dist, length, entries, _ in records
    ]
    if not negs:
        return SeqLossResult(loss=0.0, candidates=candidates)

    scores = np.array([r[2] for r in records])
    loss, dpos, dnegs = infonce_with_grad(scores[0], scores[1:], cfg.tau)
    out = SeqLossResult(loss=loss, candidates=candidates)
    if not want_grad:
        return out

    dscore = np.concatenate(([dpos], dnegs))
    shapes = {source_id: base_self.shape, **{k: v[0].shape for k, v in foreign.items()}}
    by_source = {src: np.zeros(shape) for src, shape in shapes.items()}
    grad_entries: dict[tuple[int, int, int], float] = {}
    for idx, (lab, src, score, dist, length, entries, cells) in enumerate(records):
        g = dscore[idx] / length if cfg.normalize_score else dscore[idx]
        mat = by_source[src]
        for (i, j), (mi, mj) in zip(entries, cells):
            key = (idx, i, j)
            grad_entries[key] = grad_entries.get(key, 0.0) + g
            mat[mi, mj] += g
    out.grad_entries = grad_entries
    out.grad_by_source = by_source
    return out


def seq_infonce(
    pair: SegmentedPair,
    negs: list[NegativePermutation],
    cfg: LossConfig,
    corpus=None,
) -> tuple[float, SeqLossResult]:
    """Sequence-level InfoNCE for one pair; loss 0 when there are no negatives."""
    result = seq_infonce_grad(pair, negs, cfg, corpus, want_grad=False)
    return result.loss, result


def seq_infonce_grad(
    pair: SegmentedPair,
    negs: list[NegativePermutation],
    cfg: LossConfig,
    corpus=None,
    *,
    want_grad: bool = True,
) -> SeqLossResult:
    """Loss and fixed-path gradient w.r.t. every touched similarity entry."""
    pair.require_canonical()
    return seq_grad_core(
        pair.anchor.units,
        pair.covered_units(),
        pair.covered_indices,
        pair.id,
        negs,
        cfg,
        _corpus_resolver(pair, corpus),
        want_grad=want_grad,
    )


def unit_term_video_text(
    sims_covered: np.ndarray,
    segment_spans: list[tuple[int, int]],
    tau: float,
) -> tuple[float, np.ndarray]:
    """Per-unit InfoNCE for a caption/clip pair, with gradient.

    One term per (caption i, clip q inside caption i's span); its negatives
    are this video's covered clips outside the span (intra-video).  Returns
    the mean term loss and d(loss)/d(sims) of the same shape.
    """
    sims = np.asarray(sims_covered, dtype=np.float64)
    n_anchor, n_clips = sims.shape
    grad = np.zeros_like(sims)
    losses = []
    terms = []
    for i, (lo, hi) in enumerate(segment_spans):
        out_cols = np.concatenate((np.arange(0, lo), np.arange(hi, n_clips)))
        for q in range(lo, hi):
            loss, dpos, dnegs = infonce_with_grad(sims[i, q], sims[i, out_cols], tau)
            losses.append(loss)
            terms.append((i, q, out_cols, dpos, dnegs))
    if not losses:
        return 0.0, grad
    scale = 1.0 / len(losses)
    for i, q, out_cols, dpos, dnegs in terms:
        grad[i, q] += dpos * scale
        if out_cols.size:
            grad[i, out_cols] += dnegs * scale
    return float(np.mean(losses)), grad


def unit_term_video_only(sims_self: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    """Per-frame InfoNCE: frame i against its own projection, negatives are
    the other frames of the same video."""
    sims = np.asarray(sims_self, dtype=np.float64)
    n = sims.shape[0]
    grad = np.zeros_like(sims)
    losses = []
    for i in range(n):
        out_cols = np.concatenate((np.arange(0, i), np.arange(i + 1, n)))
        loss, dpos, dnegs = infonce_with_grad(sims[i, i], sims[i, out_cols], tau)
        losses.append(loss)
        grad[i, i] += dpos
        if out_cols.size:
            grad[i, out_cols] += dnegs
    grad /= max(n, 1)
    return float(np.mean(losses)), grad


def joint_loss(unit_terms, seq_terms, cfg: LossConfig) -> float:
    """w_unit * mean(unit losses) + w_seq * mean(seq losses)."""
    unit_terms = list(unit_terms)
    seq_terms = list(seq_terms)
    if not unit_terms and not seq_terms:
        raise ValueError("joint_loss: no terms")
    m_unit = float(np.mean(unit_terms)) if unit_terms else 0.0
    m_seq = float(np.mean(seq_terms)) if seq_terms else 0.0
    return cfg.w_unit * m_unit + cfg.w_seq * m_seq
