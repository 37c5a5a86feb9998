"""Overlap scoring losses, overlap candidate selection and feature matching.

Embeddings and overlap scores are produced upstream (by whatever network the
caller runs); this module only consumes them. The losses are evaluation
functions so that a trainer or a test can check their values exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from liverreg.errors import (
    DimensionMismatch,
    EmptyMatches,
    EmptySet,
    InvariantViolation,
    LengthMismatch,
    NonPositiveUncertainty,
    NoUnmatchedPixels,
    ZeroNormVector,
)

MIN_UNCERTAINTY = 1e-6
DEFAULT_OVERLAP_THRESHOLD = 0.5
DEFAULT_LAMBDA_CFE = 0.5


@dataclass(frozen=True)
class OverlapScores:
    score: np.ndarray
    uncertainty: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.score, dtype=float).reshape(-1)
        u = np.asarray(self.uncertainty, dtype=float).reshape(-1)
        if s.shape != u.shape:
            raise LengthMismatch(f"{s.size} scores vs {u.size} uncertainties")
        bad = np.flatnonzero(~(u > 0))
        if bad.size:
            raise NonPositiveUncertainty(int(bad[0]))
        object.__setattr__(self, "score", s)
        object.__setattr__(self, "uncertainty", np.maximum(u, MIN_UNCERTAINTY))

    def __len__(self):
        return self.score.size


@dataclass(frozen=True)
class LabeledOverlapSets:
    """Ground-truth overlap / non-overlap index sets for both modalities."""

    overlap3d: np.ndarray
    nonoverlap3d: np.ndarray
    overlap2d: np.ndarray
    nonoverlap2d: np.ndarray

    def __post_init__(self):
        for name in ("overlap3d", "nonoverlap3d", "overlap2d", "nonoverlap2d"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=int).reshape(-1))
        if np.intersect1d(self.overlap3d, self.nonoverlap3d).size:
            raise InvariantViolation("LabeledOverlapSets", "3D overlap sets intersect")
        if np.intersect1d(self.overlap2d, self.nonoverlap2d).size:
            raise InvariantViolation("LabeledOverlapSets", "2D overlap sets intersect")


@dataclass(frozen=True)
class CorrespondenceSet:
    """Matched 3D point / 2D pixel pairs.

    ``index3d`` and ``index2d`` refer back to the landmark lists the pairs
    were drawn from; both are free of duplicates.
    """

    index3d: np.ndarray
    index2d: np.ndarray
    points3d: np.ndarray
    pixels: np.ndarray
    similarity: np.ndarray

    def __post_init__(self):
        i3 = np.asarray(self.index3d, dtype=np.int64).reshape(-1)
        i2 = np.asarray(self.index2d, dtype=np.int64).reshape(-1)
        X = np.asarray(self.points3d, dtype=float).reshape(-1, 3)
        x = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        s = np.asarray(self.similarity, dtype=float).reshape(-1)
        m = i3.size
        if not (i2.size == m and X.shape[0] == m and x.shape[0] == m and s.size == m):
            raise LengthMismatch("correspondence fields have different lengths")
        if np.unique(i3).size != m:
            raise InvariantViolation("CorrespondenceSet", "duplicate index3d")
        if np.unique(i2).size != m:
            raise InvariantViolation("CorrespondenceSet", "duplicate index2d")
        for name, val in (("index3d", i3), ("index2d", i2), ("points3d", X),
                          ("pixels", x), ("similarity", s)):
            object.__setattr__(self, name, val)

    def __len__(self):
        return int(self.index3d.size)

    @classmethod
    def empty(cls) -> "CorrespondenceSet":
        return cls(np.zeros(0, int), np.zeros(0, int), np.zeros((0, 3)), np.zeros((0, 2)), np.zeros(0))

    def subset(self, sel) -> "CorrespondenceSet":
        sel = np.asarray(sel)
        return CorrespondenceSet(self.index3d[sel], self.index2d[sel], self.points3d[sel],
                                 self.pixels[sel], self.similarity[sel])

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.index3d.tolist(), self.index2d.tolist()))


def as_features(features, name="FeatureSet") -> np.ndarray:
    F = np.asarray(features, dtype=float)
    if F.ndim != 2:
        raise DimensionMismatch(f"{name}: expected (n, d) array, got shape {F.shape}")
    if not np.all(np.isfinite(F)):
        raise InvariantViolation(name, "non-finite embedding entry")
    return F


def gaussian_nll(labels, scores, uncertainties) -> float:
    """Mean Gaussian negative log-likelihood of binary labels under predicted
    scores with per-sample variance ``uncertainties``."""
    Y = np.asarray(labels, dtype=float).reshape(-1)
    S = np.asarray(scores, dtype=float).reshape(-1)
    U = np.asarray(uncertainties, dtype=float).reshape(-1)
    if Y.size == 0:
        raise EmptySet("gaussian_nll over an empty set")
    if not (Y.size == S.size == U.size):
        raise LengthMismatch("labels, scores and uncertainties differ in length")
    bad = np.flatnonzero(~(U > 0))
    if bad.size:
        raise NonPositiveUncertainty(int(bad[0]))
    U = np.maximum(U, MIN_UNCERTAINTY)
    return float(np.mean((Y - S) ** 2 / (2.0 * U) + 0.5 * np.log(U)))


def detection_loss(sets: LabeledOverlapSets, scores3d: OverlapScores, scores2d: OverlapScores) -> float:
    terms = []
    for name, idx, scores, label in (
        ("overlap3d", sets.overlap3d, scores3d, 1.0),
        ("overlap2d", sets.overlap2d, scores2d, 1.0),
        ("nonoverlap3d", sets.nonoverlap3d, scores3d, 0.0),
        ("nonoverlap2d", sets.nonoverlap2d, scores2d, 0.0),
    ):
        if idx.size == 0:
            raise EmptySet(f"{name} is empty")
        if idx.min() < 0 or idx.max() >= len(scores):
            raise InvariantViolation("LabeledOverlapSets", f"{name} index out of range")
        terms.append(gaussian_nll(np.full(idx.size, label), scores.score[idx], scores.uncertainty[idx]))
    return float(sum(terms) / 4.0)


def balanced_overlap_sets(overlap_mask3d, overlap_mask2d, rng: np.random.Generator) -> LabeledOverlapSets:
    """Draw as many non-overlap samples as there are overlap samples, per modality.

    Sampling is uniform without replacement; when the non-overlap pool is
    smaller than the overlap set, the whole pool is used.
    """
    out = []
    for mask in (overlap_mask3d, overlap_mask2d):
        mask = np.asarray(mask, dtype=bool)
        pos = np.flatnonzero(mask)
        neg = np.flatnonzero(~mask)
        k = min(pos.size, neg.size)
        picked = np.sort(rng.choice(neg, size=k, replace=False)) if k else neg[:0]
        out.append((pos, picked))
    return LabeledOverlapSets(out[0][0], out[0][1], out[1][0], out[1][1])


def select_overlap(scores: OverlapScores, threshold: float = DEFAULT_OVERLAP_THRESHOLD) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return np.flatnonzero(scores.score >= threshold)


def _unit_rows(F: np.ndarray, name: str) -> np.ndarray:
    norms = np.linalg.norm(F, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise ZeroNormVector(int(bad[0]), name)
    return F / norms[:, None]


def cosine_similarity_matrix(a, b) -> np.ndarray:
    A = as_features(a)
    B = as_features(b)
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"embedding dims {A.shape[1]} vs {B.shape[1]}")
    sim = _unit_rows(A, "a") @ _unit_rows(B, "b").T
    return np.clip(sim, -1.0, 1.0)


def mutual_nn_pairs(sim) -> list[tuple[int, int]]:
    """Mutual arg-max pairs (row, col) of a similarity matrix.

    Ties resolve to the lowest index on both sides.
    """
    sim = np.asarray(sim, dtype=float)
    if sim.size == 0:
        return []
    best_col = np.argmax(sim, axis=1)
    best_row = np.argmax(sim, axis=0)
    rows = np.flatnonzero(best_row[best_col] == np.arange(sim.shape[0]))
    return [(int(i), int(best_col[i])) for i in rows]


def mutual_nn_match(features3d, features2d, candidates3d, candidates2d, points3d, pixels2d) -> CorrespondenceSet:
    """Match candidate 3D landmarks to candidate 2D pixels by mutual nearest
    neighbour under cosine similarity.

    Returns pairs sorted by descending similarity (ties by ascending index3d).
    """
    c3 = np.unique(np.asarray(candidates3d, dtype=int))
    c2 = np.unique(np.asarray(candidates2d, dtype=int))
    if c3.size == 0 or c2.size == 0:
        return CorrespondenceSet.empty()
    F3 = as_features(features3d, "features3d")
    F2 = as_features(features2d, "features2d")
    sim = cosine_similarity_matrix(F3[c3], F2[c2])
    pairs = mutual_nn_pairs(sim)
    if not pairs:
        return CorrespondenceSet.empty()
    r = np.array([p[0] for p in pairs])
    c = np.array([p[1] for p in pairs])
    s = sim[r, c]
    order = np.lexsort((c3[r], -s))
    r, c, s = r[order], c[order], s[order]
    pts = np.asarray(points3d, dtype=float).reshape(-1, 3)
    pix = np.asarray(pixels2d, dtype=float).reshape(-1, 2)
    return CorrespondenceSet(c3[r], c2[c], pts[c3[r]], pix[c2[c]], s)


def cfe_loss(sim_matrix, matches: CorrespondenceSet, candidates2d) -> float:
    """Contrastive matching loss over the matched pairs.

    ``sim_matrix`` is the full 3D-by-2D similarity matrix (indexed by the
    same indices as ``matches``). The negative for each pair is the most
    similar 2D candidate that is not matched to any 3D landmark.
    """
    if len(matches) == 0:
        raise EmptyMatches("cfe_loss needs at least one matched pair")
    sim = np.asarray(sim_matrix, dtype=float)
    unmatched = np.setdiff1d(np.asarray(candidates2d, dtype=int), matches.index2d)
    if unmatched.size == 0:
        raise NoUnmatchedPixels("every 2D candidate is matched; no negatives available")
    s_o = sim[matches.index3d, matches.index2d]
    s_u = sim[np.ix_(matches.index3d, unmatched)].max(axis=1)
    return float(np.mean(2.0 - s_o + s_u))


def rigid_loss(ld: float, lcfe: float, lam: float = DEFAULT_LAMBDA_CFE) -> float:
    return float(ld + lam * lcfe)
