"""Open-vocabulary matching against the distilled instance registry.

A text query is embedded once and compared against every candidate-name
vector by cosine similarity. Selection unions the foreground sets of all
objects owning a candidate above the threshold; when nothing clears it, the
single best-scoring object is returned as a fallback (selection only, the
segmentation mode keeps "unlabeled" meaningful).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .distill import EmbeddingClient, InstanceRegistry, RegistryEntry
from .errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_MATCH_THRESHOLD = 0.8
UNLABELED = -1


def cosine(s: np.ndarray, q: np.ndarray) -> float:
    s = np.asarray(s, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    ns = np.linalg.norm(s)
    nq = np.linalg.norm(q)
    if ns == 0.0 or nq == 0.0:
        raise DataError("cosine similarity is undefined for zero vectors")
    return float(s @ q / (ns * nq))


@dataclass
class Match:
    track_id: int
    granularity: str
    best_name: str
    similarity: float


@dataclass
class QueryResult:
    query: str
    matched: list[Match] = field(default_factory=list)
    selected: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    used_fallback: bool = False


def _best_per_object(
    objects: list[RegistryEntry], query_vec: np.ndarray
) -> list[tuple[RegistryEntry, str, float]]:
    scored = []
    for obj in objects:
        sims = obj.embeddings @ query_vec
        k = int(np.argmax(sims))
        scored.append((obj, obj.names[k], float(sims[k])))
    return scored


def select(
    registry: InstanceRegistry,
    query: str,
    embedder: EmbeddingClient,
    *,
    threshold: float = DEFAULT_MATCH_THRESHOLD,
    granularity: str | None = None,
    fallback_to_best: bool = True,
) -> QueryResult:
    """Objects whose best candidate similarity strictly exceeds `threshold`.

    The selected index set is the union of the matched objects' foreground
    sets, so one Gaussian matched through several objects appears once.
    """
    if not registry.objects:
        raise DataError("registry holds no objects")
    objects = registry.named_objects()
    if granularity is not None:
        objects = [o for o in objects if o.granularity == granularity]
    if not objects:
        logger.warning("no named objects to match against; empty result")
        return QueryResult(query=query)

    query_vec = np.asarray(embedder.embed([query]), dtype=np.float64)[0]
    scored = _best_per_object(objects, query_vec)
    matched = [(o, n, s) for o, n, s in scored if s > threshold]
    used_fallback = False
    if not matched and fallback_to_best:
        matched = [max(scored, key=lambda t: t[2])]
        used_fallback = True

    matched.sort(key=lambda t: (-t[2], t[0].granularity, t[0].track_id))
    selected = np.zeros(0, dtype=np.int64)
    if matched:
        selected = np.unique(np.concatenate([o.foreground for o, _, _ in matched]))
    return QueryResult(
        query=query,
        matched=[
            Match(o.track_id, o.granularity, name, sim) for o, name, sim in matched
        ],
        selected=selected,
        used_fallback=used_fallback,
    )


def segment(
    registry: InstanceRegistry,
    class_names: list[str],
    embedder: EmbeddingClient,
    n_gaussians: int,
    *,
    threshold: float = DEFAULT_MATCH_THRESHOLD,
    granularity: str | None = None,
) -> np.ndarray:
    """Per-Gaussian class assignment for a fixed class list.

    Each object takes its argmax-similarity class when that similarity
    strictly exceeds the threshold, else stays unlabeled; its foreground
    Gaussians inherit the class. Where labeled objects overlap, the higher
    similarity wins (ties go to the lower track id). Neutral points are
    never labeled through their own object. Returns int labels with
    UNLABELED (-1) for unassigned.
    """
    if not class_names:
        raise DataError("segment requires at least one class name")
    labels = np.full(n_gaussians, UNLABELED, dtype=np.int64)
    objects = registry.named_objects()
    if granularity is not None:
        objects = [o for o in objects if o.granularity == granularity]
    if not objects:
        return labels

    class_vecs = np.asarray(embedder.embed(list(class_names)), dtype=np.float64)
    best_sim = np.full(n_gaussians, -np.inf)
    best_track = np.full(n_gaussians, np.iinfo(np.int64).max, dtype=np.int64)
    for obj in sorted(objects, key=lambda o: o.track_id):
        sims = obj.embeddings @ class_vecs.T  # (names, classes)
        per_class = sims.max(axis=0)
        cls = int(np.argmax(per_class))
        sim = float(per_class[cls])
        if sim <= threshold:
            continue
        idx = obj.foreground
        wins = (sim > best_sim[idx]) | (
            (sim == best_sim[idx]) & (obj.track_id < best_track[idx])
        )
        upd = idx[wins]
        labels[upd] = cls
        best_sim[upd] = sim
        best_track[upd] = obj.track_id
    return labels
