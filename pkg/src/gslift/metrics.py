"""Quantitative evaluation of dynamic scenes.

Motion metrics (displacement, momentum, isometry, rigidity, rotation
similarity) are pure functions of the per-timestep updates and the
canonical geometry; all five are exactly zero for an all-identity
dynamic scene, and the neighbor-based ones vanish on global rigid
motion. Neighbor sets are the K_eval nearest selected Gaussians in the
canonical scene, frozen over time, and all means are unweighted (noted
in the report). CLIP aggregation operates on externally produced
embeddings only.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .deform import DynamicScene
from .errors import InputError
from .rotation import quat_conjugate, quat_multiply, quat_rotate
from .scene import GaussianScene

DEFAULT_K_EVAL = 20


def _selected_positions(dyn: DynamicScene, scene: GaussianScene) -> np.ndarray:
    """Per-timestep positions of the selected Gaussians, shape (T, M, 3)."""
    if dyn.selection.shape[0] != scene.count:
        raise InputError("dynamic scene does not match this scene")
    mu0 = scene.positions[dyn.selection]
    return mu0[None, :, :] + dyn.translations


def _canonical_neighbors(dyn: DynamicScene, scene: GaussianScene, k_eval: int) -> np.ndarray:
    mu0 = scene.positions[dyn.selection]
    m = mu0.shape[0]
    if m < k_eval + 1:
        raise InputError(f"need at least {k_eval + 1} selected Gaussians for K_eval={k_eval}")
    tree = cKDTree(mu0)
    _, idx = tree.query(mu0, k=k_eval + 1)
    return idx[:, 1:]   # drop self


def displacement(dyn: DynamicScene, scene: GaussianScene) -> float:
    """Mean step-to-step center displacement."""
    if dyn.n_steps < 2:
        raise InputError("displacement needs at least 2 timesteps")
    pos = _selected_positions(dyn, scene)
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=2)
    return float(steps.mean())


def momentum(dyn: DynamicScene, scene: GaussianScene) -> float:
    """Mean squared second difference of the center paths (zero for
    constant-velocity motion)."""
    if dyn.n_steps < 3:
        raise InputError("momentum needs at least 3 timesteps")
    pos = _selected_positions(dyn, scene)
    second = pos[2:] - 2.0 * pos[1:-1] + pos[:-2]
    return float((np.linalg.norm(second, axis=2) ** 2).mean())


def isometry(dyn: DynamicScene, scene: GaussianScene, k_eval: int = DEFAULT_K_EVAL) -> float:
    """Mean absolute change of canonical neighbor distances over time."""
    pos = _selected_positions(dyn, scene)
    nbr = _canonical_neighbors(dyn, scene, k_eval)
    mu0 = scene.positions[dyn.selection]
    d_canon = np.linalg.norm(mu0[:, None, :] - mu0[nbr], axis=2)
    total = 0.0
    for t in range(dyn.n_steps):
        dt = np.linalg.norm(pos[t][:, None, :] - pos[t][nbr], axis=2)
        total += np.abs(dt - d_canon).mean()
    return float(total / dyn.n_steps)


def rigidity(dyn: DynamicScene, scene: GaussianScene, k_eval: int = DEFAULT_K_EVAL) -> float:
    """Mean squared error between actual neighbor offsets and offsets
    carried by each neighbor's own per-step rotation delta."""
    if dyn.n_steps < 2:
        raise InputError("rigidity needs at least 2 timesteps")
    pos = _selected_positions(dyn, scene)
    nbr = _canonical_neighbors(dyn, scene, k_eval)
    total = 0.0
    count = 0
    for t in range(dyn.n_steps - 1):
        step_q = quat_multiply(dyn.rot_deltas[t + 1], quat_conjugate(dyn.rot_deltas[t]))
        offs_t = pos[t][:, None, :] - pos[t][nbr]
        offs_t1 = pos[t + 1][:, None, :] - pos[t + 1][nbr]
        carried = quat_rotate(step_q[nbr], offs_t)
        err = np.linalg.norm(offs_t1 - carried, axis=2) ** 2
        total += err.sum()
        count += err.size
    return float(total / count)


def rotation_similarity(dyn: DynamicScene, scene: GaussianScene,
                        k_eval: int = DEFAULT_K_EVAL) -> float:
    """Mean over neighbor pairs and steps of 1 - <q_i, q_j>^2 for the
    per-step rotation deltas (sign-invariant)."""
    if dyn.n_steps < 2:
        raise InputError("rotation similarity needs at least 2 timesteps")
    nbr = _canonical_neighbors(dyn, scene, k_eval)
    total = 0.0
    count = 0
    for t in range(dyn.n_steps - 1):
        step_q = quat_multiply(dyn.rot_deltas[t + 1], quat_conjugate(dyn.rot_deltas[t]))
        dots = np.sum(step_q[:, None, :] * step_q[nbr], axis=-1)
        term = 1.0 - dots ** 2
        total += term.sum()
        count += term.size
    return float(total / count)


@dataclass
class EmbeddingSet:
    """Unit-norm embeddings: one text vector, per-view per-frame vision vectors."""

    frame_embeddings: np.ndarray        # (V, F, D)
    text_embedding: np.ndarray | None   # (D,)

    def __post_init__(self):
        self.frame_embeddings = np.asarray(self.frame_embeddings, dtype=np.float64)
        if self.frame_embeddings.ndim != 3:
            raise InputError("frame embeddings must have shape (views, frames, dim)")
        norms = np.linalg.norm(self.frame_embeddings, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise InputError("frame embeddings must be unit-norm")
        if self.text_embedding is not None:
            self.text_embedding = np.asarray(self.text_embedding, dtype=np.float64)
            if abs(np.linalg.norm(self.text_embedding) - 1.0) > 1e-6:
                raise InputError("text embedding must be unit-norm")


def clip_text_score(embeddings: EmbeddingSet) -> float:
    """Mean cosine similarity of every frame embedding to the text embedding."""
    if embeddings.text_embedding is None:
        raise InputError("text score requires a text embedding")
    if embeddings.frame_embeddings.shape[1] < 1:
        raise InputError("text score requires at least one frame")
    sims = embeddings.frame_embeddings @ embeddings.text_embedding
    return float(sims.mean())


def clip_temporal_score(embeddings: EmbeddingSet) -> float:
    """Mean cosine similarity over consecutive frame pairs, averaged per view."""
    frames = embeddings.frame_embeddings
    if frames.shape[1] < 2:
        raise InputError("temporal score requires at least two frames per view")
    sims = np.einsum("vfd,vfd->vf", frames[:, :-1], frames[:, 1:])
    return float(sims.mean(axis=1).mean())


@dataclass
class MetricReport:
    displacement: float
    rigidity: float
    momentum: float
    isometry: float
    rotation_similarity: float
    clip_text: float | None = None
    clip_temporal: float | None = None
    k_eval: int = DEFAULT_K_EVAL

    def to_dict(self) -> dict:
        out = {
            "displacement": self.displacement,
            "rigidity": self.rigidity,
            "momentum": self.momentum,
            "isometry": self.isometry,
            "rotation_similarity": self.rotation_similarity,
            "k_eval": self.k_eval,
            "neighbor_weighting": "uniform",
        }
        if self.clip_text is not None:
            out["clip_text"] = self.clip_text
        if self.clip_temporal is not None:
            out["clip_temporal"] = self.clip_temporal
        return out


def compute_report(dyn: DynamicScene, scene: GaussianScene,
                   k_eval: int = DEFAULT_K_EVAL,
                   embeddings: EmbeddingSet | None = None) -> MetricReport:
    """All motion metrics plus optional CLIP aggregation for one dynamic scene.

    K_eval is clamped to the available neighbor count so small scenes
    still produce a report.
    """
    m = int(dyn.selection.sum())
    k_used = max(1, min(k_eval, m - 1))
    return MetricReport(
        displacement=displacement(dyn, scene),
        rigidity=rigidity(dyn, scene, k_used),
        momentum=momentum(dyn, scene),
        isometry=isometry(dyn, scene, k_used),
        rotation_similarity=rotation_similarity(dyn, scene, k_used),
        clip_text=clip_text_score(embeddings) if embeddings is not None
        and embeddings.text_embedding is not None else None,
        clip_temporal=clip_temporal_score(embeddings) if embeddings is not None else None,
        k_eval=k_used,
    )


_HIGHER_BETTER = {"displacement", "clip_text", "clip_temporal"}
_CATEGORIES = {
    "motion": ["displacement"],
    "geometry": ["rigidity", "momentum", "isometry", "rotation_similarity"],
    "appearance": ["clip_text", "clip_temporal"],
}


def rank_reports(reports: list[MetricReport]) -> dict:
    """Competition ranks per metric plus category-averaged and overall ranks.

    Rank 1 is best. Higher is better for displacement and the CLIP
    scores, lower for the geometry metrics. Appearance is ranked only if
    every report carries CLIP scores.
    """
    if len(reports) < 2:
        raise InputError("ranking needs at least two reports")

    def ranks_for(values: list[float], higher_better: bool) -> list[int]:
        def better(a, b):
            return a > b if higher_better else a < b

        return [1 + sum(1 for other in values if better(other, v)) for v in values]

    per_metric: dict[str, list[int]] = {}
    for name in ["displacement", "rigidity", "momentum", "isometry", "rotation_similarity"]:
        per_metric[name] = ranks_for([getattr(r, name) for r in reports],
                                     name in _HIGHER_BETTER)
    have_clip = all(r.clip_text is not None and r.clip_temporal is not None for r in reports)
    if have_clip:
        for name in ["clip_text", "clip_temporal"]:
            per_metric[name] = ranks_for([getattr(r, name) for r in reports], True)

    category_avg: dict[str, list[float]] = {}
    for cat, names in _CATEGORIES.items():
        names = [n for n in names if n in per_metric]
        if not names:
            continue
        category_avg[cat] = [
            float(np.mean([per_metric[n][i] for n in names]))
            for i in range(len(reports))
        ]
    overall_scores = [
        float(np.mean([category_avg[c][i] for c in category_avg]))
        for i in range(len(reports))
    ]
    overall_rank = ranks_for(overall_scores, higher_better=False)
    return {
        "per_metric": per_metric,
        "category_average": category_avg,
        "overall_score": overall_scores,
        "overall_rank": overall_rank,
    }


def write_report(path, report: MetricReport) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
