"""Evaluation metrics: control accuracy, Frechet feature distance, cosine
scores, retrieval, and the stroke-mechanism ablation harness."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.stats import spearmanr

from .errors import ConfigurationError, InvalidInputError, NumericalError
from .sketch_data.render import render_raster
from .sketch_data.types import SketchSequence


# ---------------------------------------------------------------------------
# control accuracy


@dataclass
class ControlReport:
    count: int
    tolerance: float
    exact_fraction: float
    within_fraction: float
    mean_abs_error: float
    spearman: float

    def summary(self) -> str:
        return (f"{self.count} samples: exact {self.exact_fraction:.1%}, "
                f"within +/-{self.tolerance:g} {self.within_fraction:.1%}, "
                f"MAE {self.mean_abs_error:.2f}, spearman {self.spearman:.3f}")


def control_accuracy(requested, realized, tolerance: float) -> ControlReport:
    """How well realized counts track requested counts.

    Exact fraction, fraction within the tolerance, mean absolute error, and
    the Spearman rank correlation between the two series.
    """
    req = np.asarray(requested, dtype=np.float64)
    got = np.asarray(realized, dtype=np.float64)
    if req.shape != got.shape or req.ndim != 1 or req.size == 0:
        raise InvalidInputError(
            f"requested/realized must be equal-length 1d, got {req.shape} "
            f"and {got.shape}")
    err = np.abs(got - req)
    # spearmanr warns and returns nan on constant input; short-circuit it
    degenerate = (req.size < 2 or np.all(req == req[0])
                  or np.all(got == got[0]))
    rho = float("nan") if degenerate else spearmanr(req, got).statistic
    return ControlReport(
        count=int(req.size),
        tolerance=float(tolerance),
        exact_fraction=float(np.mean(err == 0)),
        within_fraction=float(np.mean(err <= tolerance)),
        mean_abs_error=float(err.mean()),
        spearman=float(rho),
    )


# ---------------------------------------------------------------------------
# Frechet distance between feature Gaussians


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = _clamp_spectrum(vals)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _clamp_spectrum(vals: np.ndarray) -> np.ndarray:
    floor = -1e-8 * max(1.0, float(np.abs(vals).max()))
    if float(vals.min()) < floor:
        raise NumericalError(
            f"covariance has a significantly negative eigenvalue "
            f"({float(vals.min()):.3e}); features are not usable")
    return np.clip(vals, 0.0, None)


def frechet_distance(mu1: np.ndarray, cov1: np.ndarray,
                     mu2: np.ndarray, cov2: np.ndarray) -> float:
    """Squared Frechet distance between two Gaussians.

    |mu1 - mu2|^2 + tr(C1) + tr(C2) - 2 tr((C1 C2)^(1/2)), computed through
    the symmetric product s1 C2 s1 so only Hermitian eigendecompositions are
    needed.  Slightly negative eigenvalues from roundoff are clamped to zero.
    """
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape:
        raise InvalidInputError("moment shape mismatch between the two sets")
    s1 = _sqrt_psd(cov1)
    inner = s1 @ cov2 @ s1
    inner = (inner + inner.T) / 2.0
    vals = _clamp_spectrum(np.linalg.eigvalsh(inner))
    tr_sqrt = float(np.sqrt(vals).sum())
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * tr_sqrt)
    # exact-identity roundoff can leave a tiny negative residue
    return max(value, 0.0) if value > -1e-6 else value


def feature_moments(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise InvalidInputError(
            f"need a (count, dim) feature matrix with count >= 2, got {feats.shape}")
    if feats.shape[0] <= feats.shape[1]:
        warnings.warn(
            f"{feats.shape[0]} samples for {feats.shape[1]}-dim features; "
            "the fitted covariance is rank-deficient", stacklevel=2)
    return feats.mean(axis=0), np.atleast_2d(np.cov(feats, rowvar=False))


def fid(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Frechet distance between Gaussians fit to two feature sets."""
    mu1, cov1 = feature_moments(features_a)
    mu2, cov2 = feature_moments(features_b)
    return frechet_distance(mu1, cov1, mu2, cov2)


# ---------------------------------------------------------------------------
# cosine metrics


def cosine_score(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Mean pairwise cosine similarity scaled by 100, matched by row."""
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise InvalidInputError(f"feature shape mismatch: {a.shape} vs {b.shape}")
    an = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
    bn = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
    return float(100.0 * np.mean(np.sum(an * bn, axis=1)))


def clip_score(sketch_rasters, photos, embedder, best_of: int = 1) -> float:
    """100 x mean cosine similarity between embedded sketch renders and their
    photos.

    `embedder` maps one image item to a 1-d feature vector.  With
    best_of > 1, sketch_rasters holds best_of candidate renders per photo in
    consecutive groups and each photo scores its highest-similarity candidate.
    """
    if embedder is None:
        raise ConfigurationError(
            "clip_score needs an image embedder; the deterministic fixture "
            "encoder works without network access")
    if best_of < 1:
        raise InvalidInputError("best_of must be >= 1")
    svecs = np.stack([np.asarray(embedder(r), dtype=np.float64).ravel()
                      for r in sketch_rasters])
    pvecs = np.stack([np.asarray(embedder(p), dtype=np.float64).ravel()
                      for p in photos])
    if svecs.shape[0] != pvecs.shape[0] * best_of:
        raise InvalidInputError(
            f"{svecs.shape[0]} sketches cannot group into best_of={best_of} "
            f"candidates for {pvecs.shape[0]} photos")
    sn = svecs / np.maximum(np.linalg.norm(svecs, axis=1, keepdims=True), 1e-12)
    pn = pvecs / np.maximum(np.linalg.norm(pvecs, axis=1, keepdims=True), 1e-12)
    sims = np.sum(sn * np.repeat(pn, best_of, axis=0), axis=1)
    best = sims.reshape(pvecs.shape[0], best_of).max(axis=1)
    return float(100.0 * best.mean())


def retrieval_topk(query_features: np.ndarray, gallery_features: np.ndarray,
                   correct_index, ks=(1, 5, 10)) -> dict:
    """Fraction of queries whose correct gallery item ranks in the top k by
    cosine similarity."""
    q = np.asarray(query_features, dtype=np.float64)
    g = np.asarray(gallery_features, dtype=np.float64)
    correct = np.asarray(correct_index)
    if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
        raise InvalidInputError("query/gallery feature dims do not match")
    if correct.shape != (q.shape[0],):
        raise InvalidInputError("need one correct gallery index per query")
    if any(k < 1 or k > g.shape[0] for k in ks):
        raise InvalidInputError(
            f"every k must lie in [1, {g.shape[0]}], got {tuple(ks)}")
    qn = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
    gn = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
    sims = qn @ gn.T
    # rank of the correct item = number of strictly better gallery entries
    correct_sim = sims[np.arange(len(correct)), correct]
    rank = (sims > correct_sim[:, None]).sum(axis=1)
    return {int(k): float(np.mean(rank < k)) for k in ks}


# ---------------------------------------------------------------------------
# raster feature extractor


class FeatureExtractor(nn.Module):
    """Small convolutional sketch classifier; the pooled penultimate layer
    serves as the feature space for Frechet comparisons."""

    def __init__(self, num_classes: int, feature_width: int = 64):
        super().__init__()
        self.feature_width = feature_width
        self.conv = nn.Sequential(
            nn.Conv2d(1, 16, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, feature_width, 3, stride=2, padding=1), nn.SiLU(),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.classifier = nn.Linear(feature_width, num_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(self.conv(x)).flatten(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.features(x))


def sequences_to_rasters(sequences: list[SketchSequence], side: int = 64) -> torch.Tensor:
    """Render sketches to a (count, 1, side, side) float tensor in [0, 1],
    ink-positive (dark strokes become values near 1)."""
    out = np.empty((len(sequences), 1, side, side), dtype=np.float32)
    for i, seq in enumerate(sequences):
        out[i, 0] = 1.0 - render_raster(seq, side=side).astype(np.float32) / 255.0
    return torch.from_numpy(out)


def train_feature_extractor(rasters: torch.Tensor, labels: torch.Tensor,
                            num_classes: int, steps: int = 300,
                            batch_size: int = 64, lr: float = 1e-3,
                            seed: int = 0) -> FeatureExtractor:
    if rasters.shape[0] != labels.shape[0] or rasters.shape[0] == 0:
        raise InvalidInputError("rasters and labels must align and be non-empty")
    torch.manual_seed(seed)
    model = FeatureExtractor(num_classes)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(seed)
    for _ in range(steps):
        idx = torch.randint(0, rasters.shape[0], (batch_size,), generator=gen)
        loss = F.cross_entropy(model(rasters[idx]), labels[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    model.eval()
    return model


def extract_features(model: FeatureExtractor, rasters: torch.Tensor,
                     batch_size: int = 256) -> np.ndarray:
    chunks = []
    with torch.no_grad():
        for start in range(0, rasters.shape[0], batch_size):
            chunks.append(model.features(rasters[start:start + batch_size]))
    return torch.cat(chunks).numpy().astype(np.float64)


# ---------------------------------------------------------------------------
# stroke-mechanism accounting


def stroke_mechanism_extra_params(width: int, depth: int, stroke_mode: str,
                                  feature_width: int = 256) -> int:
    """Closed-form count of parameters each stroke-conditioning mechanism
    adds on top of an unconditioned backbone of the same size.

    All modes carry the stroke-count embedder (two linear layers over
    frequency features).  The token mode adds one positional slot; the
    cross-attention mode adds q/k/v/out projections per block.
    """
    embedder = (feature_width * width + width) + (width * width + width)
    if stroke_mode == "adaln":
        return embedder
    if stroke_mode == "token":
        return embedder + width
    if stroke_mode == "cross_attn":
        per_layer = 4 * (width * width + width)
        return embedder + depth * per_layer
    raise InvalidInputError(f"unknown stroke_mode: {stroke_mode}")


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def ablate_stroke_mechanisms(records, vae, latent_std, modes=("token", "adaln", "cross_attn"),
                             steps: int = 300, sample_count: int = 32,
                             seed: int = 0, width: int = 64, depth: int = 2,
                             head_count: int = 4, schedule=None,
                             sample_steps: int | None = None,
                             batch_size: int = 64, lr: float = 1e-4):
    """Train one small denoiser per stroke-conditioning mechanism on the same
    latents and measure stroke control on fresh samples.

    Returns {mode: {"params_extra": int, "control": ControlReport}}; the
    comparison is reported, not judged, because short trainings rank noisily.
    """
    from .sketch_data.preprocess import count_strokes
    from .train_ldm import sample_sketches, train_ldm

    results = {}
    for mode in modes:
        model, _ = train_ldm(
            records, vae, latent_std, steps=steps, seed=seed,
            batch_size=batch_size, lr=lr, schedule=schedule,
            width=width, depth=depth, head_count=head_count,
            use_class=False, use_points=False, use_strokes=True,
            stroke_mode=mode)
        bare = train_ldm(
            records, vae, latent_std, steps=0, seed=seed, schedule=schedule,
            width=width, depth=depth, head_count=head_count,
            use_class=False, use_points=False, use_strokes=False)[0]
        extra = count_parameters(model) - count_parameters(bare)
        rng = np.random.default_rng(seed)
        requested = rng.integers(1, 9, size=sample_count)
        sketches = sample_sketches(
            model, vae, latent_std, schedule=schedule, sample_steps=sample_steps,
            stroke_count=torch.from_numpy(requested), seed=seed + 1)
        realized = [count_strokes(seq).stroke_count for seq in sketches]
        results[mode] = {
            "params_extra": int(extra),
            "params_closed_form": stroke_mechanism_extra_params(width, depth, mode),
            "control": control_accuracy(requested, realized, tolerance=1),
        }
    return results
