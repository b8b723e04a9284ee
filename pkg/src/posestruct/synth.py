"""Synthetic desk-scale experiment.

Each trial samples one or more persons from the scaled canonical skeleton,
renders Gaussian heatmaps (optionally corrupting peak positions with noise
and zeroing one limb's channels per person), decodes, optionally refines
with the structure constraint, and scores with OKS.  Three variants run on
identical inputs: plain decoding, refinement with the length term only, and
refinement with length plus angle.

Per-trial RNG streams are derived from (seed, trial index), so results are
independent of execution order and thread count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decode import Heatmap, decode_argmax, decode_topn, group_by_tags
from .loss import render_gaussian_target
from .metrics import oks
from .refine import PriorMode, RefineConfig, fill_from_prior, refine_pose
from .topology import (
    EdgeWeights,
    Pose,
    SkeletonTopology,
    WeightScheme,
    build_coco_skeleton,
    canonical_pose,
    compute_edge_weights,
)

VARIANTS = ("no-refine", "refine-length", "refine-length-angle")

# Joint groups a simulated occlusion wipes out (elbow+wrist or knee+ankle).
_LIMBS = ((7, 9), (8, 10), (13, 15), (14, 16))

_TAG_SEPARATION = 10.0


@dataclass
class SynthConfig:
    persons: int = 1
    noise: float = 0.0            # px std-dev applied to rendered peak positions
    occlude_limb: bool = False
    trials: int = 200
    seed: int = 0
    structure_weight: float = 1.0
    scheme: WeightScheme = WeightScheme.PROPORTIONAL_LENGTH
    sigma: float = 2.0
    slice_width: int = 96         # grid columns reserved per person
    grid_height: int = 128
    steps: int = 60
    step_size: float = 4.0
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.persons < 1:
            raise ValueError("persons must be at least 1")
        if self.noise < 0.0:
            raise ValueError("noise must be non-negative")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


@dataclass
class SynthResult:
    rows: list[tuple[int, str, float]]       # (trial, variant, mean OKS)
    means: dict[str, float]

    def csv_text(self) -> str:
        lines = ["trial,variant,oks"]
        lines += [f"{t},{v},{o!r}" for t, v, o in self.rows]
        return "\n".join(lines) + "\n"

    def dat_text(self) -> str:
        """Gnuplot-style columns: trial then one OKS column per variant."""
        by_trial: dict[int, dict[str, float]] = {}
        for t, v, o in self.rows:
            by_trial.setdefault(t, {})[v] = o
        lines = ["# trial " + " ".join(v.replace("-", "_") for v in VARIANTS)]
        for t in sorted(by_trial):
            vals = " ".join(repr(by_trial[t][v]) for v in VARIANTS)
            lines.append(f"{t} {vals}")
        lines.append("# mean " + " ".join(repr(self.means[v]) for v in VARIANTS))
        return "\n".join(lines) + "\n"

    def summary_text(self) -> str:
        lines = [f"{'variant':<22}{'mean_oks':>10}{'trials':>8}"]
        n = len({t for t, _, _ in self.rows})
        for v in VARIANTS:
            lines.append(f"{v:<22}{self.means[v]:>10.4f}{n:>8}")
        return "\n".join(lines) + "\n"


def _sample_person(
    rng: np.random.Generator,
    slice_x0: float,
    cfg: SynthConfig,
    base: np.ndarray,
) -> tuple[Pose, float]:
    """Scale and place the canonical figure inside its grid slice."""
    torso = rng.uniform(16.0, 24.0)
    margin = 3.0 * cfg.sigma + 1.0
    ext_x = float(np.max(np.abs(base[:, 0]))) * torso
    ext_top = float(-np.min(base[:, 1])) * torso
    ext_bot = float(np.max(base[:, 1])) * torso
    cx = rng.uniform(slice_x0 + ext_x + margin, slice_x0 + cfg.slice_width - 1 - ext_x - margin)
    cy = rng.uniform(ext_top + margin, cfg.grid_height - 1 - ext_bot - margin)
    kp = base * torso + np.array([cx, cy])
    pose = Pose(kp)
    width = kp[:, 0].max() - kp[:, 0].min()
    height = kp[:, 1].max() - kp[:, 1].min()
    return pose, float(width * height)


def _match_by_oks(
    decoded: list[Pose], gts: list[tuple[Pose, float]]
) -> list[Pose | None]:
    """Greedy per-trial matching of decoded poses to ground truths."""
    order = sorted(range(len(decoded)), key=lambda i: -float(decoded[i].confidence.mean()))
    assigned: list[Pose | None] = [None] * len(gts)
    for di in order:
        best, best_oks = -1, 0.0
        for gi, (gt, area) in enumerate(gts):
            if assigned[gi] is not None:
                continue
            value = oks(decoded[di], gt, area)
            if value > best_oks:
                best, best_oks = gi, value
        if best >= 0:
            assigned[best] = decoded[di]
    return assigned


def run_trial(
    cfg: SynthConfig,
    trial: int,
    topology: SkeletonTopology,
    weights: EdgeWeights,
    prior: Pose,
) -> dict[str, float]:
    """One Monte-Carlo trial; returns the mean OKS per variant."""
    rng = np.random.default_rng([cfg.seed, trial])
    base = prior.keypoints
    width = cfg.slice_width * cfg.persons
    k = topology.num_keypoints

    gts: list[tuple[Pose, float]] = []
    rendered = np.zeros((k, cfg.grid_height, width), dtype=np.float32)
    tag_data = np.zeros_like(rendered)
    occluded: list[tuple[int, tuple[int, ...]]] = []

    for p in range(cfg.persons):
        x0 = p * cfg.slice_width
        pose, area = _sample_person(rng, float(x0), cfg, base)
        gts.append((pose, area))

        jitter = rng.normal(0.0, 1.0, size=(k, 2))
        peaks = pose.keypoints + cfg.noise * jitter
        target = render_gaussian_target(Pose(peaks), width, cfg.grid_height, cfg.sigma)
        rendered = np.maximum(rendered, target.data)
        tag_data[:, :, x0 : x0 + cfg.slice_width] = p * _TAG_SEPARATION

        limb = _LIMBS[int(rng.integers(len(_LIMBS)))]
        if cfg.occlude_limb:
            occluded.append((x0, limb))

    for x0, limb in occluded:
        for joint in limb:
            rendered[joint, :, x0 : x0 + cfg.slice_width] = 0.0

    hm = Heatmap(rendered)
    if cfg.persons == 1:
        decoded = [decode_argmax(hm, subpixel=True, score_floor=0.05)]
    else:
        candidates = decode_topn(
            hm, n=cfg.persons, nms_radius=2, score_floor=0.05, tags=Heatmap(tag_data)
        )
        decoded = group_by_tags(candidates, tag_threshold=1.0, num_keypoints=k)
    assigned = _match_by_oks(decoded, gts)

    out: dict[str, float] = {}
    for variant in VARIANTS:
        scores = []
        for (gt, area), det in zip(gts, assigned):
            if det is None:
                scores.append(0.0)
                continue
            if variant == "no-refine":
                scores.append(oks(det, gt, area))
                continue
            refine_cfg = RefineConfig(
                steps=cfg.steps,
                step_size=cfg.step_size,
                structure_weight=cfg.structure_weight,
                prior=PriorMode.AVERAGE_POSE_SCALED,
                use_length=True,
                use_angle=(variant == "refine-length-angle"),
            )
            start = det
            if cfg.structure_weight > 0.0:
                try:
                    start = fill_from_prior(det, prior, refine_cfg.confidence_floor)
                except ValueError:
                    start = det
            refined, _ = refine_pose(start, hm, topology, weights, refine_cfg, prior)
            scores.append(oks(refined, gt, area))
        out[variant] = float(np.mean(scores))
    return out


def run_experiment(cfg: SynthConfig) -> SynthResult:
    """Run all trials (optionally threaded) and aggregate per-variant means."""
    topology = build_coco_skeleton()
    prior = canonical_pose()
    weights = compute_edge_weights(prior, topology, cfg.scheme)

    def work(trial: int) -> dict[str, float]:
        return run_trial(cfg, trial, topology, weights, prior)

    if cfg.jobs == 1:
        per_trial = [work(t) for t in range(cfg.trials)]
    else:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            per_trial = list(pool.map(work, range(cfg.trials)))

    rows = [
        (trial, variant, result[variant])
        for trial, result in enumerate(per_trial)
        for variant in VARIANTS
    ]
    means = {
        v: float(np.mean([r[v] for r in per_trial])) for v in VARIANTS
    }
    return SynthResult(rows=rows, means=means)


def write_outputs(result: SynthResult, out_dir: str | Path) -> dict[str, Path]:
    """Write the CSV, the gnuplot data file, the summary, and the figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out / "oks.csv",
        "dat": out / "oks.dat",
        "summary": out / "summary.txt",
        "box_figure": out / "oks_by_variant.png",
        "trial_figure": out / "oks_per_trial.png",
    }
    paths["csv"].write_text(result.csv_text())
    paths["dat"].write_text(result.dat_text())
    paths["summary"].write_text(result.summary_text())
    _render_figures(result, paths)
    return paths


def _render_figures(result: SynthResult, paths: dict[str, Path]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = {
        v: [o for _, var, o in result.rows if var == v] for v in VARIANTS
    }

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.boxplot([series[v] for v in VARIANTS], tick_labels=list(VARIANTS), showmeans=True)
    ax.set_ylabel("OKS")
    ax.set_title("Per-trial OKS by variant")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(paths["box_figure"], dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4))
    for v in VARIANTS:
        ax.plot(sorted(series[v]), label=f"{v} (mean {result.means[v]:.4f})")
    ax.set_xlabel("trial (sorted by OKS)")
    ax.set_ylabel("OKS")
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(paths["trial_figure"], dpi=120)
    plt.close(fig)
