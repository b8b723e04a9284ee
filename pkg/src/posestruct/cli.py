"""Command-line surface: weight computation, loss evaluation, AP scoring,
and the synthetic occlusion experiment."""
from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import io as pio
from .loss import constraint_loss
from .metrics import evaluate
from .synth import SynthConfig, run_experiment, write_outputs
from .topology import (
    Normalization,
    WeightScheme,
    build_coco_skeleton,
    compute_average_pose,
    compute_edge_weights,
)

_SCHEMES = {
    "1": WeightScheme.UNIFORM,
    "2": WeightScheme.INVERSE_LENGTH,
    "3": WeightScheme.PROPORTIONAL_LENGTH,
}


def _fail_on_error(f):
    """Convert library errors into clean messages with a nonzero exit code."""

    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (ValueError, OSError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


@click.group()
def main() -> None:
    """Skeleton structure constraints for 2D pose estimation."""


@main.command("weights")
@click.option("--annotations", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--scheme", required=True, type=click.Choice(sorted(_SCHEMES)),
              help="1 = uniform, 2 = inverse length, 3 = proportional length.")
@click.option("--out", required=True, type=click.Path(dir_okay=False, writable=True))
@click.option("--normalization", type=click.Choice([n.value for n in Normalization]),
              default=Normalization.HIP_TORSO.value, show_default=True)
@click.option("--symmetric-average/--no-symmetric-average", default=True,
              show_default=True,
              help="Replace mirror-pair lambdas by their pair mean.")
@_fail_on_error
def cmd_weights(annotations: str, scheme: str, out: str, normalization: str,
                symmetric_average: bool) -> None:
    """Compute edge weights from the average pose of an annotation file."""
    topology = build_coco_skeleton()
    ann = pio.load_coco_annotations(annotations)
    avg = compute_average_pose(
        [inst.pose for inst in ann.instances],
        Normalization(normalization),
    )
    weights = compute_edge_weights(
        avg, topology, _SCHEMES[scheme], symmetric_average=symmetric_average
    )

    for i in range(topology.num_edges):
        click.echo(f"lambda {i} {topology.edge_name(i)} {weights.lambdas[i]:.6f}")

    click.echo("mirror classes:")
    for group in topology.mirror_classes():
        names = " / ".join(topology.edge_name(i) for i in group)
        click.echo(f"  {names:<60} {weights.lambdas[group[0]]:.6f}")

    pio.save_weights(out, topology, weights)
    click.echo(f"wrote {out}")


def _load_gt_poses(path: str):
    """Ground truth may be an annotation file or a results file."""
    with open(path) as f:
        head = json.load(f)
    if isinstance(head, dict) and "annotations" in head:
        ann = pio.load_coco_annotations(path)
        return [inst.pose for inst in ann.instances]
    return [pose for _, pose, _ in pio.load_results(path)]


@main.command("loss")
@click.option("--pred", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", "weights_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--length/--no-length", default=True, show_default=True)
@click.option("--angle/--no-angle", default=True, show_default=True)
@_fail_on_error
def cmd_loss(pred: str, gt: str, weights_path: str, length: bool, angle: bool) -> None:
    """Per-instance structure-loss breakdown between prediction and truth."""
    topology, weights = pio.load_weights(weights_path)
    preds = [pose for _, pose, _ in pio.load_results(pred)]
    gts = _load_gt_poses(gt)
    if len(preds) != len(gts):
        raise click.ClickException(
            f"instance count mismatch: {len(preds)} predictions vs {len(gts)} ground truths"
        )

    totals = np.zeros(3)
    for i, (p, g) in enumerate(zip(preds, gts)):
        value = constraint_loss(p, g, weights, topology,
                                use_length=length, use_angle=angle)
        totals += (value.total, value.length_term, value.angle_term)
        click.echo(
            f"instance {i}: total {value.total:.6f} "
            f"length {value.length_term:.6f} angle {value.angle_term:.6f}"
        )
    click.echo(
        f"aggregate: total {totals[0]:.6f} length {totals[1]:.6f} angle {totals[2]:.6f}"
    )


@main.command("eval")
@click.option("--preds", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gts", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False, writable=True),
              help="Also write the result as JSON.")
@_fail_on_error
def cmd_eval(preds: str, gts: str, out: str | None) -> None:
    """COCO-protocol AP/AR of a results file against an annotation file."""
    pred_list = pio.load_results(preds)
    ann = pio.load_coco_annotations(gts)
    gt_list = [(inst.image_id, inst.pose, inst.area) for inst in ann.instances]
    result = evaluate(pred_list, gt_list)

    for name, value in result.as_dict().items():
        click.echo(f"{name:<10} {value:.6f}")
    blob = json.dumps(result.as_dict())
    if out:
        Path(out).write_text(blob + "\n")
        click.echo(f"wrote {out}")
    else:
        click.echo(blob)


@main.command("synth")
@click.option("--persons", default=1, show_default=True, type=int)
@click.option("--noise", default=0.0, show_default=True, type=float,
              help="Std-dev (px) of the rendered peak position error.")
@click.option("--occlude-limb", is_flag=True,
              help="Zero one random limb's channels per person.")
@click.option("--trials", default=200, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--structure-weight", default=1.0, show_default=True, type=float)
@click.option("--scheme", type=click.Choice(sorted(_SCHEMES)), default="3",
              show_default=True)
@click.option("--steps", default=60, show_default=True, type=int)
@click.option("--step-size", default=4.0, show_default=True, type=float)
@click.option("--jobs", default=1, show_default=True, type=int,
              help="Worker threads; the output is identical for any value.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_fail_on_error
def cmd_synth(persons: int, noise: float, occlude_limb: bool, trials: int,
              seed: int, structure_weight: float, scheme: str, steps: int,
              step_size: float, jobs: int, out: str) -> None:
    """Monte-Carlo occlusion experiment comparing refinement variants."""
    cfg = SynthConfig(
        persons=persons,
        noise=noise,
        occlude_limb=occlude_limb,
        trials=trials,
        seed=seed,
        structure_weight=structure_weight,
        scheme=_SCHEMES[scheme],
        steps=steps,
        step_size=step_size,
        jobs=jobs,
    )
    result = run_experiment(cfg)
    click.echo(result.summary_text(), nl=False)
    paths = write_outputs(result, out)
    for name, path in paths.items():
        click.echo(f"{name}: {path}")


if __name__ == "__main__":
    sys.exit(main())
