"""Command-line entry point.

Subcommands: geoprior build, targets generate, loss eval, watershed run,
evaluate, phantom generate, pipeline demo. Every subcommand is a pure
function of its input files and flags; --threads never changes numeric
results. Exit codes: 0 success, 1 validation error, 2 IO error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import geometry, losses, metrics, phantom, watershed
from .fields import EnergyField, SOURCE_PREDICTION, descent_targets
from .volume import (LABEL, PROB_STACK, SCALAR, VECTOR3, InstanceMap,
                     InstanceRecord, Volume, one_hot, read_volume, write_volume)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with code 2
        raise _UsageError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--log-level", default="info",
                        choices=("debug", "info", "warning", "error"),
                        help="diagnostic verbosity on stderr")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("DENTVOX_THREADS", "0")),
                        help="worker threads (0 = auto); never affects results")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dentvox",
                     description="Tooth instance segmentation toolkit")
    sub = parser.add_subparsers(dest="group", required=True)

    geo = sub.add_parser("geoprior", help="dentition penalty matrices")
    geo_sub = geo.add_subparsers(dest="action", required=True)
    g = geo_sub.add_parser("build", help="build the 33x33 penalty matrix CSV")
    g.add_argument("--male", help="male centroid CSV (default: bundled table)")
    g.add_argument("--female", help="female centroid CSV (default: bundled table)")
    g.add_argument("--out", required=True, help="output matrix CSV")
    g.add_argument("--json", dest="json_out", help="also write a JSON export")
    g.add_argument("--background-penalty", type=float, default=2.0,
                   help="raw background penalty (must exceed 1)")
    _add_common(g)

    tgt = sub.add_parser("targets", help="watershed supervision targets")
    tgt_sub = tgt.add_subparsers(dest="action", required=True)
    t = tgt_sub.add_parser("generate",
                           help="energy + direction targets from labels")
    t.add_argument("--labels", required=True,
                   help="label volume; each nonzero value is one instance")
    t.add_argument("--out-energy", required=True, help="output energy volume")
    t.add_argument("--out-dir", required=True,
                   help="output direction field (vector3)")
    _add_common(t)

    loss = sub.add_parser("loss", help="reference loss evaluation")
    loss_sub = loss.add_subparsers(dest="action", required=True)
    le = loss_sub.add_parser("eval", help="evaluate losses on prediction files")
    le.add_argument("--pred-probs", required=True,
                    help="predicted 33-channel probability volume")
    le.add_argument("--gt-labels", required=True, help="ground-truth labels")
    le.add_argument("--matrix", required=True, help="penalty matrix CSV")
    le.add_argument("--pred-energy", help="predicted energy volume")
    le.add_argument("--gt-energy", help="ground-truth energy volume")
    le.add_argument("--pred-dir", help="predicted direction field")
    le.add_argument("--gt-dir", help="ground-truth direction field")
    le.add_argument("--frequencies",
                    help="JSON list of 33 class frequencies "
                         "(default: counts observed in gt)")
    le.add_argument("--lambda-edt", type=float, default=10.0)
    le.add_argument("--lambda-seg", type=float, default=0.1)
    le.add_argument("--lambda-dir", type=float, default=1e-6)
    le.add_argument("--out", help="write the JSON result here as well")
    _add_common(le)

    ws = sub.add_parser("watershed", help="instance separation")
    ws_sub = ws.add_subparsers(dest="action", required=True)
    w = ws_sub.add_parser("run", help="seeded watershed on an energy map")
    w.add_argument("--energy", required=True, help="energy volume")
    w.add_argument("--seg", required=True, help="multi-class segmentation")
    w.add_argument("--seg-payload", choices=("labels", "probs"),
                   default="labels", help="how to read --seg")
    w.add_argument("--beta", type=float, default=0.5,
                   help="seed threshold as a fraction of each basin peak")
    w.add_argument("--min-seed-voxels", type=int, default=8)
    w.add_argument("--min-instance-voxels", type=int, default=50)
    w.add_argument("--out", required=True, help="output instance label volume")
    w.add_argument("--report", help="per-instance JSON report "
                                    "(default: <out stem>.json)")
    _add_common(w)

    ev = sub.add_parser("evaluate", help="segmentation metrics report")
    ev.add_argument("--pred", required=True, help="predicted labels")
    ev.add_argument("--gt", required=True, help="ground-truth labels")
    ev.add_argument("--pred-inst", help="predicted instance labels")
    ev.add_argument("--gt-inst", help="ground-truth instance labels")
    ev.add_argument("--pred-records", help="instance records JSON for --pred-inst")
    ev.add_argument("--gt-records", help="instance records JSON for --gt-inst")
    ev.add_argument("--out", required=True, help="output report JSON")
    _add_common(ev)

    ph = sub.add_parser("phantom", help="synthetic dentition volumes")
    ph_sub = ph.add_subparsers(dest="action", required=True)
    p = ph_sub.add_parser("generate", help="generate a phantom to a directory")
    p.add_argument("--spec", default="default",
                   help="phantom spec JSON path, or 'default'")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--corrupt", action="store_true",
                   help="also emit corrupted prediction files")
    _add_common(p)

    pipe = sub.add_parser("pipeline", help="end-to-end flows")
    pipe_sub = pipe.add_subparsers(dest="action", required=True)
    d = pipe_sub.add_parser(
        "demo", help="phantom -> targets -> corrupt -> watershed -> evaluate")
    d.add_argument("--spec", default="default",
                   help="phantom spec JSON path, or 'default'")
    d.add_argument("--out", help="write the report JSON here as well")
    _add_common(d)
    return parser


def _load_records(path: Path, labels: Volume) -> tuple[InstanceRecord, ...]:
    blob = json.loads(path.read_text())
    records = []
    for item in blob["instances"]:
        records.append(InstanceRecord(
            instance_id=int(item["id"]),
            seed_voxels=tuple(tuple(int(c) for c in v)
                              for v in item["seed_voxels"]),
            voxel_count=int(item["voxels"]),
            assigned_class=(int(item["class"])
                            if item.get("class") is not None else None),
            seed_peak_energy=(float(item["seed_peak_energy"])
                              if item.get("seed_peak_energy") is not None
                              else None)))
    return tuple(records)


def _records_json(im: InstanceMap) -> dict:
    return {"schema": 1, "instances": [
        {"id": r.instance_id, "voxels": r.voxel_count,
         "class": r.assigned_class, "seed_peak_energy": r.seed_peak_energy,
         "seed_voxels": [list(v) for v in r.seed_voxels]}
        for r in im.records]}


def load_instance_map(labels_path: str | Path,
                      records_path: str | Path | None = None) -> InstanceMap:
    """Load an instance map from its label volume plus optional records JSON;
    without records, each label id becomes an unclassified instance."""
    labels = read_volume(labels_path, LABEL)
    if records_path is not None:
        return InstanceMap(labels=labels,
                           records=_load_records(Path(records_path), labels))
    ids = [int(i) for i in np.unique(labels.data) if i > 0]
    if ids != list(range(1, len(ids) + 1)):
        raise ValueError("instance labels must be contiguous 1..K")
    counts = np.bincount(labels.data.ravel(), minlength=len(ids) + 1)
    records = []
    for i in ids:
        seed = tuple(int(c) for c in np.argwhere(labels.data == i)[0])
        records.append(InstanceRecord(instance_id=i, seed_voxels=(seed,),
                                      voxel_count=int(counts[i])))
    return InstanceMap(labels=labels, records=tuple(records))


def save_instance_map(im: InstanceMap, labels_path: str | Path,
                      records_path: str | Path) -> None:
    write_volume(im.labels, labels_path)
    Path(records_path).write_text(json.dumps(_records_json(im), indent=1) + "\n")


def _labels_to_instances(labels: Volume) -> InstanceMap:
    """Each distinct nonzero label value becomes one instance."""
    values = [int(v) for v in np.unique(labels.data) if v > 0]
    remap = np.zeros(int(labels.data.max(initial=0)) + 1, dtype=np.uint16)
    records = []
    for new_id, value in enumerate(values, start=1):
        remap[value] = new_id
        mask = labels.data == value
        seed = tuple(int(c) for c in np.argwhere(mask)[0])
        records.append(InstanceRecord(
            instance_id=new_id, seed_voxels=(seed,),
            voxel_count=int(mask.sum()),
            assigned_class=value if value <= 32 else None))
    vol = replace(labels, data=remap[labels.data.astype(np.int64)])
    return InstanceMap(labels=vol, records=tuple(records))


def _cmd_geoprior_build(args) -> int:
    male_path = args.male or geometry.bundled_centroid_path("male")
    female_path = args.female or geometry.bundled_centroid_path("female")
    male = geometry.load_centroids(male_path)
    female = geometry.load_centroids(female_path)
    table = geometry.average_dentitions(male, female)
    pm = geometry.build_penalty_matrix(
        table, background_penalty=args.background_penalty)
    geometry.export_penalty_matrix(pm, args.out)
    if args.json_out:
        geometry.export_penalty_matrix_json(pm, args.json_out)
    print(f"wrote {args.out}")
    return 0


def _cmd_targets_generate(args) -> int:
    labels = read_volume(args.labels, LABEL)
    instances = _labels_to_instances(labels)
    energy, direction = descent_targets(instances)
    write_volume(energy.energy, args.out_energy)
    write_volume(direction.directions, args.out_dir)
    print(f"wrote {args.out_energy} and {args.out_dir}")
    return 0


def _cmd_loss_eval(args) -> int:
    pred = read_volume(args.pred_probs, PROB_STACK)
    gt_labels = read_volume(args.gt_labels, LABEL)
    pm = geometry.load_penalty_matrix(args.matrix)
    gt = one_hot(gt_labels)
    if args.frequencies:
        freq = np.array(json.loads(Path(args.frequencies).read_text()),
                        dtype=np.float64)
    else:
        freq = np.bincount(gt_labels.data.ravel().astype(np.int64),
                           minlength=33).astype(np.float64)
    weights = losses.LossWeights(lambda_edt=args.lambda_edt,
                                 lambda_seg=args.lambda_seg,
                                 lambda_dir=args.lambda_dir,
                                 class_frequencies=freq)
    geo = losses.geo_wdl(pred, gt, pm)
    wce = losses.weighted_cross_entropy(pred, gt_labels, weights)
    seg = geo + wce
    edt = direction = None
    if args.pred_energy and args.gt_energy:
        edt = losses.edt_loss(read_volume(args.pred_energy, SCALAR),
                              read_volume(args.gt_energy, SCALAR))
    if args.pred_dir and args.gt_dir:
        direction = losses.direction_loss(read_volume(args.pred_dir, VECTOR3),
                                          read_volume(args.gt_dir, VECTOR3),
                                          gt_labels)
    total = losses.total_loss(edt or 0.0, seg, direction or 0.0, weights)
    result = {"geo_wdl": geo, "wce": wce, "seg": seg, "edt": edt,
              "dir": direction, "total": total}
    text = json.dumps(result, indent=1)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def _cmd_watershed_run(args) -> int:
    energy = EnergyField(energy=read_volume(args.energy, SCALAR),
                         source=SOURCE_PREDICTION)
    payload = PROB_STACK if args.seg_payload == "probs" else LABEL
    seg = read_volume(args.seg, payload)
    cfg = watershed.WatershedConfig(
        beta=args.beta, min_seed_voxels=args.min_seed_voxels,
        min_instance_voxels=args.min_instance_voxels)
    instances = watershed.run_pipeline(energy, seg, cfg)
    stem = args.out
    for ext in (".gz", ".nii", ".f32", ".u16"):
        stem = stem.removesuffix(ext)
    report_path = args.report or stem + ".records.json"
    save_instance_map(instances, args.out, report_path)
    print(f"wrote {args.out} ({instances.count} instances)")
    return 0


def _cmd_evaluate(args) -> int:
    pred = read_volume(args.pred, LABEL)
    gt = read_volume(args.gt, LABEL)
    pred_inst = gt_inst = None
    if args.pred_inst and args.gt_inst:
        pred_inst = load_instance_map(args.pred_inst, args.pred_records)
        gt_inst = load_instance_map(args.gt_inst, args.gt_records)
    report = metrics.evaluate(pred, gt, pred_inst, gt_inst)
    report.to_json(args.out)
    print(f"wrote {args.out}")
    return 0


def _phantom_spec(arg: str) -> phantom.PhantomSpec:
    if arg == "default":
        return phantom.PhantomSpec()
    return phantom.PhantomSpec.from_json(arg)


def _cmd_phantom_generate(args) -> int:
    spec = _phantom_spec(args.spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gt_labels, gt_instances = phantom.generate(spec)
    energy, direction = descent_targets(gt_instances)
    write_volume(gt_labels, out / "gt_labels.nii.gz")
    save_instance_map(gt_instances, out / "gt_instances.nii.gz",
                      out / "gt_instances.json")
    write_volume(energy.energy, out / "gt_energy.nii.gz")
    write_volume(direction.directions, out / "gt_dir.f32")
    if args.corrupt or spec.noise_sigma > 0:
        probs, p_energy, p_dir = phantom.corrupt(gt_labels, gt_instances, spec)
        write_volume(probs, out / "pred_probs.f32")
        write_volume(p_energy.energy, out / "pred_energy.nii.gz")
        write_volume(p_dir.directions, out / "pred_dir.f32")
    print(f"wrote phantom to {out}")
    return 0


def run_demo(spec: phantom.PhantomSpec) -> metrics.MetricReport:
    """Phantom -> targets -> corrupt -> watershed -> evaluate."""
    gt_labels, gt_instances = phantom.generate(spec)
    probs, energy, _direction = phantom.corrupt(gt_labels, gt_instances, spec)
    instances = watershed.run_pipeline(energy, probs)
    pred_labels = watershed.instances_to_labels(instances)
    return metrics.evaluate(pred_labels, gt_labels, instances, gt_instances)


def _cmd_pipeline_demo(args) -> int:
    report = run_demo(_phantom_spec(args.spec))
    text = json.dumps(report.to_dict(), indent=1)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


_HANDLERS = {
    ("geoprior", "build"): _cmd_geoprior_build,
    ("targets", "generate"): _cmd_targets_generate,
    ("loss", "eval"): _cmd_loss_eval,
    ("watershed", "run"): _cmd_watershed_run,
    ("evaluate", None): _cmd_evaluate,
    ("phantom", "generate"): _cmd_phantom_generate,
    ("pipeline", "demo"): _cmd_pipeline_demo,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    handler = _HANDLERS[(args.group, getattr(args, "action", None))]
    try:
        return handler(args)
    except (_UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
