"""Command line front end.

Exit codes: 0 success, 1 when --strict is set and any per-image step failed,
2 for usage, configuration, or unreadable input data.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .constructor import ConstructorParams, construct
from .editcorrect import (
    LayoutError, ProjectionError, edit_correct, plant_errors,
    project_pseudo_labels,
)
from .entities import LabelFileError, read_entity_set, write_entity_set
from .experts import (
    CascadeConfigError, NoPredictionError, cascade, load_cascade_config,
    read_manifest, write_manifest,
)
from .fingerprint import FpParams, ecfp, tanimoto
from .metrics import MetricsError, evaluate_dataset
from .molgraph import RepairError
from .smiles import SmilesError, parse, write

log = logging.getLogger("detmol.cli")

_CONFIG_TYPES = {
    "strict": bool,
    "jobs": int,
    "k_max": int,
    "radius": int,
    "nbits": int,
    "edits": int,
    "seed": int,
    "atom_merge_iou": float,
    "edge_expand_step": float,
    "edge_expand_limit": float,
    "max_repair_iterations": int,
}


class FatalCliError(RuntimeError):
    pass


def main(argv=None) -> int:
    args_in = list(sys.argv[1:] if argv is None else argv)
    _setup_logging()
    parser, subparsers = _build_parser()
    try:
        defaults = _load_config_defaults(args_in)
    except FatalCliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if defaults:
        # subcommands parse into a fresh namespace, so their own defaults
        # would win; pushing config values into every subparser rewrites the
        # matching action defaults while explicit flags still override
        for sub in subparsers:
            sub.set_defaults(**defaults)
    args = parser.parse_args(args_in)
    try:
        failures = args.handler(args)
    except FatalCliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if failures:
        log.warning("%d image(s) failed", failures)
        if args.strict:
            return 1
    return 0


def _setup_logging() -> None:
    level_name = os.environ.get("MOLGRAPH_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    root = logging.getLogger("detmol")
    root.setLevel(level)
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.addHandler(handler)


def _load_config_defaults(argv: list[str]) -> dict:
    path = None
    for i, token in enumerate(argv):
        if token == "--config":
            if i + 1 >= len(argv):
                raise FatalCliError("--config needs a file argument")
            path = argv[i + 1]
        elif token.startswith("--config="):
            path = token.split("=", 1)[1]
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FatalCliError(f"cannot read config: {exc}") from exc
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(maxsplit=1)
        if len(parts) != 2:
            raise FatalCliError(f"{path}: line {lineno}: expected `key value`")
        key, value = parts[0], parts[1].strip()
        caster = _CONFIG_TYPES.get(key)
        if caster is None:
            raise FatalCliError(f"{path}: line {lineno}: unknown key {key!r}")
        try:
            out[key] = (
                value.lower() in ("1", "true", "yes") if caster is bool
                else caster(value)
            )
        except ValueError as exc:
            raise FatalCliError(f"{path}: line {lineno}: {exc}") from exc
    return out


def _build_parser() -> tuple[argparse.ArgumentParser, list[argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="file of `key value` defaults")
    common.add_argument("--strict", action="store_true",
                        help="exit 1 if any image fails")
    common.add_argument("--jobs", type=int, default=1,
                        help="worker threads; output order is preserved")

    parser = argparse.ArgumentParser(
        prog="detmol",
        description="Molecular graph reconstruction from detection boxes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    children: list[argparse.ArgumentParser] = []

    p = sub.add_parser("construct", parents=[common],
                       help="detections -> SMILES manifest")
    p.add_argument("--detections", required=True,
                   help="root directory of per-image label folders")
    p.add_argument("--images", help="file listing image ids to process")
    p.add_argument("--out", default="-", help="output TSV ('-' for stdout)")
    p.add_argument("--atom-merge-iou", type=float, default=0.5)
    p.add_argument("--edge-expand-step", type=float, default=5.0)
    p.add_argument("--edge-expand-limit", type=float, default=80.0)
    p.add_argument("--max-repair-iterations", type=int, default=10)
    children.append(p)
    p.set_defaults(handler=_cmd_construct)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score predictions against references")
    p.add_argument("--predictions", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--radius", type=int, default=3)
    p.add_argument("--nbits", type=int, default=2048)
    p.add_argument("--pred-detections", help="predicted boxes root, for mAP")
    p.add_argument("--ref-detections", help="reference boxes root, for mAP")
    p.add_argument("--per-type-csv", help="write per-type accuracies here")
    p.add_argument("--json", action="store_true", help="print a JSON report")
    children.append(p)
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("edit-correct", parents=[common],
                       help="repair constructions against reference SMILES")
    p.add_argument("--detections", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--k-max", type=int, default=3)
    p.add_argument("--out-labels", help="write projected label folders here")
    p.add_argument("--summary", default="-",
                   help="TSV of image_id, cost, accepted ('-' for stdout)")
    p.add_argument("--atom-merge-iou", type=float, default=0.5)
    p.add_argument("--edge-expand-step", type=float, default=5.0)
    p.add_argument("--edge-expand-limit", type=float, default=80.0)
    p.add_argument("--max-repair-iterations", type=int, default=10)
    children.append(p)
    p.set_defaults(handler=_cmd_edit_correct)

    p = sub.add_parser("cascade", parents=[common],
                       help="run a recognizer cascade over images")
    p.add_argument("--experts", required=True,
                   help="config file: `name kind source` per line")
    p.add_argument("--references", help="TSV whose image ids are processed")
    p.add_argument("--images", help="file listing image ids to process")
    p.add_argument("--out", default="-", help="output TSV ('-' for stdout)")
    children.append(p)
    p.set_defaults(handler=_cmd_cascade)

    p = sub.add_parser("fingerprint", parents=[common],
                       help="hashed circular fingerprints")
    p.add_argument("smiles", nargs="*", help="SMILES strings")
    p.add_argument("--manifest", help="TSV of image_id, smiles")
    p.add_argument("--radius", type=int, default=3)
    p.add_argument("--nbits", type=int, default=2048)
    p.add_argument("--pair", action="store_true",
                   help="print the Tanimoto similarity of exactly two SMILES")
    children.append(p)
    p.set_defaults(handler=_cmd_fingerprint)

    p = sub.add_parser("perturb", parents=[common],
                       help="render SMILES to label files with planted errors")
    p.add_argument("--smiles", help="single molecule to render")
    p.add_argument("--image-id", default="synthetic")
    p.add_argument("--manifest", help="TSV of image_id, smiles to render")
    p.add_argument("--edits", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="root directory for label folders")
    p.add_argument("--truth-out", help="write the truth manifest here")
    children.append(p)
    p.set_defaults(handler=_cmd_perturb)
    return parser, children


def _ordered_map(fn, items, jobs: int) -> list:
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_rows(out: str, rows: dict[str, str]) -> None:
    if out == "-":
        for image_id, value in rows.items():
            sys.stdout.write(f"{image_id}\t{value}\n")
    else:
        write_manifest(out, rows)


def _read_id_list(path: str) -> list[str]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FatalCliError(f"cannot read image list: {exc}") from exc
    return [line.strip() for line in lines if line.strip()]


def _detection_ids(args) -> list[str]:
    root = Path(args.detections)
    if not root.is_dir():
        raise FatalCliError(f"not a directory: {root}")
    if args.images:
        return _read_id_list(args.images)
    return sorted(p.name for p in root.iterdir() if p.is_dir())


def _constructor_params(args) -> ConstructorParams:
    try:
        return ConstructorParams(
            args.atom_merge_iou, args.edge_expand_step,
            args.edge_expand_limit, args.max_repair_iterations,
        )
    except ValueError as exc:
        raise FatalCliError(str(exc)) from exc


def _read_manifest_or_die(path: str) -> dict[str, str]:
    try:
        return read_manifest(path)
    except (OSError, ValueError) as exc:
        raise FatalCliError(str(exc)) from exc


def _cmd_construct(args) -> int:
    params = _constructor_params(args)
    root = Path(args.detections)
    image_ids = _detection_ids(args)

    def one(image_id: str):
        dropped = []
        try:
            entities = read_entity_set(root, image_id)
            graph = construct(entities, params, dropped)
            return image_id, write(graph), dropped, None
        except (LabelFileError, RepairError, ValueError) as exc:
            return image_id, "", dropped, exc

    failures = 0
    rows = {}
    for image_id, smiles, dropped, error in _ordered_map(one, image_ids, args.jobs):
        for warning in dropped:
            log.warning("%s", warning.format())
        if error is not None:
            log.error("%s: %s", image_id, error)
            failures += 1
        rows[image_id] = smiles
    _write_rows(args.out, rows)
    return failures


def _cmd_evaluate(args) -> int:
    predictions = _read_manifest_or_die(args.predictions)
    references = _read_manifest_or_die(args.references)
    if bool(args.pred_detections) != bool(args.ref_detections):
        raise FatalCliError(
            "--pred-detections and --ref-detections must be given together"
        )
    pred_entities = ref_entities = None
    if args.pred_detections:
        try:
            pred_entities = {
                image_id: read_entity_set(args.pred_detections, image_id)
                for image_id in references
            }
            ref_entities = {
                image_id: read_entity_set(args.ref_detections, image_id)
                for image_id in references
            }
        except LabelFileError as exc:
            raise FatalCliError(str(exc)) from exc
    try:
        fp_params = FpParams(args.radius, args.nbits)
        report = evaluate_dataset(
            predictions, references, fp_params, pred_entities, ref_entities
        )
    except (MetricsError, ValueError) as exc:
        raise FatalCliError(str(exc)) from exc
    if args.per_type_csv:
        Path(args.per_type_csv).write_text(report.per_type_csv(), encoding="utf-8")
    if args.json:
        print(report.to_json())
    else:
        for line in report.summary_lines():
            print(line)
    return 0


def _cmd_edit_correct(args) -> int:
    params = _constructor_params(args)
    references = _read_manifest_or_die(args.references)
    root = Path(args.detections)
    if not root.is_dir():
        raise FatalCliError(f"not a directory: {root}")
    if args.k_max < 0:
        raise FatalCliError("--k-max must be >= 0")
    out_root = Path(args.out_labels) if args.out_labels else None
    if out_root is not None:
        out_root.mkdir(parents=True, exist_ok=True)

    failures = 0
    rows = {}
    for image_id in sorted(references):
        try:
            ref_graph = parse(references[image_id])
        except SmilesError as exc:
            raise FatalCliError(f"{image_id}: bad reference: {exc}") from exc
        try:
            entities = read_entity_set(root, image_id)
            graph = construct(entities, params)
            correction = edit_correct(graph, ref_graph, args.k_max)
            if correction is not None and out_root is not None:
                projected = project_pseudo_labels(
                    entities, correction.script, correction.graph, params
                )
                write_entity_set(out_root, projected)
        except (LabelFileError, RepairError, ProjectionError, ValueError) as exc:
            log.error("%s: %s", image_id, exc)
            failures += 1
            rows[image_id] = "\tno"
            continue
        if correction is None:
            rows[image_id] = "\tno"
        else:
            rows[image_id] = f"{correction.script.cost}\tyes"
    _write_rows(args.summary, rows)
    return failures


def _cmd_cascade(args) -> int:
    try:
        experts = load_cascade_config(args.experts)
    except (OSError, CascadeConfigError) as exc:
        raise FatalCliError(str(exc)) from exc
    if args.references:
        image_ids = sorted(_read_manifest_or_die(args.references))
    elif args.images:
        image_ids = _read_id_list(args.images)
    else:
        raise FatalCliError("one of --references or --images is required")

    def one(image_id: str):
        try:
            return cascade(experts, image_id), None
        except NoPredictionError as exc:
            return None, exc

    failures = 0
    rows = {}
    for image_id, (result, error) in zip(
        image_ids, _ordered_map(one, image_ids, args.jobs)
    ):
        if error is not None:
            log.error("%s", error)
            failures += 1
            rows[image_id] = ""
        else:
            log.info("%s: %s via %s (valid=%s)",
                     image_id, result.smiles, result.expert, result.valid)
            rows[image_id] = result.smiles
    _write_rows(args.out, rows)
    return failures


def _cmd_fingerprint(args) -> int:
    try:
        fp_params = FpParams(args.radius, args.nbits)
    except ValueError as exc:
        raise FatalCliError(str(exc)) from exc
    if args.manifest:
        if args.smiles or args.pair:
            raise FatalCliError("--manifest excludes positional SMILES and --pair")
        rows = _read_manifest_or_die(args.manifest)
        failures = 0
        for image_id, smiles in rows.items():
            try:
                digest = ecfp(parse(smiles), fp_params).to_hex()
            except SmilesError as exc:
                log.error("%s: %s", image_id, exc)
                failures += 1
                digest = ""
            sys.stdout.write(f"{image_id}\t{digest}\n")
        return failures
    if not args.smiles:
        raise FatalCliError("give SMILES arguments or --manifest")
    try:
        graphs = [parse(s) for s in args.smiles]
    except SmilesError as exc:
        raise FatalCliError(str(exc)) from exc
    prints = [ecfp(g, fp_params) for g in graphs]
    if args.pair:
        if len(prints) != 2:
            raise FatalCliError("--pair needs exactly two SMILES")
        print(f"{tanimoto(prints[0], prints[1]):.6f}")
    else:
        for fp in prints:
            print(fp.to_hex())
    return 0


def _cmd_perturb(args) -> int:
    if bool(args.smiles) == bool(args.manifest):
        raise FatalCliError("give exactly one of --smiles or --manifest")
    if args.edits < 0:
        raise FatalCliError("--edits must be >= 0")
    entries = (
        list(_read_manifest_or_die(args.manifest).items())
        if args.manifest else [(args.image_id, args.smiles)]
    )
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)

    failures = 0
    truth_rows = {}
    for offset, (image_id, smiles) in enumerate(entries):
        try:
            graph = parse(smiles)
            entities = plant_errors(graph, args.edits, args.seed + offset, image_id)
            write_entity_set(out_root, entities)
            truth_rows[image_id] = smiles
        except (SmilesError, LayoutError, ValueError) as exc:
            log.error("%s: %s", image_id, exc)
            failures += 1
    if args.truth_out:
        write_manifest(args.truth_out, truth_rows)
    return failures


if __name__ == "__main__":
    sys.exit(main())
