"""
SA3 - Dataset Files
Write and read one split of the benchmark with explicit error handling

Directory layout:
    manifest.json        class names, seed, split, image size, record list
    images/<id>.ppm      binary PPM (P6), 8-bit RGB, one file per record
    annotations.jsonl    one JSON object per record, in manifest order:
                         {image_id, domain, boxes, classes, image_labels}

Boxes are pixel coordinates [x1, y1, x2, y2], half-open, origin top-left.

Complexity Guarantees:
- write_dataset / read_dataset: O(n) in total pixels plus annotations
- All operations return Result types
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
from PIL import Image

from standards.errors import InvalidArgumentError
from standards.formal_specs import verify_complexity
from standards.result_types import Fault, FaultKind, Ok, Result, fault
from standards.type_definitions import (
    Box, DatasetManifest, DomainLabel, GTInstance, ImageLabelVector, SceneRecord, Split,
)

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
ANNOTATIONS_FILE = "annotations.jsonl"
IMAGES_DIR = "images"
FORMAT_VERSION = 1

ANNOTATION_FIELDS = ("image_id", "domain", "boxes", "classes", "image_labels")


def image_path(image_id: str) -> str:
    return f"{IMAGES_DIR}/{image_id}.ppm"


def annotation_line(record: SceneRecord) -> Dict[str, Any]:
    return {
        "image_id": record.image_id,
        "domain": record.domain.tag,
        "boxes": [[int(v) if float(v).is_integer() else float(v) for v in inst.box.as_tuple()]
                  for inst in record.instances],
        "classes": [inst.class_id for inst in record.instances],
        "image_labels": list(record.image_labels.labels),
    }


def manifest_document(manifest: DatasetManifest) -> Dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "class_names": list(manifest.class_names),
        "seed": manifest.seed,
        "split": manifest.split.value,
        "image_size": manifest.image_size,
        "annotations": ANNOTATIONS_FILE,
        "records": [
            {"image_id": rec.image_id, "domain": rec.domain.tag, "file": image_path(rec.image_id)}
            for rec in manifest.records
        ],
    }


@verify_complexity(time="O(n)", space="O(n)", description="n = total pixels")
def write_dataset(manifest: DatasetManifest, directory: Union[str, Path]) -> Result[Path, Fault]:
    """
    Write manifest, images and annotations under `directory`.

    Returns:
        Success[Path]: the directory
        Failure[Fault]: IO fault
    """
    root = Path(directory)
    try:
        (root / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
        for rec in manifest.records:
            Image.fromarray(rec.image).save(root / image_path(rec.image_id), format="PPM")
        with (root / ANNOTATIONS_FILE).open("w", encoding="utf-8") as out:
            for rec in manifest.records:
                out.write(json.dumps(annotation_line(rec), sort_keys=True) + "\n")
        with (root / MANIFEST_FILE).open("w", encoding="utf-8") as out:
            json.dump(manifest_document(manifest), out, indent=2, sort_keys=True)
            out.write("\n")
    except OSError as e:
        return fault(FaultKind.IO, f"cannot write dataset: {e}", str(root))
    logger.info("wrote %d records to %s", len(manifest.records), root)
    return Ok(root)


def _load_manifest(path: Path) -> Result[Dict[str, Any], Fault]:
    if not path.is_file():
        return fault(FaultKind.MISSING_ASSET, "manifest not found", str(path))
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        return fault(FaultKind.PARSE, f"malformed manifest: {e.msg}", str(path), e.lineno)
    except (OSError, UnicodeDecodeError) as e:
        return fault(FaultKind.IO, f"cannot read manifest: {e}", str(path))
    if not isinstance(document, dict):
        return fault(FaultKind.PARSE, "manifest must be a JSON object", str(path))
    for key in ("class_names", "seed", "split", "image_size", "records"):
        if key not in document:
            return fault(FaultKind.PARSE, f"manifest is missing '{key}'", str(path))
    if document.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
        return fault(FaultKind.PARSE, f"unsupported dataset format {document['format_version']}", str(path))
    return Ok(document)


def _parse_annotation(raw: str, num_classes: int) -> Tuple[str, DomainLabel, Tuple[GTInstance, ...],
                                                          ImageLabelVector]:
    """Raises ValueError for malformed content, InvalidArgumentError for invalid values."""
    entry = json.loads(raw)
    if not isinstance(entry, dict):
        raise ValueError("annotation must be a JSON object")
    missing = [k for k in ANNOTATION_FIELDS if k not in entry]
    if missing:
        raise ValueError(f"annotation is missing {missing}")
    boxes, classes = entry["boxes"], entry["classes"]
    if not isinstance(boxes, list) or not isinstance(classes, list) or len(boxes) != len(classes):
        raise ValueError("boxes and classes must be lists of equal length")
    instances = tuple(GTInstance(Box.from_sequence(b), int(c)) for b, c in zip(boxes, classes))
    labels = ImageLabelVector(tuple(int(v) for v in entry["image_labels"]))
    if len(labels) != num_classes:
        raise InvalidArgumentError(f"image_labels has {len(labels)} entries, expected {num_classes}")
    return str(entry["image_id"]), DomainLabel.parse(str(entry["domain"])), instances, labels


def _load_image(path: Path) -> Result[np.ndarray, Fault]:
    if not path.is_file():
        return fault(FaultKind.MISSING_ASSET, "image file not found", str(path))
    try:
        with Image.open(path) as img:
            img.load()
            return Ok(np.array(img.convert("RGB"), dtype=np.uint8))
    except OSError as e:
        return fault(FaultKind.MISSING_ASSET, f"corrupt image: {e}", str(path))


@verify_complexity(time="O(n)", space="O(n)", description="n = total pixels")
def read_dataset(directory: Union[str, Path]) -> Result[DatasetManifest, Fault]:
    """
    Load one split written by write_dataset.

    Returns:
        Success[DatasetManifest]
        Failure[Fault]:
            PARSE - malformed manifest or annotation line (file and line named)
            VALIDATION - well-formed but invalid values, e.g. x2 ≤ x1
            MISSING_ASSET - missing or truncated image file
    """
    root = Path(directory)
    manifest_path = root / MANIFEST_FILE
    loaded = _load_manifest(manifest_path)
    if loaded.is_failure():
        return loaded
    document = loaded.unwrap()
    try:
        class_names = tuple(str(n) for n in document["class_names"])
        split = Split(document["split"])
        image_size = int(document["image_size"])
        seed = int(document["seed"])
        entries = [(str(r["image_id"]), str(r["file"])) for r in document["records"]]
    except (KeyError, TypeError, ValueError) as e:
        return fault(FaultKind.PARSE, f"malformed manifest field: {e}", str(manifest_path))

    annotations_path = root / str(document.get("annotations", ANNOTATIONS_FILE))
    if not annotations_path.is_file():
        return fault(FaultKind.MISSING_ASSET, "annotations not found", str(annotations_path))
    parsed: Dict[str, Tuple[DomainLabel, Tuple[GTInstance, ...], ImageLabelVector]] = {}
    with annotations_path.open("rb") as lines:
        for number, raw in enumerate(lines, start=1):
            if not raw.strip():
                continue
            try:
                image_id, domain, instances, labels = _parse_annotation(raw.decode("utf-8"), len(class_names))
            except InvalidArgumentError as e:
                return fault(FaultKind.VALIDATION, str(e), str(annotations_path), number)
            except (ValueError, TypeError) as e:
                return fault(FaultKind.PARSE, f"malformed annotation: {e}", str(annotations_path), number)
            if image_id in parsed:
                return fault(FaultKind.VALIDATION, f"duplicate annotation for {image_id}",
                             str(annotations_path), number)
            parsed[image_id] = (domain, instances, labels)

    records: List[SceneRecord] = []
    for image_id, file_name in entries:
        if image_id not in parsed:
            return fault(FaultKind.VALIDATION, f"no annotation for {image_id}", str(annotations_path))
        image = _load_image(root / file_name)
        if image.is_failure():
            return image
        domain, instances, labels = parsed.pop(image_id)
        try:
            records.append(SceneRecord(image_id, domain, image.unwrap(), instances, labels))
        except InvalidArgumentError as e:
            return fault(FaultKind.VALIDATION, str(e), str(root / file_name))
    if parsed:
        return fault(FaultKind.VALIDATION, f"annotations for unlisted images: {sorted(parsed)}",
                     str(annotations_path))
    try:
        manifest = DatasetManifest(class_names, tuple(records), seed, split, image_size)
    except InvalidArgumentError as e:
        return fault(FaultKind.VALIDATION, str(e), str(manifest_path))
    logger.debug("read %d records from %s", len(records), root)
    return Ok(manifest)
