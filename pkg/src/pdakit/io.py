"""Stable on-disk formats.

Feature container (binary, little-endian throughout):
    bytes  0..15   magic ``PDAKIT-FEATURES\\0``
    bytes 16..23   u64 format version (currently 1)
    bytes 24..47   u64 n, u64 d, u64 label flag (0 or 1)
    then           n * d float64 features, row-major
    then           n u32 labels, only when the flag is 1

An equivalent CSV reader/writer accepts a header row ``f0,...,f{d-1}[,label]``.
The container does not carry the class count; task manifests do.

Snapshot container:
    bytes  0..15   magic ``PDAKIT-SNAPSHOT\\0``
    bytes 16..23   u64 JSON header length
    then           UTF-8 JSON header: format version, tensor names/shapes in
                   storage order, and a provenance document
    then           the tensors as row-major float64, concatenated in order

Report CSV and metrics JSON files start with the full resolved configuration
and seed (as ``#``-prefixed JSON lines for CSV, an embedded object for JSON)
so every artifact can be reproduced from its own header.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .core import FeatureDataset, PdakitError, PdaTask
from .model import MlpParams
from .trainer import TrainReport

FEATURE_MAGIC = b"PDAKIT-FEATURES\x00"
SNAPSHOT_MAGIC = b"PDAKIT-SNAPSHOT\x00"
FORMAT_VERSION = 1


class FileFormatError(PdakitError):
    pass


def write_features(path, dataset: FeatureDataset) -> None:
    path = Path(path)
    flag = 0 if dataset.labels is None else 1
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<QQQQ", FORMAT_VERSION, dataset.n, dataset.dim, flag))
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f8").tobytes())
        if flag:
            fh.write(np.ascontiguousarray(dataset.labels, dtype="<u4").tobytes())


def read_features(path, num_classes: Optional[int] = None) -> FeatureDataset:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_features_csv(path, num_classes=num_classes)
    raw = path.read_bytes()
    if len(raw) < 48 or raw[:16] != FEATURE_MAGIC:
        raise FileFormatError(f"{path} is not a feature container")
    version, n, d, flag = struct.unpack("<QQQQ", raw[16:48])
    if version != FORMAT_VERSION:
        raise FileFormatError(f"unsupported feature container version {version}")
    need = 48 + 8 * n * d + (4 * n if flag else 0)
    if len(raw) != need:
        raise FileFormatError(f"{path} is truncated or padded ({len(raw)} bytes, expected {need})")
    feats = np.frombuffer(raw, dtype="<f8", count=n * d, offset=48).reshape(n, d)
    labels = None
    if flag:
        labels = np.frombuffer(raw, dtype="<u4", count=n, offset=48 + 8 * n * d).astype(np.int64)
    if num_classes is None:
        if labels is None:
            raise FileFormatError("unlabeled container needs an explicit num_classes")
        num_classes = int(labels.max()) + 1
    return FeatureDataset(feats, labels, num_classes)


def write_features_csv(path, dataset: FeatureDataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = [f"f{i}" for i in range(dataset.dim)]
        if dataset.labels is not None:
            header.append("label")
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(x) for x in dataset.features[i]]
            if dataset.labels is not None:
                row.append(str(int(dataset.labels[i])))
            writer.writerow(row)


def read_features_csv(path, num_classes: Optional[int] = None) -> FeatureDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        has_labels = header and header[-1] == "label"
        d = len(header) - (1 if has_labels else 0)
        if [f"f{i}" for i in range(d)] != header[:d]:
            raise FileFormatError(f"{path}: expected header f0,...,f{d - 1}[,label]")
        feats, labels = [], []
        for row in reader:
            feats.append([float(x) for x in row[:d]])
            if has_labels:
                labels.append(int(row[d]))
    feats = np.asarray(feats, dtype=np.float64)
    lab = np.asarray(labels, dtype=np.int64) if has_labels else None
    if num_classes is None:
        if lab is None:
            raise FileFormatError("unlabeled CSV needs an explicit num_classes")
        num_classes = int(lab.max()) + 1
    return FeatureDataset(feats, lab, num_classes)


def sha256_of(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ": "), indent=2)


def write_task_manifest(path, task: PdaTask, source_file, target_file, provenance: dict) -> None:
    path = Path(path)
    doc = {
        "format_version": FORMAT_VERSION,
        "num_classes": task.num_classes,
        "shared_classes": sorted(task.shared_classes) if task.shared_classes else None,
        "source": {"path": str(source_file), "sha256": sha256_of(Path(path).parent / source_file)},
        "target": {"path": str(target_file), "sha256": sha256_of(Path(path).parent / target_file)},
        "provenance": provenance,
    }
    path.write_text(canonical_json(doc) + "\n")


def load_task(manifest_path) -> PdaTask:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise FileFormatError(f"task manifest {manifest_path} not found")
    K = int(doc["num_classes"])
    datasets = {}
    for role in ("source", "target"):
        entry = doc[role]
        fpath = manifest_path.parent / entry["path"]
        if not fpath.exists():
            raise FileFormatError(f"{role} feature file {fpath} is missing")
        if sha256_of(fpath) != entry["sha256"]:
            raise FileFormatError(f"{role} feature file {fpath} fails its checksum")
        datasets[role] = read_features(fpath, num_classes=K)
    shared = doc.get("shared_classes")
    return PdaTask(
        datasets["source"],
        datasets["target"],
        K,
        shared_classes=frozenset(shared) if shared else None,
    )


def save_snapshot(path, params: MlpParams, provenance: dict) -> None:
    tensors = params.tensors()
    header = {
        "format_version": FORMAT_VERSION,
        "dtype": "float64",
        "order": "row-major",
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
        "provenance": provenance,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in tensors.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_snapshot(path) -> Tuple[MlpParams, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 24 or raw[:16] != SNAPSHOT_MAGIC:
        raise FileFormatError(f"{path} is not a parameter snapshot")
    (hlen,) = struct.unpack("<Q", raw[16:24])
    header = json.loads(raw[24:24 + hlen].decode())
    offset = 24 + hlen
    tensors: Dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        tensors[entry["name"]] = arr.copy()
        offset += count * 8
    expected = {"W1", "b1", "W2", "b2", "W3", "b3"}
    if set(tensors) != expected:
        raise FileFormatError(f"snapshot tensors {sorted(tensors)} do not form a model")
    return MlpParams(**tensors), header.get("provenance", {})


def write_train_report_csv(path, report: TrainReport, provenance: dict,
                           include_timing: bool = False) -> None:
    """One row per epoch.  Wall-clock timings are excluded unless asked for,
    so a rerun with the same config and seed is byte-identical."""
    num_classes = report.records[0].p_t.shape[0] if report.records else 0
    with open(path, "w", newline="") as fh:
        fh.write("# pdakit train report\n")
        for line in canonical_json(provenance).splitlines():
            fh.write("# " + line + "\n")
        writer = csv.writer(fh)
        header = ["epoch", "risk", "align", "total", "target_accuracy",
                  "bbse_fallback", "skipped_classes"]
        header += [f"p_t_{j}" for j in range(num_classes)]
        if include_timing:
            header.append("wall_time")
        writer.writerow(header)
        for rec in report.records:
            row = [
                rec.epoch,
                repr(rec.risk),
                repr(rec.align),
                repr(rec.total),
                "" if rec.target_accuracy is None else repr(rec.target_accuracy),
                int(rec.bbse_fallback),
                ";".join(str(j) for j in rec.skipped_classes),
            ]
            row += [repr(float(x)) for x in rec.p_t]
            if include_timing:
                row.append(repr(rec.wall_time))
            writer.writerow(row)


def write_metrics_json(path, metrics: dict, provenance: dict) -> None:
    doc = {"metrics": metrics, "provenance": provenance}
    Path(path).write_text(canonical_json(doc) + "\n")
