"""Tab-separated manifests.

Correction manifests list one image per row. Either a header row naming the
columns is present (``image_id image probs features relevant`` plus any of
``gt scores init``), or the columns are positional in that same order. The
``features`` column holds a ``.lmt`` feature stack or the word
``HANDCRAFTED``; ``relevant`` is a comma-separated class list. Relative paths
resolve against the manifest's directory.

Threshold-selection manifests use ``image_id probs init gt``.
"""

import csv
import os
from dataclasses import dataclass

from .errors import ConfigError, MissingGroundTruth

HANDCRAFTED = "HANDCRAFTED"
CORRECT_COLUMNS = ("image_id", "image", "probs", "features", "relevant", "gt", "scores", "init")
THETA_COLUMNS = ("image_id", "probs", "init", "gt")


@dataclass
class ManifestRow:
    image_id: str
    image: str
    probs: str
    features: str
    relevant: tuple
    gt: str = None
    scores: str = None
    init: str = None


@dataclass
class ThetaRow:
    image_id: str
    probs: str
    init: str
    gt: str


def _records(path, columns, required):
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, newline="") as fh:
            lines = [r for r in csv.reader(fh, delimiter="\t") if r and not r[0].startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from None
    header = columns
    if lines and lines[0][0].strip().lower() == "image_id":
        header = tuple(c.strip().lower() for c in lines[0])
        unknown = set(header) - set(columns)
        if unknown:
            raise ConfigError(f"{path}: unknown column(s) {sorted(unknown)}")
        lines = lines[1:]
    missing = [c for c in required if c not in header]
    if missing:
        raise ConfigError(f"{path}: missing column(s) {missing}")
    out = []
    for n, fields in enumerate(lines, start=1):
        if len(fields) < len(required) or len(fields) > len(header):
            raise ConfigError(f"{path} row {n}: expected {len(required)}-{len(header)} fields")
        rec = {k: v.strip() for k, v in zip(header, fields) if v.strip() not in ("", "-")}
        for k in rec:
            if k not in ("image_id", "relevant") and rec[k] != HANDCRAFTED:
                rec[k] = os.path.join(base, rec[k])
        out.append(rec)
    return out


def parse_relevant(text):
    try:
        classes = tuple(sorted({int(c) for c in str(text).split(",") if c.strip()}))
    except ValueError:
        raise ConfigError(f"bad relevant-class list {text!r}") from None
    if not classes or min(classes) < 1:
        raise ConfigError(f"relevant classes must be foreground indices >= 1, got {text!r}")
    return classes


def read_manifest(path):
    rows = []
    for rec in _records(path, CORRECT_COLUMNS, CORRECT_COLUMNS[:5]):
        if "scores" not in rec and "init" not in rec:
            raise ConfigError(f"{path}: row {rec['image_id']} needs a scores or init column")
        rec["relevant"] = parse_relevant(rec["relevant"])
        rows.append(ManifestRow(**rec))
    return rows


def read_theta_manifest(path):
    rows = []
    for rec in _records(path, THETA_COLUMNS, THETA_COLUMNS[:3]):
        if "gt" not in rec:
            raise MissingGroundTruth(f"{path}: row {rec['image_id']} has no ground truth")
        rows.append(ThetaRow(**rec))
    return rows


def write_manifest(path, rows, columns=CORRECT_COLUMNS):
    base = os.path.dirname(os.path.abspath(path))

    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, tuple):
            return ",".join(str(c) for c in v)
        if v == HANDCRAFTED or not os.path.isabs(str(v)):
            return str(v)
        return os.path.relpath(v, base)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([cell(getattr(r, c)) for c in columns])
