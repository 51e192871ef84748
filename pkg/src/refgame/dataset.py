"""Data model, file formats, the split protocol, and the text importer.

On disk a dataset is manifest.json plus payload.bin, a single little-endian
raw float32 payload. Sender views are per-class arrays of feature vectors
(or fixed-size vector sets for the attention sender); receiver views are one
embedding vector or one ragged word-vector set per class.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "payload.bin"
FORMAT = "refgame-dataset-v1"


@dataclass
class SplitDef:
    image_ranges: dict[int, tuple[int, int]]  # class_id -> [lo, hi) into its sender views
    candidates: list[int]                     # ordered receiver candidate classes


@dataclass
class Dataset:
    classes: list[tuple[int, str]]
    sender_views: dict[int, np.ndarray]       # (n, dim) or (n, set, dim), float32
    receiver_views: dict[int, np.ndarray]     # (dim,) or (words, dim), float32
    splits: dict[str, SplitDef] = field(default_factory=dict)
    difficulty: dict[int, float] | None = None

    @property
    def sender_dim(self) -> int:
        return next(iter(self.sender_views.values())).shape[-1]

    @property
    def receiver_dim(self) -> int:
        return next(iter(self.receiver_views.values())).shape[-1]

    def class_name(self, class_id: int) -> str:
        for cid, name in self.classes:
            if cid == class_id:
                return name
        raise DataError(f"unknown class id {class_id}")

    def validate(self) -> None:
        if not self.classes:
            raise DataError("dataset has no classes")
        sender_dim = receiver_dim = None
        for cid, name in self.classes:
            sv = self.sender_views.get(cid)
            if sv is None or len(sv) < 1:
                raise DataError(f"class {name!r} ({cid}) has no sender views")
            rv = self.receiver_views.get(cid)
            if rv is None:
                raise DataError(f"class {name!r} ({cid}) has no receiver view")
            if sender_dim is None:
                sender_dim, receiver_dim = sv.shape[-1], rv.shape[-1]
            if sv.shape[-1] != sender_dim:
                raise DataError(
                    f"class {name!r} ({cid}): sender dim {sv.shape[-1]} != {sender_dim}")
            if rv.shape[-1] != receiver_dim:
                raise DataError(
                    f"class {name!r} ({cid}): receiver dim {rv.shape[-1]} != {receiver_dim}")
        known = {cid for cid, _ in self.classes}
        for split_name, split in self.splits.items():
            seen: dict[int, list[tuple[int, int]]] = {}
            for cid, (lo, hi) in split.image_ranges.items():
                if cid not in known:
                    raise DataError(f"split {split_name!r} references unknown class {cid}")
                n = len(self.sender_views[cid])
                if not (0 <= lo < hi <= n):
                    raise DataError(
                        f"split {split_name!r}: range [{lo}, {hi}) invalid for class {cid} "
                        f"with {n} views")
                seen.setdefault(cid, []).append((lo, hi))
            for cid in split.candidates:
                if cid not in known:
                    raise DataError(f"split {split_name!r} candidate {cid} is unknown")
        # ranges of the same class must be disjoint across splits
        per_class: dict[int, list[tuple[str, int, int]]] = {}
        for split_name, split in self.splits.items():
            for cid, (lo, hi) in split.image_ranges.items():
                per_class.setdefault(cid, []).append((split_name, lo, hi))
        for cid, ranges in per_class.items():
            ranges.sort(key=lambda r: r[1])
            for (name_a, lo_a, hi_a), (name_b, lo_b, hi_b) in zip(ranges, ranges[1:]):
                if lo_b < hi_a:
                    raise DataError(
                        f"class {cid}: splits {name_a!r} and {name_b!r} overlap "
                        f"([{lo_a},{hi_a}) vs [{lo_b},{hi_b}))")


def save_dataset(ds: Dataset, path) -> None:
    """Write manifest.json + payload.bin (little-endian float32)."""
    ds.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    classes_meta = []
    chunks = []
    offset = 0

    def write_array(arr: np.ndarray) -> tuple[int, int]:
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        start = offset
        chunks.append(raw)
        offset += len(raw)
        return start, len(raw)

    for cid, name in ds.classes:
        sv, rv = ds.sender_views[cid], ds.receiver_views[cid]
        s_off, s_bytes = write_array(sv)
        r_off, r_bytes = write_array(rv)
        classes_meta.append({
            "id": cid,
            "name": name,
            "sender_shape": list(sv.shape),
            "sender_offset": s_off,
            "sender_nbytes": s_bytes,
            "receiver_shape": list(rv.shape),
            "receiver_offset": r_off,
            "receiver_nbytes": r_bytes,
        })
    manifest = {
        "format": FORMAT,
        "sender_dim": ds.sender_dim,
        "receiver_dim": ds.receiver_dim,
        "classes": classes_meta,
        "splits": {
            name: {
                "image_ranges": {str(c): list(r) for c, r in sorted(s.image_ranges.items())},
                "candidates": s.candidates,
            } for name, s in sorted(ds.splits.items())
        },
        "difficulty": ({str(c): v for c, v in sorted(ds.difficulty.items())}
                       if ds.difficulty is not None else None),
    }
    (path / PAYLOAD_NAME).write_bytes(b"".join(chunks))
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_dataset(path) -> Dataset:
    """Read and validate a dataset directory."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"no dataset manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"malformed dataset manifest {manifest_path}: {e}") from e
    if manifest.get("format") != FORMAT:
        raise DataError(f"unsupported dataset format {manifest.get('format')!r}")
    payload = (path / PAYLOAD_NAME).read_bytes()

    def read_array(meta: dict, kind: str, class_name: str) -> np.ndarray:
        off, nbytes = meta[f"{kind}_offset"], meta[f"{kind}_nbytes"]
        shape = tuple(meta[f"{kind}_shape"])
        expected = int(np.prod(shape)) * 4
        raw = payload[off:off + nbytes]
        if nbytes != expected or len(raw) != nbytes:
            raise DataError(
                f"class {class_name!r}: {kind} payload holds {len(raw)} bytes, "
                f"manifest advertises shape {shape} ({expected} bytes)")
        return np.frombuffer(raw, dtype="<f4").reshape(shape)

    classes, sender_views, receiver_views = [], {}, {}
    for meta in manifest["classes"]:
        cid, name = meta["id"], meta["name"]
        classes.append((cid, name))
        sender_views[cid] = read_array(meta, "sender", name)
        receiver_views[cid] = read_array(meta, "receiver", name)
    total = sum(m["sender_nbytes"] + m["receiver_nbytes"] for m in manifest["classes"])
    if total != len(payload):
        raise DataError(f"payload has {len(payload)} bytes, manifest expects {total}")
    splits = {
        name: SplitDef(
            image_ranges={int(c): tuple(r) for c, r in s["image_ranges"].items()},
            candidates=list(s["candidates"]),
        ) for name, s in manifest.get("splits", {}).items()
    }
    difficulty = manifest.get("difficulty")
    if difficulty is not None:
        difficulty = {int(c): float(v) for c, v in difficulty.items()}
    ds = Dataset(classes, sender_views, receiver_views, splits, difficulty)
    ds.validate()
    return ds


@dataclass
class SplitCounts:
    train: int
    val: int
    test: int
    out_of_domain: int = 0
    transfer: int = 0


def make_splits(ds: Dataset, in_domain: list[int], out_of_domain: list[int],
                transfer: list[int], counts: SplitCounts) -> Dataset:
    """Attach the three-way evaluation protocol to a dataset.

    Held-out splits always include the training classes among the receiver's
    candidates, so their candidate sets are larger than the class lists.
    """
    groups = [set(in_domain), set(out_of_domain), set(transfer)]
    for i, a in enumerate(groups):
        for b in groups[i + 1:]:
            both = a & b
            if both:
                raise DataError(f"class lists overlap: {sorted(both)}")
    in_domain = sorted(in_domain)
    out_of_domain = sorted(out_of_domain)
    transfer = sorted(transfer)
    if not in_domain:
        raise DataError("in-domain class list is empty")
    if not out_of_domain:
        log.warning("out-of-domain split is empty")

    def check_views(cids: list[int], needed: int, label: str) -> None:
        for cid in cids:
            have = len(ds.sender_views[cid])
            if have < needed:
                raise DataError(
                    f"class {cid} has {have} views, {label} needs {needed}")

    check_views(in_domain, counts.train + counts.val + counts.test, "train/val/test")
    splits = {
        "train": SplitDef({c: (0, counts.train) for c in in_domain}, in_domain),
        "val": SplitDef({c: (counts.train, counts.train + counts.val) for c in in_domain},
                        in_domain),
        "test_in": SplitDef(
            {c: (counts.train + counts.val, counts.train + counts.val + counts.test)
             for c in in_domain}, in_domain),
    }
    if out_of_domain:
        check_views(out_of_domain, counts.out_of_domain, "out-of-domain")
        splits["test_out"] = SplitDef(
            {c: (0, counts.out_of_domain) for c in out_of_domain},
            in_domain + out_of_domain)
    if transfer:
        check_views(transfer, counts.transfer, "transfer")
        splits["test_transfer"] = SplitDef(
            {c: (0, counts.transfer) for c in transfer},
            in_domain + transfer)
    out = Dataset(ds.classes, ds.sender_views, ds.receiver_views, splits, ds.difficulty)
    out.validate()
    return out


def import_receiver_text(ds: Dataset, descriptions_path, embeddings_path,
                         pooled: bool = True) -> Dataset:
    """Rebuild receiver views from a description file plus an embedding table.

    The description file has one line per class, "class_name<TAB>token token ...";
    the table has "token v1 v2 ..." lines. Descriptions are lowercased and
    deduplicated (bag of unique words, first occurrence kept); pooled mode
    stores the mean vector, otherwise the word-vector set.
    """
    table: dict[str, np.ndarray] = {}
    dim = None
    with Path(embeddings_path).open() as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            vec = np.asarray([float(v) for v in parts[1:]], dtype=np.float32)
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise DataError(
                    f"embedding table row {parts[0]!r} has {vec.shape[0]} dims, expected {dim}")
            table[parts[0].lower()] = vec
    if not table:
        raise DataError(f"embedding table {embeddings_path} is empty")

    by_name = {name: cid for cid, name in ds.classes}
    new_views: dict[int, np.ndarray] = {}
    with Path(descriptions_path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise DataError(f"descriptions line {lineno}: missing tab separator")
            name, text = line.split("\t", 1)
            cid = by_name.get(name)
            if cid is None:
                raise DataError(f"descriptions line {lineno}: unknown class {name!r}")
            tokens = []
            for tok in text.lower().split():
                if tok not in tokens:
                    tokens.append(tok)
            vectors = []
            for tok in tokens:
                vec = table.get(tok)
                if vec is None:
                    log.warning("class %r: token %r not in embedding table", name, tok)
                else:
                    vectors.append(vec)
            if not vectors:
                raise DataError(f"class {name!r} has no in-vocabulary tokens")
            arr = np.stack(vectors)
            new_views[cid] = arr.mean(axis=0) if pooled else arr
    missing = [name for cid, name in ds.classes if cid not in new_views]
    if missing:
        raise DataError(f"descriptions file is missing classes: {missing}")
    out = Dataset(ds.classes, ds.sender_views, new_views, ds.splits, ds.difficulty)
    out.validate()
    return out
