"""On-disk formats: checkpoints, scene files, referral and log JSONL.

Checkpoint container (all integers little-endian)::

    bytes 0-7    magic  b"GLCKPT\\x00\\x01"
    bytes 8-15   uint64 length H of the header
    next H bytes UTF-8 JSON header:
                 {"meta": {...}, "records": [{"name", "shape", "offset", "count"}, ...]}
    rest         float64 values of every record, concatenated; ``offset`` and
                 ``count`` are in elements from the start of this block

Scene files are JSON objects whose arrays are stored as
``{"dtype": "<f8", "shape": [...], "data": <base64 of the raw bytes>}``.
"""

from __future__ import annotations

import base64
import json
import struct
from pathlib import Path

import numpy as np

from .datagen import Corpus, Referral, Scene

MAGIC = b"GLCKPT\x00\x01"


class FormatError(ValueError):
    pass


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    records, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        records.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        blobs.append(a.tobytes())
        offset += a.size
    header = _json_bytes({"meta": meta or {}, "records": records})
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    body = raw[16 + hlen:]
    values = np.frombuffer(body, dtype="<f8")
    arrays = {}
    for rec in header["records"]:
        start, count = rec["offset"], rec["count"]
        if start + count > values.size:
            raise FormatError(f"{path}: record {rec['name']} runs past end of data")
        arrays[rec["name"]] = values[start:start + count].reshape(rec["shape"]).astype(np.float64)
    return arrays, header.get("meta", {})


def save_checkpoint(path, model, config=None) -> None:
    meta = {"config": config.to_dict()} if config is not None else {}
    write_checkpoint(path, model.state_dict(), meta)


def load_model(path, config=None):
    """Rebuild a model from a checkpoint, using the stored config unless one is given."""
    from .harness.config import RunConfig
    from .model import GroundingModel

    arrays, meta = read_checkpoint(path)
    if config is None:
        if "config" not in meta:
            raise FormatError(f"{path}: no stored config; pass one explicitly")
        config = RunConfig.from_dict(meta["config"])
    model = GroundingModel(config)
    model.load_state_dict(arrays)
    return model


# --------------------------------------------------------------------------
# scenes and referrals
# --------------------------------------------------------------------------

def _pack(arr: np.ndarray, dtype: str = "<f8") -> dict:
    a = np.ascontiguousarray(arr, dtype=dtype)
    return {"dtype": dtype, "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _unpack(obj: dict) -> np.ndarray:
    a = np.frombuffer(base64.b64decode(obj["data"]), dtype=obj["dtype"])
    return a.reshape(obj["shape"]).copy()


def scene_to_json(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "points": _pack(scene.points),
        "instance_masks": _pack(scene.instance_masks),
        "instance_class": scene.instance_class.tolist(),
        "instance_color": scene.instance_color.tolist(),
        "centroids": _pack(scene.centroids),
        "mean_colors": _pack(scene.mean_colors),
    }


def scene_from_json(obj: dict) -> Scene:
    return Scene(
        obj["scene_id"],
        _unpack(obj["points"]).astype(np.float64),
        _unpack(obj["instance_masks"]).astype(np.float64),
        np.asarray(obj["instance_class"], dtype=np.int64),
        np.asarray(obj["instance_color"], dtype=np.int64),
        _unpack(obj["centroids"]).astype(np.float64),
        _unpack(obj["mean_colors"]).astype(np.float64),
    )


def save_scene(path, scene: Scene) -> None:
    Path(path).write_bytes(_json_bytes(scene_to_json(scene)))


def load_scene(path) -> Scene:
    return scene_from_json(json.loads(Path(path).read_text()))


def referral_to_json(r: Referral) -> dict:
    return {
        "scene_id": r.scene_id,
        "referral_id": r.referral_id,
        "tokens": list(map(int, r.tokens)),
        "span": list(map(int, r.span)),
        "target": int(r.target),
        "difficulty": r.difficulty,
        "view_dependent": bool(r.view_dependent),
        "kind": r.kind,
        "n_distractors": int(r.n_distractors),
        "anchor": int(r.anchor),
    }


def referral_from_json(obj: dict) -> Referral:
    return Referral(
        scene_id=obj["scene_id"], tokens=list(obj["tokens"]), span=list(obj["span"]),
        target=int(obj["target"]), kind=obj.get("kind", ""), difficulty=obj["difficulty"],
        view_dependent=bool(obj["view_dependent"]), n_distractors=int(obj.get("n_distractors", 0)),
        referral_id=obj.get("referral_id", ""), anchor=int(obj.get("anchor", -1)),
    )


def write_jsonl(path, records) -> None:
    with open(path, "wb") as f:
        for rec in records:
            f.write(_json_bytes(rec) + b"\n")


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def save_corpus(out_dir, corpus: Corpus) -> None:
    """``scenes/<id>.json`` per scene plus ``referrals.jsonl``."""
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    for sid, scene in sorted(corpus.scenes.items()):
        save_scene(out / "scenes" / f"{sid}.json", scene)
    write_jsonl(out / "referrals.jsonl", [referral_to_json(r) for r in corpus.referrals])


def load_corpus(in_dir) -> Corpus:
    src = Path(in_dir)
    refs = [referral_from_json(o) for o in read_jsonl(src / "referrals.jsonl")]
    scenes = {}
    for sid in sorted({r.scene_id for r in refs}):
        scenes[sid] = load_scene(src / "scenes" / f"{sid}.json")
    return Corpus(scenes, refs)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
