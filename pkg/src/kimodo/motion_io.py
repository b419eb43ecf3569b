"""Motion exchange formats.

JSON document (human-readable, version-tagged):
    {version, fps, skeleton_id, n_frames, joint_positions, rotations_6d,
     contacts, smoothed_root, heading, ...extra}

Binary companion (.kmb) for large batches: magic "KMB1", a little-endian
uint32 header length, a UTF-8 JSON header describing the arrays (name, shape,
byte offset), then the raw float32 little-endian array payloads back to back.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .motion_repr import RawMotion

MOTION_FORMAT_VERSION = 1
_MAGIC = b"KMB1"

_ARRAY_FIELDS = ("joint_positions", "rotations_6d", "contacts", "smoothed_root", "heading")


def motion_to_dict(raw: RawMotion, skeleton_id: str, extra: dict | None = None) -> dict:
    doc = {
        "version": MOTION_FORMAT_VERSION,
        "fps": raw.fps,
        "skeleton_id": skeleton_id,
        "n_frames": raw.n_frames,
        "joint_positions": raw.joint_positions.tolist(),
        "rotations_6d": raw.rotations_6d.tolist(),
        "contacts": None if raw.contacts is None else raw.contacts.tolist(),
        "smoothed_root": None if raw.smoothed_root is None else raw.smoothed_root.tolist(),
        "heading": None if raw.heading is None else raw.heading.tolist(),
    }
    if extra:
        doc.update(extra)
    return doc


def motion_from_dict(doc: dict) -> tuple[RawMotion, dict]:
    """Returns the motion and any extra (non-core) keys."""
    if doc.get("version") != MOTION_FORMAT_VERSION:
        raise ValueError(f"unsupported motion format version {doc.get('version')}")

    def arr(key):
        value = doc.get(key)
        return None if value is None else np.asarray(value, dtype=np.float64)

    raw = RawMotion(
        fps=float(doc["fps"]),
        joint_positions=arr("joint_positions"),
        rotations_6d=arr("rotations_6d"),
        contacts=arr("contacts"),
        smoothed_root=arr("smoothed_root"),
        heading=arr("heading"),
    )
    core = {"version", "fps", "skeleton_id", "n_frames", *_ARRAY_FIELDS}
    extra = {k: v for k, v in doc.items() if k not in core}
    extra["skeleton_id"] = doc["skeleton_id"]
    return raw, extra


def save_motion_json(path: str, raw: RawMotion, skeleton_id: str, extra: dict | None = None) -> None:
    with open(path, "w") as f:
        json.dump(motion_to_dict(raw, skeleton_id, extra), f)


def load_motion_json(path: str) -> tuple[RawMotion, dict]:
    with open(path) as f:
        return motion_from_dict(json.load(f))


def save_motion_binary(path: str, raw: RawMotion, skeleton_id: str, extra: dict | None = None) -> None:
    arrays = {}
    for name in _ARRAY_FIELDS:
        value = getattr(raw, name)
        if value is not None:
            arrays[name] = np.ascontiguousarray(value, dtype="<f4")
    header = {
        "version": MOTION_FORMAT_VERSION,
        "fps": raw.fps,
        "skeleton_id": skeleton_id,
        "n_frames": raw.n_frames,
        "arrays": {},
    }
    if extra:
        header.update(extra)
    offset = 0
    for name, arr in arrays.items():
        header["arrays"][name] = {"shape": list(arr.shape), "offset": offset}
        offset += arr.nbytes
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for arr in arrays.values():
            f.write(arr.tobytes())


def load_motion_binary(path: str) -> tuple[RawMotion, dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a motion binary file")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        if header.get("version") != MOTION_FORMAT_VERSION:
            raise ValueError(f"unsupported motion format version {header.get('version')}")
        payload = f.read()
    fields = {}
    for name, info in header["arrays"].items():
        shape = tuple(info["shape"])
        count = int(np.prod(shape))
        start = info["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        fields[name] = arr.reshape(shape).astype(np.float64)
    raw = RawMotion(
        fps=float(header["fps"]),
        joint_positions=fields["joint_positions"],
        rotations_6d=fields["rotations_6d"],
        contacts=fields.get("contacts"),
        smoothed_root=fields.get("smoothed_root"),
        heading=fields.get("heading"),
    )
    core = {"version", "fps", "skeleton_id", "n_frames", "arrays"}
    extra = {k: v for k, v in header.items() if k not in core}
    extra["skeleton_id"] = header["skeleton_id"]
    return raw, extra


def load_clip_binary(path: str):
    """Load a dataset clip (motion + labeling metadata) as a MotionClip."""
    from .synthetic import MotionClip, Segment

    raw, extra = load_motion_binary(path)
    return MotionClip(
        clip_id=extra["clip_id"],
        family=extra["family"],
        style=extra.get("style", ""),
        split=extra.get("split", "train"),
        raw=raw,
        overview_text=extra["overview_text"],
        paraphrases=list(extra.get("paraphrases", [])),
        segments=[Segment(**s) for s in extra.get("segments", [])],
    )


def load_dataset(manifest_path: str) -> list:
    """Load every clip referenced by a dataset manifest."""
    import os

    with open(manifest_path) as f:
        manifest = json.load(f)
    base = os.path.dirname(manifest_path)
    return [load_clip_binary(os.path.join(base, entry["file"])) for entry in manifest["clips"]]
