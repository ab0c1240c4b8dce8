"""Dataset manifests and image loading.

A dataset is a directory of float-map images plus one line-oriented manifest:
each line is a JSON record, either a camera (its two-point color profile) or
an image (path, optional mask path, camera id, ground-truth illuminant,
optional scene id and capture metadata).  Images load lazily and are resized
to a working resolution; ground truth is unit-normalized (with a warning when
the manifest entry was not).
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .floatmap import DataError, read_pfm
from .histograms import RawImage, bilinear_resize
from .sensor import CameraProfile, CaptureMeta

__all__ = [
    "DataError", "WORKING_RES", "LabeledSample", "DatasetManifest",
    "load_dataset", "write_manifest", "leave_one_camera_out",
]

WORKING_RES = (256, 384)  # rows, columns


_META_KEYS = ("iso", "aperture", "exposure_time", "baseline_exposure",
              "baseline_noise")


@dataclass
class LabeledSample:
    """One manifest image entry; pixels stay on disk until load()."""

    image_path: str
    camera: str
    illuminant: np.ndarray
    mask_path: str = None
    scene: str = None
    meta: CaptureMeta = None

    def __post_init__(self):
        ell = np.asarray(self.illuminant, dtype=np.float64)
        if ell.shape != (3,) or np.any(ell <= 0):
            raise DataError(f"{self.image_path}: illuminant must be a "
                            f"positive 3-vector, got {ell}")
        norm = np.linalg.norm(ell)
        if not np.isclose(norm, 1.0, atol=1e-6):
            warnings.warn(f"{self.image_path}: illuminant norm {norm:.6g} "
                          f"re-normalized to 1")
        self.illuminant = ell / norm

    def load(self, working_res=WORKING_RES) -> RawImage:
        """Read the image (and mask), resized to working_res (rows, cols);
        None keeps the stored resolution."""
        data = read_pfm(self.image_path)
        if data.ndim != 3:
            raise DataError(f"{self.image_path}: expected a 3-channel image")
        mask = None
        if self.mask_path is not None:
            m = read_pfm(self.mask_path)
            if m.ndim != 2 or m.shape != data.shape[:2]:
                raise DataError(f"{self.mask_path}: mask shape {m.shape} "
                                f"does not match image {data.shape[:2]}")
            mask = m > 0.5
        if working_res is not None and data.shape[:2] != tuple(working_res):
            h, w = working_res
            data = bilinear_resize(data, h, w)
            if mask is not None:
                mask = bilinear_resize(mask.astype(np.float64), h, w) >= 0.5
        return RawImage(np.clip(data, 0.0, None), mask)


@dataclass
class DatasetManifest:
    """Parsed manifest: camera profiles keyed by id plus image entries."""

    profiles: dict = field(default_factory=dict)
    samples: list = field(default_factory=list)

    def cameras(self) -> list:
        return sorted({s.camera for s in self.samples})


def _require(record, key, where):
    if key not in record:
        raise DataError(f"{where}: missing key {key!r}")
    return record[key]


def _parse_camera(record, where) -> CameraProfile:
    try:
        return CameraProfile(
            np.asarray(_require(record, "c1", where), dtype=np.float64),
            np.asarray(_require(record, "c2", where), dtype=np.float64),
            float(_require(record, "q1", where)),
            float(_require(record, "q2", where)),
            name=_require(record, "camera", where))
    except ValueError as exc:
        raise DataError(f"{where}: {exc}") from None


def _parse_image(record, root, where) -> LabeledSample:
    camera = _require(record, "camera", where)
    path = os.path.join(root, _require(record, "image", where))
    mask = record.get("mask")
    illum = np.asarray(_require(record, "illuminant", where), np.float64)
    meta = None
    if "meta" in record:
        m = record["meta"]
        missing = [k for k in _META_KEYS if k not in m]
        if missing:
            raise DataError(f"{where}: meta missing {missing}")
        try:
            meta = CaptureMeta(illuminant=illum, camera=camera,
                               **{k: float(m[k]) for k in _META_KEYS})
        except ValueError as exc:
            raise DataError(f"{where}: {exc}") from None
    return LabeledSample(
        image_path=path, camera=camera, illuminant=illum,
        mask_path=os.path.join(root, mask) if mask else None,
        scene=record.get("scene"), meta=meta)


def load_dataset(manifest_path, check_files: bool = True) -> DatasetManifest:
    """Parse a manifest; image payloads stay lazy.  Every image's camera must
    have a profile record, and referenced files must exist (unless
    check_files is disabled)."""
    root = os.path.dirname(os.path.abspath(manifest_path))
    manifest = DatasetManifest()
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest: {exc}") from None
    for ln, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"{manifest_path}:{ln}"
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{where}: invalid JSON: {exc}") from None
        kind = _require(record, "type", where)
        if kind == "camera":
            profile = _parse_camera(record, where)
            manifest.profiles[profile.name] = profile
        elif kind == "image":
            manifest.samples.append(_parse_image(record, root, where))
        else:
            raise DataError(f"{where}: unknown record type {kind!r}")
    for s in manifest.samples:
        if s.camera not in manifest.profiles:
            raise DataError(f"camera {s.camera!r} has no profile record")
        if check_files:
            for p in (s.image_path, s.mask_path):
                if p is not None and not os.path.exists(p):
                    raise DataError(f"missing file: {p}")
    return manifest


def write_manifest(manifest: DatasetManifest, path):
    """Emit camera records then image records, paths relative to the
    manifest's directory."""
    root = os.path.dirname(os.path.abspath(path))
    lines = []
    for name in sorted(manifest.profiles):
        p = manifest.profiles[name]
        lines.append(json.dumps({
            "type": "camera", "camera": name, "q1": p.q1, "q2": p.q2,
            "c1": p.c1.tolist(), "c2": p.c2.tolist()}))
    for s in manifest.samples:
        record = {
            "type": "image",
            "camera": s.camera,
            "image": os.path.relpath(s.image_path, root),
            "illuminant": list(s.illuminant),
        }
        if s.mask_path is not None:
            record["mask"] = os.path.relpath(s.mask_path, root)
        if s.scene is not None:
            record["scene"] = s.scene
        if s.meta is not None:
            record["meta"] = {k: getattr(s.meta, k) for k in _META_KEYS}
        lines.append(json.dumps(record))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def leave_one_camera_out(manifest: DatasetManifest, test_camera: str):
    """Split into (train samples, test samples): the held-out camera's images
    all test; training drops that camera and any image sharing a scene id
    with a test image."""
    cameras = manifest.cameras()
    if len(cameras) < 2:
        raise ValueError("leave-one-camera-out needs at least 2 cameras")
    if test_camera not in cameras:
        raise ValueError(f"unknown camera {test_camera!r} (have {cameras})")
    test = [s for s in manifest.samples if s.camera == test_camera]
    test_scenes = {s.scene for s in test if s.scene is not None}
    train = [s for s in manifest.samples
             if s.camera != test_camera and s.scene not in test_scenes]
    return train, test
