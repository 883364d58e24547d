"""Trajectory bundles: ``manifest.json`` plus a raw little-endian ``frames.bin``."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidDataset
from .geom import DEFAULT_CUTOFF, LIGAND, RECEPTOR, Trajectory

MAGIC = b"TRJ1"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_frames(path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f8")
    t, n, _ = frames.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, t, n))
        fh.write(frames.tobytes())


def read_frames(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise InvalidDataset(f"{path}: truncated header")
    magic, version, t, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise InvalidDataset(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise InvalidDataset(f"{path}: unsupported version {version}")
    expected = _HEADER.size + t * n * 3 * 8
    if len(data) != expected:
        raise InvalidDataset(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(t, n, 3).astype(np.float64)


def write_bundle(directory, traj: Trajectory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    atoms = [{"element": e, "partition": LIGAND if a < traj.n_ligand else RECEPTOR,
              "feature": [float(v) for v in traj.features[a]]}
             for a, e in enumerate(traj.elements)]
    manifest = {
        "format": "trajectory-bundle", "version": VERSION,
        "n_frames": traj.n_frames, "n_atoms": len(traj.elements), "n_ligand": traj.n_ligand,
        "label": traj.label, "cutoff": traj.cutoff, "atoms": atoms, "meta": traj.meta,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    write_frames(directory / "frames.bin", traj.frames)
    return directory


def read_bundle(directory) -> Trajectory:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError:
        raise InvalidDataset(f"{directory}: no manifest.json") from None
    except json.JSONDecodeError as exc:
        raise InvalidDataset(f"{directory}: manifest is not valid JSON ({exc})") from None
    try:
        atoms = manifest["atoms"]
        n_ligand = int(manifest["n_ligand"])
        frames = read_frames(directory / "frames.bin")
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidDataset(f"{directory}: malformed manifest ({exc})") from None
    except FileNotFoundError:
        raise InvalidDataset(f"{directory}: no frames.bin") from None
    parts = [a["partition"] for a in atoms]
    if parts != [LIGAND] * n_ligand + [RECEPTOR] * (len(atoms) - n_ligand):
        raise InvalidDataset(f"{directory}: atoms must be stored ligand first")
    if frames.shape[:2] != (manifest["n_frames"], len(atoms)):
        raise InvalidDataset(f"{directory}: frames do not match the manifest")
    return Trajectory(
        elements=tuple(a["element"] for a in atoms), n_ligand=n_ligand,
        features=np.array([a["feature"] for a in atoms], dtype=np.float64), frames=frames,
        label=manifest.get("label"), cutoff=float(manifest.get("cutoff", DEFAULT_CUTOFF)),
        meta=manifest.get("meta", {}),
    )


def bundle_dirs(root) -> list[Path]:
    """Bundle directories under ``root`` (or ``root`` itself), sorted by name."""
    root = Path(root)
    if (root / "manifest.json").exists():
        return [root]
    if not root.is_dir():
        raise InvalidDataset(f"{root}: not a directory")
    dirs = sorted(p for p in root.iterdir() if (p / "manifest.json").exists())
    if not dirs:
        raise InvalidDataset(f"{root}: contains no trajectory bundles")
    return dirs


def read_bundles(root) -> list[Trajectory]:
    return [read_bundle(d) for d in bundle_dirs(root)]
