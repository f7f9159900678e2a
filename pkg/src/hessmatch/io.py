"""Frame stores, content hashes and run manifests."""

import configparser
import io
import os

import numpy as np

from .aa_system import Frames
from .errors import HashMismatch, StoreMismatch
from .targets import atomic_write

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data):
    """FNV-1a 64-bit hash of a bytes object."""
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def file_hash(path):
    with open(path, "rb") as fh:
        return f"{fnv1a64(fh.read()):016x}"


def _fmt(row):
    return " ".join(f"{x:.17g}" for x in row)


def write_frames(path, frames):
    """Frame store: a header line, then per frame ``frame=<t>``, a positions
    line and (fine-grained space only) a forces line."""
    lines = [f"FRAMES v1 n={frames.n} dim={frames.dim} space={frames.space}"]
    with_forces = frames.space == "AA"
    if with_forces and frames.forces is None:
        raise ValueError("fine-grained frames must carry forces")
    for i, t in enumerate(frames.frame_index):
        lines.append(f"frame={int(t)}")
        lines.append(_fmt(frames.positions[i]))
        if with_forces:
            lines.append(_fmt(frames.forces[i]))
    atomic_write(path, "\n".join(lines) + "\n")


def read_frames(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise StoreMismatch(f"{path} is empty")
    parts = lines[0].split()
    if parts[:2] != ["FRAMES", "v1"]:
        raise StoreMismatch(f"{path} is not a FRAMES v1 store")
    head = dict(p.split("=", 1) for p in parts[2:])
    n, dim, space = int(head["n"]), int(head["dim"]), head["space"]
    if space not in ("AA", "CG"):
        raise StoreMismatch(f"{path}: unknown space {space!r}")
    block = 3 if space == "AA" else 2
    body = lines[1:]
    if len(body) % block:
        raise StoreMismatch(f"{path}: truncated frame")
    idx, pos, frc = [], [], []
    for k in range(0, len(body), block):
        if not body[k].startswith("frame="):
            raise StoreMismatch(f"{path}: expected a frame line, got {body[k]!r}")
        idx.append(int(body[k][6:]))
        pos.append([float(x) for x in body[k + 1].split()])
        if space == "AA":
            frc.append([float(x) for x in body[k + 2].split()])
    positions = np.array(pos).reshape(len(idx), n * dim)
    forces = np.array(frc).reshape(len(idx), n * dim) if space == "AA" else None
    return Frames(positions, n, dim, frame_index=idx, forces=forces, space=space)


def trajectory_frames(traj, n, dim):
    """Wrap a CG trajectory array ``(T, d)`` as frames for storage."""
    return Frames(traj, n, dim, space="CG")


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


class Manifest:
    """Run manifest: the configuration sections plus produced files and hashes.

    Stored as INI; paths in ``[files]`` are relative to the manifest's
    directory. Loading verifies every recorded hash.
    """

    def __init__(self, path, parser):
        self.path = os.path.abspath(path)
        self.parser = parser

    @property
    def root(self):
        return os.path.dirname(self.path)

    @classmethod
    def create(cls, path, config):
        p = configparser.ConfigParser(interpolation=None)
        p.optionxform = str
        p["manifest"] = {"version": "1"}
        for section in config.parser.sections():
            p[section] = dict(config.parser[section])
        p["files"] = {}
        p["hashes"] = {}
        return cls(path, p)

    @classmethod
    def load(cls, path, verify=True):
        p = configparser.ConfigParser(interpolation=None)
        p.optionxform = str
        with open(path) as fh:
            p.read_file(fh, source=path)
        m = cls(path, p)
        if p.get("manifest", "version", fallback=None) != "1":
            raise StoreMismatch(f"{path}: unsupported manifest version")
        if verify:
            m.verify()
        return m

    def verify(self):
        for key, rel in self.parser["files"].items():
            full = os.path.join(self.root, rel)
            expected = self.parser["hashes"].get(key)
            if not os.path.exists(full):
                raise HashMismatch(f"{key}: {full} is missing")
            actual = file_hash(full)
            if expected != actual:
                raise HashMismatch(f"{key}: {full} has hash {actual}, manifest records {expected}")

    def file(self, key):
        if key not in self.parser["files"]:
            raise StoreMismatch(f"manifest has no {key!r} entry; run the producing step first")
        return os.path.join(self.root, self.parser["files"][key])

    def has(self, key):
        return key in self.parser["files"]

    def record(self, key, full_path):
        rel = os.path.relpath(full_path, self.root)
        self.parser["files"][key] = rel
        self.parser["hashes"][key] = file_hash(full_path)

    def save(self):
        buf = io.StringIO()
        self.parser.write(buf)
        atomic_write(self.path, buf.getvalue())

    def section(self, name):
        return self.parser[name] if self.parser.has_section(name) else {}
