"""Dataset ingestion, sampling protocols and model persistence.

Datasets live on disk as ``root/<split>/<class_name>/<sample>.xyz`` where
each file holds one ``x y z`` triple per line (extra columns are ignored).

Model container layout (all integers and floats 64-bit little-endian)::

    magic  b"PH2\\x01"
    u32    format version
    u32    byte-order marker 0x01020304
    u64    payload length
    ...    payload: sections of (4-byte tag, u64 length, body)
    32 B   SHA-256 of the payload
"""

from __future__ import annotations

import hashlib
import io as _io
import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .classifier import EnsembleModel, LLSRModel
from .errors import CorruptModel, InvalidInput
from .geometry import PointCloud
from .ranking import RankedFeatureSet
from .saab import SaabFilterBank
from .tree import AGGREGATIONS, SPARSE_INPUT_MODES, FeatureTree, TreeConfig, TreeNode

log = logging.getLogger(__name__)

MAGIC = b"PH2\x01"
FORMAT_VERSION = 1
BYTE_ORDER_MARK = 0x01020304
_HEADER = struct.Struct("<4sIIQ")
_DIGEST_SIZE = 32
_AXES = ("x", "y", "z")
_RANK_MODES = ("none", "cross_entropy", "energy")


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class Dataset:
    clouds: list
    class_names: list
    split: str = "train"
    paths: list = field(default_factory=list)

    @property
    def labels(self) -> np.ndarray:
        return np.array([c.label for c in self.clouds], dtype=np.int64)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.clouds)

    def subset(self, indices) -> "Dataset":
        idx = list(indices)
        paths = [self.paths[i] for i in idx] if self.paths else []
        return Dataset([self.clouds[i] for i in idx], self.class_names, self.split, paths)


def read_xyz(path) -> np.ndarray:
    """Parse an ASCII point file; blank lines and ``#`` comments are skipped."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 3:
            raise InvalidInput(f"{path}:{lineno}: expected 'x y z', got {line!r}")
        try:
            rows.append([float(v) for v in parts[:3]])
        except ValueError:
            raise InvalidInput(f"{path}:{lineno}: non-numeric coordinate in {line!r}") from None
    if not rows:
        raise InvalidInput(f"{path}: no points")
    return np.array(rows, dtype=np.float64)


def write_xyz(path, points: np.ndarray):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(points), fmt="%.17g")


def list_classes(root) -> list:
    """Class names across every split under ``root``, sorted."""
    root = Path(root)
    names = set()
    for split_dir in root.iterdir() if root.is_dir() else []:
        if split_dir.is_dir():
            names.update(p.name for p in split_dir.iterdir() if p.is_dir())
    return sorted(names)


def load_xyz_dir(root, split: str = "train", class_names: Optional[Sequence[str]] = None) -> Dataset:
    """Load one split. Labels index the sorted class names of all splits."""
    root = Path(root)
    split_dir = root / split
    if not split_dir.is_dir():
        raise InvalidInput(f"no split directory {split_dir}")
    names = list(class_names) if class_names is not None else list_classes(root)
    clouds, paths = [], []
    for label, name in enumerate(names):
        files = sorted((split_dir / name).glob("*.xyz")) if (split_dir / name).is_dir() else []
        if not files:
            warnings.warn(f"class {name!r} has no samples in split {split!r}")
        for f in files:
            clouds.append(PointCloud(read_xyz(f), label))
            paths.append(str(f))
    return Dataset(clouds, names, split, paths)


def write_xyz_dir(root, dataset: Dataset):
    root = Path(root)
    counters = {}
    for cloud in dataset.clouds:
        name = dataset.class_names[cloud.label]
        i = counters.get(name, 0)
        counters[name] = i + 1
        write_xyz(root / dataset.split / name / f"{name}_{i:04d}.xyz", cloud.points)


def subsample(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """Uniform random subset of n points (with replacement if n exceeds N)."""
    if n < 1:
        raise InvalidInput("subsample size must be >= 1")
    rng = np.random.default_rng(seed)
    total = len(cloud)
    idx = rng.choice(total, n, replace=n > total) if n != total else rng.permutation(total)
    return cloud.with_points(cloud.points[idx])


def train_val_split(labels, val_fraction: float = 0.1, seed: int = 0):
    """Stratified seeded split; returns sorted (train_idx, val_idx)."""
    labels = np.asarray(labels)
    if not 0 <= val_fraction < 1:
        raise InvalidInput("val_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    val = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        take = int(round(val_fraction * members.size))
        val.extend(rng.permutation(members)[:take])
    val = np.sort(np.array(val, dtype=np.int64))
    train = np.setdiff1d(np.arange(labels.size), val)
    return train, val


# ---------------------------------------------------------------------------
# Model container


@dataclass
class Preprocessing:
    """How raw clouds are prepared before entering the tree."""

    input_points: int = 1024
    normalize: bool = True
    seed: int = 0


@dataclass
class FeatureSelection:
    mode: str
    columns: np.ndarray
    ranking: Optional[RankedFeatureSet] = None


@dataclass
class ModelContainer:
    tree: FeatureTree
    class_names: list
    preprocessing: Preprocessing = field(default_factory=Preprocessing)
    selection: Optional[FeatureSelection] = None
    classifier: Optional[object] = None


class _Writer:
    def __init__(self):
        self.buf = _io.BytesIO()

    def u64(self, v):
        self.buf.write(struct.pack("<Q", int(v)))

    def i64(self, v):
        self.buf.write(struct.pack("<q", int(v)))

    def f64(self, v):
        self.buf.write(struct.pack("<d", float(v)))

    def floats(self, arr):
        arr = np.asarray(arr, dtype="<f8")
        self.u64(arr.size)
        self.buf.write(arr.tobytes())

    def ints(self, arr):
        arr = np.asarray(arr, dtype="<i8")
        self.u64(arr.size)
        self.buf.write(arr.tobytes())

    def text(self, s):
        raw = s.encode("utf-8")
        self.u64(len(raw))
        self.buf.write(raw)

    def getvalue(self):
        return self.buf.getvalue()


class _Reader:
    def __init__(self, data: bytes, where: str):
        self.data = memoryview(data)
        self.pos = 0
        self.where = where

    def _take(self, n):
        if self.pos + n > len(self.data):
            raise CorruptModel(f"{self.where}: unexpected end of data")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u64(self):
        return struct.unpack("<Q", self._take(8))[0]

    def i64(self):
        return struct.unpack("<q", self._take(8))[0]

    def f64(self):
        return struct.unpack("<d", self._take(8))[0]

    def floats(self):
        n = self.u64()
        return np.frombuffer(self._take(8 * n), dtype="<f8").astype(np.float64)

    def ints(self):
        n = self.u64()
        return np.frombuffer(self._take(8 * n), dtype="<i8").astype(np.int64)

    def text(self):
        n = self.u64()
        try:
            return bytes(self._take(n)).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptModel(f"{self.where}: invalid text") from None

    def done(self):
        if self.pos != len(self.data):
            raise CorruptModel(f"{self.where}: {len(self.data) - self.pos} trailing bytes")


def _write_bank(w: _Writer, bank: SaabFilterBank):
    w.u64(bank.input_dim)
    w.floats(bank.mean)
    w.floats(bank.eigenvalues)
    w.floats(bank.ac_weights)


def _read_bank(r: _Reader) -> SaabFilterBank:
    d = r.u64()
    mean, eig, ac = r.floats(), r.floats(), r.floats()
    if mean.size != d or eig.size != d or ac.size != (d - 1) * d:
        raise CorruptModel("filter bank dimensions do not match")
    return SaabFilterBank(mean, ac.reshape(d - 1, d), eig)


def _write_llsr(w: _Writer, m: LLSRModel):
    w.u64(m.num_classes)
    w.u64(m.feature_dim)
    w.f64(m.ridge)
    w.u64(1 if m.mean is not None else 0)
    if m.mean is not None:
        w.floats(m.mean)
        w.floats(m.std)
    w.floats(m.weights)


def _read_llsr(r: _Reader) -> LLSRModel:
    classes, dim, ridge, has_std = r.u64(), r.u64(), r.f64(), r.u64()
    mean = std = None
    if has_std:
        mean, std = r.floats(), r.floats()
    weights = r.floats()
    if weights.size != (dim + 1) * classes:
        raise CorruptModel("classifier weight size mismatch")
    return LLSRModel(weights.reshape(dim + 1, classes), classes, mean, std, ridge)


def _encode_sections(model: ModelContainer) -> list:
    tree, cfg, pre = model.tree, model.tree.config, model.preprocessing
    sections = []

    w = _Writer()
    w.u64(cfg.num_hops)
    w.ints(cfg.k_per_hop)
    w.ints(cfg.points_per_hop)
    w.f64(cfg.energy_threshold)
    w.ints([AGGREGATIONS.index(a) for a in cfg.aggregations])
    w.u64(int(cfg.drop_below_threshold))
    w.u64(SPARSE_INPUT_MODES.index(cfg.sparse_input))
    w.u64(pre.input_points)
    w.u64(int(pre.normalize))
    w.u64(pre.seed)
    sections.append((b"CONF", w.getvalue()))

    w = _Writer()
    w.u64(len(model.class_names))
    for name in model.class_names:
        w.text(name)
    sections.append((b"NAME", w.getvalue()))

    w = _Writer()
    w.u64(len(tree.nodes))
    for n in tree.nodes:
        w.i64(n.node_id)
        w.i64(n.hop)
        w.i64(n.channel)
        w.i64(n.parent_id)
        w.f64(n.energy)
        w.u64(0 if n.is_leaf else 1)
    sections.append((b"NODE", w.getvalue()))

    w = _Writer()
    _write_bank(w, tree.root_bank)
    for n in tree.internal_nodes:
        _write_bank(w, n.bank)
    sections.append((b"BANK", w.getvalue()))

    if model.selection is not None:
        sel = model.selection
        w = _Writer()
        w.u64(_RANK_MODES.index(sel.mode))
        w.ints(sel.columns)
        w.u64(1 if sel.ranking is not None else 0)
        if sel.ranking is not None:
            w.floats(sel.ranking.cross_entropy)
            w.floats(sel.ranking.energy)
        sections.append((b"RANK", w.getvalue()))

    clf = model.classifier
    if clf is not None:
        w = _Writer()
        if isinstance(clf, LLSRModel):
            w.u64(0)
            _write_llsr(w, clf)
        elif isinstance(clf, EnsembleModel):
            w.u64(1)
            w.floats(clf.angles)
            w.u64(_AXES.index(clf.axis))
            w.u64(1 if clf.columns is not None else 0)
            if clf.columns is not None:
                w.ints(clf.columns)
            for m in clf.stage1:
                _write_llsr(w, m)
            _write_llsr(w, clf.stage2)
        else:
            raise InvalidInput(f"cannot serialize classifier of type {type(clf).__name__}")
        sections.append((b"CLSF", w.getvalue()))
    return sections


def encode_model(model: ModelContainer) -> bytes:
    payload = _Writer()
    for tag, body in _encode_sections(model):
        payload.buf.write(tag)
        payload.u64(len(body))
        payload.buf.write(body)
    data = payload.getvalue()
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, BYTE_ORDER_MARK, len(data))
    return header + data + hashlib.sha256(data).digest()


def decode_model(blob: bytes, where: str = "model") -> ModelContainer:
    if len(blob) < _HEADER.size + _DIGEST_SIZE:
        raise CorruptModel(f"{where}: file too short ({len(blob)} bytes)")
    magic, version, bom, length = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptModel(f"{where}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptModel(f"{where}: unsupported format version {version}")
    if bom != BYTE_ORDER_MARK:
        raise CorruptModel(f"{where}: byte-order marker mismatch")
    if len(blob) != _HEADER.size + length + _DIGEST_SIZE:
        raise CorruptModel(f"{where}: payload length {length} does not match file size (truncated?)")
    data = blob[_HEADER.size : _HEADER.size + length]
    if hashlib.sha256(data).digest() != blob[_HEADER.size + length :]:
        raise CorruptModel(f"{where}: checksum mismatch")

    sections = {}
    r = _Reader(data, where)
    while r.pos < len(data):
        tag = bytes(r._take(4))
        body = bytes(r._take(r.u64()))
        sections[tag] = body
    for tag in (b"CONF", b"NAME", b"NODE", b"BANK"):
        if tag not in sections:
            raise CorruptModel(f"{where}: missing section {tag.decode()}")

    r = _Reader(sections[b"CONF"], f"{where}:CONF")
    try:
        num_hops = r.u64()
        k_per_hop, points_per_hop = r.ints(), r.ints()
        threshold = r.f64()
        aggs = tuple(AGGREGATIONS[i] for i in r.ints())
        drop = bool(r.u64())
        sparse_mode = SPARSE_INPUT_MODES[r.u64()]
        config = TreeConfig(num_hops, tuple(k_per_hop), tuple(points_per_hop), threshold, aggs, drop, sparse_mode)
    except (IndexError, InvalidInput) as exc:
        raise CorruptModel(f"{where}: invalid configuration ({exc})") from None
    pre = Preprocessing(r.u64(), bool(r.u64()), r.u64())
    r.done()

    r = _Reader(sections[b"NAME"], f"{where}:NAME")
    names = [r.text() for _ in range(r.u64())]
    r.done()

    r = _Reader(sections[b"NODE"], f"{where}:NODE")
    rows = [(r.i64(), r.i64(), r.i64(), r.i64(), r.f64(), r.u64()) for _ in range(r.u64())]
    r.done()

    r = _Reader(sections[b"BANK"], f"{where}:BANK")
    root = _read_bank(r)
    nodes = []
    for node_id, hop, channel, parent, energy, internal in rows:
        bank = _read_bank(r) if internal else None
        nodes.append(TreeNode(node_id, hop, channel, energy, parent, bank))
    r.done()
    tree = FeatureTree(config, root, nodes)

    selection = None
    if b"RANK" in sections:
        r = _Reader(sections[b"RANK"], f"{where}:RANK")
        mode = _RANK_MODES[r.u64()]
        cols = r.ints()
        ranking = RankedFeatureSet(r.floats(), r.floats()) if r.u64() else None
        r.done()
        selection = FeatureSelection(mode, cols, ranking)

    classifier = None
    if b"CLSF" in sections:
        r = _Reader(sections[b"CLSF"], f"{where}:CLSF")
        kind = r.u64()
        if kind == 0:
            classifier = _read_llsr(r)
        elif kind == 1:
            angles = r.floats()
            axis = _AXES[r.u64()]
            cols = r.ints() if r.u64() else None
            stage1 = [_read_llsr(r) for _ in angles]
            classifier = EnsembleModel(angles, stage1, _read_llsr(r), axis, cols)
        else:
            raise CorruptModel(f"{where}: unknown classifier kind {kind}")
        r.done()
    return ModelContainer(tree, names, pre, selection, classifier)


def manifest_text(model: ModelContainer, blob: bytes) -> str:
    tree, cfg = model.tree, model.tree.config
    clf = model.classifier
    kind = "none" if clf is None else ("ensemble" if isinstance(clf, EnsembleModel) else "llsr")
    fields = [
        ("format_version", FORMAT_VERSION),
        ("num_hops", cfg.num_hops),
        ("k_per_hop", ",".join(map(str, cfg.k_per_hop))),
        ("points_per_hop", ",".join(map(str, cfg.points_per_hop))),
        ("energy_threshold", repr(cfg.energy_threshold)),
        ("aggregations", ",".join(cfg.aggregations)),
        ("num_nodes", len(tree.nodes)),
        ("num_leaves", len(tree.leaves)),
        ("feature_dim", tree.feature_dim),
        ("selected_features", len(model.selection.columns) if model.selection else tree.feature_dim),
        ("filter_parameters", tree.parameter_count()),
        ("filter_bytes", 8 * tree.parameter_count()),
        ("classifier", kind),
        ("num_classes", len(model.class_names)),
        ("class_names", ",".join(model.class_names)),
        ("file_bytes", len(blob)),
        ("sha256", hashlib.sha256(blob).hexdigest()),
    ]
    return "".join(f"{k} = {v}\n" for k, v in fields)


def save_model(model: ModelContainer, path, manifest: bool = True) -> str:
    """Write the container (and a ``.manifest`` sidecar); returns the file's SHA-256."""
    path = Path(path)
    blob = encode_model(model)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    if manifest:
        Path(str(path) + ".manifest").write_text(manifest_text(model, blob))
    return hashlib.sha256(blob).hexdigest()


def load_model(path) -> ModelContainer:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read model {path}: {exc.strerror or exc}") from exc
    return decode_model(blob, str(path))
