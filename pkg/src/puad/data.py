"""Contaminated PU splits, toy data, and the CSV / IDX file formats."""

from __future__ import annotations

import math
import struct
from pathlib import Path
from dataclasses import dataclass, field, fields

import numpy as np

from .autodiff import format_float
from .errors import CapacityError, ConfigError, ContractError, FormatError

NORMAL, SEEN, UNSEEN = "normal", "seen", "unseen"
LABELS = (NORMAL, SEEN, UNSEEN)
POOLS = LABELS

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class SplitDataset:
    """Training, validation and test matrices of one experiment.

    ``sources`` maps each split name to an ``(n, 2)`` integer array of
    ``(pool id, row in pool)`` pairs (pool ids index ``POOLS``).
    ``true_unlabeled_labels`` and ``val_true_labels`` are diagnostics and
    are never read by training code.
    """

    unlabeled: np.ndarray
    anomalies: np.ndarray
    val_unlabeled: np.ndarray
    val_anomalies: np.ndarray
    test_points: np.ndarray
    test_labels: np.ndarray
    true_unlabeled_labels: np.ndarray
    val_true_labels: np.ndarray | None = None
    sources: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.unlabeled) == 0:
            raise ContractError("unlabeled split must be non-empty")
        d = self.unlabeled.shape[1]
        for name in ("anomalies", "val_unlabeled", "val_anomalies", "test_points"):
            m = getattr(self, name)
            if m.ndim != 2 or (len(m) and m.shape[1] != d):
                raise ContractError(f"{name} has shape {m.shape}, expected (*, {d})")
        if len(self.test_labels) != len(self.test_points):
            raise ContractError("test_labels length differs from test_points")
        if self.val_true_labels is None:
            self.val_true_labels = np.full(len(self.val_unlabeled), NORMAL)

    @property
    def dim(self) -> int:
        return self.unlabeled.shape[1]

    @property
    def contamination(self) -> float:
        """Hidden anomaly rate of the training unlabeled split (diagnostic)."""
        return float(np.mean(self.true_unlabeled_labels == SEEN))

    def test_only(self) -> "TestSplit":
        return TestSplit(self.test_points, self.test_labels)


@dataclass(frozen=True)
class TestSplit:
    points: np.ndarray
    labels: np.ndarray


@dataclass
class GenConfig:
    seed: int = 0
    n_unlabeled_normal: int = 900
    n_unlabeled_seen: int = 100
    n_labeled_seen: int = 50
    test_normal: int = 500
    test_seen: int = 250
    test_unseen: int = 250
    val_fraction: float = 0.1
    # toy geometry
    normal_means: tuple = ((-2.0, 0.0), (2.0, 0.0))
    normal_std: float = 0.5
    seen_mean: tuple = (0.0, 3.0)
    seen_std: float = 0.4
    unseen_mean: tuple = (0.0, -3.0)
    unseen_std: float = 0.4

    def __post_init__(self):
        for name in ("n_unlabeled_normal", "n_unlabeled_seen", "n_labeled_seen", "test_normal", "test_seen", "test_unseen"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative", name)
        if not 0.0 <= self.val_fraction <= 0.5:
            raise ConfigError("val_fraction must lie in [0, 0.5]", "val_fraction")
        if self.n_unlabeled_normal + self.n_unlabeled_seen == 0:
            raise ConfigError("the unlabeled split needs at least one row", "n_unlabeled_normal")

    @property
    def contamination(self) -> float:
        return self.n_unlabeled_seen / (self.n_unlabeled_normal + self.n_unlabeled_seen)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


# ------------------------------------------------------------ splitting

def _stratified_count(n: int, fraction: float) -> int:
    return int(math.floor(n * fraction + 0.5))


def build_contaminated_split(normal_pool, seen_pool, unseen_pool, cfg: GenConfig) -> SplitDataset:
    """Sample disjoint train/validation/test splits from three class pools.

    Training: ``n_unlabeled_normal`` normals mixed with ``n_unlabeled_seen``
    seen anomalies form the unlabeled set; ``n_labeled_seen`` further seen
    anomalies are labeled. A ``val_fraction`` of every training stratum is
    moved to validation. Leftover pool rows fill the test set up to the caps.
    """
    rng = np.random.default_rng(cfg.seed)
    pools = [np.asarray(p, dtype=np.float64) for p in (normal_pool, seen_pool, unseen_pool)]
    dims = {p.shape[1] for p in pools if p.ndim == 2 and len(p)}
    if len(dims) != 1:
        raise ContractError("pools must be non-empty 2-D matrices of one dimension")

    need = {NORMAL: cfg.n_unlabeled_normal, SEEN: cfg.n_unlabeled_seen + cfg.n_labeled_seen, UNSEEN: 0}
    for name, pool in zip(POOLS, pools):
        if len(pool) < need[name]:
            raise CapacityError(f"{name} pool has {len(pool)} rows, {need[name]} needed for training", name)

    perms = [rng.permutation(len(p)) for p in pools]
    norm_perm, seen_perm, unseen_perm = perms
    u_norm = norm_perm[: cfg.n_unlabeled_normal]
    u_seen = seen_perm[: cfg.n_unlabeled_seen]
    a_seen = seen_perm[cfg.n_unlabeled_seen : need[SEEN]]
    t_norm = norm_perm[cfg.n_unlabeled_normal :][: cfg.test_normal]
    t_seen = seen_perm[need[SEEN] :][: cfg.test_seen]
    t_unseen = unseen_perm[: cfg.test_unseen]
    if len(t_norm) == 0 or len(t_seen) + len(t_unseen) == 0:
        raise CapacityError("test split needs at least one normal and one anomaly row", NORMAL if len(t_norm) == 0 else SEEN)

    # validation carved per stratum so its contamination matches training
    nv_norm = _stratified_count(len(u_norm), cfg.val_fraction)
    nv_seen = _stratified_count(len(u_seen), cfg.val_fraction)
    nv_anom = _stratified_count(len(a_seen), cfg.val_fraction)
    v_norm, u_norm = u_norm[:nv_norm], u_norm[nv_norm:]
    v_seen, u_seen = u_seen[:nv_seen], u_seen[nv_seen:]
    v_anom, a_seen = a_seen[:nv_anom], a_seen[nv_anom:]

    def tagged(pool_id, idx):
        return np.column_stack([np.full(len(idx), pool_id, dtype=np.int64), idx.astype(np.int64)])

    def assemble(parts, shuffle):
        src = np.concatenate([tagged(pid, idx) for pid, idx in parts]) if parts else np.zeros((0, 2), np.int64)
        if shuffle:
            src = src[rng.permutation(len(src))]
        return src

    src_u = assemble([(0, u_norm), (1, u_seen)], True)
    src_v = assemble([(0, v_norm), (1, v_seen)], True)
    src_a = assemble([(1, a_seen)], True)
    src_va = assemble([(1, v_anom)], True)
    src_t = assemble([(0, t_norm), (1, t_seen), (2, t_unseen)], True)

    d = dims.pop()

    def rows(src):
        if len(src) == 0:
            return np.zeros((0, d))
        return np.stack([pools[p][i] for p, i in src])

    train_labels = np.array([NORMAL, SEEN])
    return SplitDataset(
        unlabeled=rows(src_u),
        anomalies=rows(src_a),
        val_unlabeled=rows(src_v),
        val_anomalies=rows(src_va),
        test_points=rows(src_t),
        test_labels=np.array(LABELS)[src_t[:, 0]] if len(src_t) else np.array([], dtype=str),
        true_unlabeled_labels=train_labels[src_u[:, 0]],
        val_true_labels=train_labels[src_v[:, 0]] if len(src_v) else np.array([], dtype="<U6"),
        sources={"unlabeled": src_u, "anomalies": src_a, "val_unlabeled": src_v, "val_anomalies": src_va, "test": src_t},
    )


def toy_pools(cfg: GenConfig, rng: np.random.Generator):
    """Draw normal (two clusters), seen and unseen Gaussian pools for the 2-D toy task."""
    for name in ("normal_std", "seen_std", "unseen_std"):
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"{name} must be positive", name)
    n_normal = cfg.n_unlabeled_normal + cfg.test_normal
    n_seen = cfg.n_unlabeled_seen + cfg.n_labeled_seen + cfg.test_seen
    means = np.asarray(cfg.normal_means, dtype=np.float64)
    which = np.arange(n_normal) % len(means)
    normal = means[which] + cfg.normal_std * rng.standard_normal((n_normal, 2))
    seen = np.asarray(cfg.seen_mean) + cfg.seen_std * rng.standard_normal((n_seen, 2))
    unseen = np.asarray(cfg.unseen_mean) + cfg.unseen_std * rng.standard_normal((cfg.test_unseen, 2))
    return normal, seen, unseen


def gen_toy2d(cfg: GenConfig) -> SplitDataset:
    rng = np.random.default_rng([cfg.seed, 2024])
    normal, seen, unseen = toy_pools(cfg, rng)
    return build_contaminated_split(normal, seen, unseen, cfg)


# ------------------------------------------------------------ images

def pools_from_labels(X, y, normal_class: int, unseen_class: int):
    """Split a labeled image matrix into normal / seen / unseen pools by class."""
    y = np.asarray(y)
    normal = X[y == normal_class]
    unseen = X[y == unseen_class]
    seen = X[(y != normal_class) & (y != unseen_class)]
    return normal, seen, unseen


def downsample_images(matrix, factor: int) -> np.ndarray:
    """Block-mean pooling of square row-major images."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ContractError("downsample_images expects a 2-D matrix of flattened images")
    side = math.isqrt(matrix.shape[1])
    if side * side != matrix.shape[1]:
        raise ContractError(f"rows of length {matrix.shape[1]} are not square images")
    if factor < 1 or side % factor:
        raise ContractError(f"image side {side} is not divisible by factor {factor}")
    if factor == 1:
        return matrix.copy()
    s = side // factor
    blocks = matrix.reshape(len(matrix), s, factor, s, factor)
    return blocks.mean(axis=(2, 4)).reshape(len(matrix), s * s)


def _read_exact(buf: bytes, offset: int, n: int, what: str) -> bytes:
    if offset + n > len(buf):
        raise FormatError(f"truncated IDX file: {what} needs {n} bytes at offset {offset}", offset)
    return buf[offset : offset + n]


def read_idx(path, expected_magic: int) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic,) = struct.unpack(">I", _read_exact(buf, 0, 4, "magic number"))
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}", 0)
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", _read_exact(buf, 4, 4 * ndim, "dimensions"))
    offset = 4 + 4 * ndim
    body = _read_exact(buf, offset, math.prod(dims), "pixel data")
    if len(buf) != offset + len(body):
        raise FormatError(f"{path}: {len(buf) - offset - len(body)} trailing bytes at offset {offset + len(body)}", offset + len(body))
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx_images(images_path, labels_path):
    """Read an IDX image/label pair; pixels are scaled to [0, 1] and flattened."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels", 4)
    return images.reshape(len(images), -1).astype(np.float64) / 255.0, labels.astype(np.int64)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


# ------------------------------------------------------------ CSV

def save_csv(matrix, labels, path):
    """Comma-separated, 17 significant digits, optional trailing ``label`` column."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ContractError("save_csv expects a 2-D matrix")
    header = [f"x{j}" for j in range(matrix.shape[1])]
    if labels is not None:
        if len(labels) != len(matrix):
            raise ContractError("labels length differs from matrix rows")
        header.append("label")
    lines = [",".join(header)]
    for i, row in enumerate(matrix):
        cells = [format_float(v) for v in row]
        if labels is not None:
            cells.append(str(labels[i]))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_csv(path):
    """Inverse of :func:`save_csv`; returns ``(matrix, labels or None)``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}: missing header", 1)
    header = lines[0].split(",") if lines[0] else []
    has_labels = bool(header) and header[-1] == "label"
    n_cols = len(header)
    d = n_cols - int(has_labels)
    rows, labels = [], []
    for lineno, line in enumerate(lines[1:], 2):
        cells = line.split(",")
        if len(cells) != n_cols:
            raise FormatError(f"{path}: line {lineno} has {len(cells)} fields, expected {n_cols}", lineno)
        try:
            rows.append([float(c) for c in cells[:d]])
        except ValueError:
            raise FormatError(f"{path}: line {lineno} has a non-numeric value", lineno) from None
        if has_labels:
            labels.append(cells[-1])
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    return matrix, (np.array(labels) if has_labels else None)


SPLIT_FILES = {
    "unlabeled": "unlabeled.csv",
    "anomalies": "anomalies.csv",
    "val_unlabeled": "val_unlabeled.csv",
    "val_anomalies": "val_anomalies.csv",
    "test_points": "test_points.csv",
    "test_labels": "test_labels.csv",
}


def save_split(data: SplitDataset, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in SPLIT_FILES.items()}
    save_csv(data.unlabeled, data.true_unlabeled_labels, paths["unlabeled"])
    save_csv(data.anomalies, None, paths["anomalies"])
    save_csv(data.val_unlabeled, data.val_true_labels, paths["val_unlabeled"])
    save_csv(data.val_anomalies, None, paths["val_anomalies"])
    save_csv(data.test_points, None, paths["test_points"])
    save_csv(np.zeros((len(data.test_labels), 0)), data.test_labels, paths["test_labels"])
    return list(paths.values())


def load_split(data_dir) -> SplitDataset:
    base = Path(data_dir)
    unlabeled, hidden = load_csv(base / SPLIT_FILES["unlabeled"])
    d = unlabeled.shape[1]

    def optional(name):
        path = base / SPLIT_FILES[name]
        if not path.exists():
            return np.zeros((0, d)), None
        return load_csv(path)

    anomalies, _ = optional("anomalies")
    val_u, val_hidden = optional("val_unlabeled")
    val_a, _ = optional("val_anomalies")
    test_points, _ = load_csv(base / SPLIT_FILES["test_points"])
    _, test_labels = load_csv(base / SPLIT_FILES["test_labels"])
    return SplitDataset(
        unlabeled=unlabeled,
        anomalies=anomalies.reshape(-1, d),
        val_unlabeled=val_u.reshape(-1, d),
        val_anomalies=val_a.reshape(-1, d),
        test_points=test_points,
        test_labels=test_labels if test_labels is not None else np.array([]),
        true_unlabeled_labels=hidden if hidden is not None else np.full(len(unlabeled), NORMAL),
        val_true_labels=val_hidden,
    )
