"""Deterministic multi-task problem generators and data ingestion.

Three synthetic suites (conflicting quadratics with analytic gradients,
separable multi-label blob classification, scale-imbalanced regression) plus
an optional ingestion path that composes pairs of digit images from IDX files
into a two-task classification suite.

Synthetic dataset suites are split 70/15/15 into train/val/test; every
generator is a pure function of its seed, and suites serialize to a
versioned binary format with bit-reproducible output.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, IngestionError, ValidationError
from .gradcore import GradientSet, GradSpace

__all__ = [
    "Split",
    "TaskSuite",
    "QuadraticSuite",
    "make_conflicting_quadratics",
    "make_blob_classification",
    "make_scale_imbalanced_regression",
    "load_multimnist",
    "compose_pair",
    "read_idx_images",
    "read_idx_labels",
    "save_suite",
    "load_suite",
]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

SPLIT_FRACTIONS = (0.70, 0.15, 0.15)


@dataclass(frozen=True)
class Split:
    """Shared inputs plus one target array per task."""

    X: np.ndarray
    ys: tuple

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        ys = tuple(np.asarray(y) for y in self.ys)
        for i, y in enumerate(ys):
            if y.shape[0] != X.shape[0]:
                raise DimensionError(
                    f"task {i} targets have {y.shape[0]} rows, inputs have {X.shape[0]}"
                )
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "ys", ys)

    @property
    def size(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class TaskSuite:
    """A named bundle of train/val/test splits with per-task loss kinds."""

    name: str
    loss_kinds: tuple
    train: Split
    val: Split
    test: Split
    metadata: dict = field(default_factory=dict)

    @property
    def task_count(self) -> int:
        return len(self.loss_kinds)

    @property
    def input_dim(self) -> int:
        return self.train.X.shape[1]

    def task_out_dims(self) -> list:
        """Head output widths: class count for classification, target width else."""
        dims = []
        for kind, y in zip(self.loss_kinds, self.train.ys):
            if kind == "cross_entropy":
                dims.append(int(self.metadata.get("classes") or int(y.max()) + 1))
            else:
                dims.append(int(y.shape[1]) if y.ndim > 1 else 1)
        return dims

    def split(self, which: str) -> Split:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[which]
        except KeyError:
            raise ValidationError(f"unknown split {which!r}") from None


@dataclass(frozen=True)
class QuadraticSuite:
    """Two conflicting quadratic bowls with analytic losses and gradients.

    L1(theta) = ||theta - c1||^2 and L2(theta) = kappa * ||theta - c2||^2.
    The summed loss is minimised at (c1 + kappa*c2) / (1 + kappa); the Pareto
    set is the segment [c1, c2] (gradients are anti-parallel strictly inside
    it, so 0 enters the convex hull of the per-task gradients there).
    """

    c1: np.ndarray
    c2: np.ndarray
    kappa: float
    name: str = "conflicting_quadratics"

    def __post_init__(self):
        c1 = np.asarray(self.c1, dtype=np.float64)
        c2 = np.asarray(self.c2, dtype=np.float64)
        if c1.shape != c2.shape or c1.ndim != 1 or c1.size < 1:
            raise DimensionError(f"offsets must be equal-length vectors, got {c1.shape}, {c2.shape}")
        if not self.kappa > 0.0:
            raise ValidationError(f"kappa must be > 0, got {self.kappa}")
        object.__setattr__(self, "c1", c1)
        object.__setattr__(self, "c2", c2)

    @property
    def task_count(self) -> int:
        return 2

    @property
    def dim(self) -> int:
        return self.c1.size

    @property
    def loss_kinds(self) -> tuple:
        return ("quadratic", "quadratic")

    def losses(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        return np.array(
            [
                float(((theta - self.c1) ** 2).sum()),
                self.kappa * float(((theta - self.c2) ** 2).sum()),
            ]
        )

    def gradient_rows(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        return np.stack([2.0 * (theta - self.c1), 2.0 * self.kappa * (theta - self.c2)])

    def gradient_set(self, theta) -> GradientSet:
        return GradientSet(self.gradient_rows(theta), GradSpace.PARAMETER)

    def unitary_optimum(self) -> np.ndarray:
        return (self.c1 + self.kappa * self.c2) / (1.0 + self.kappa)

    def total_loss(self, theta) -> float:
        return float(self.losses(theta).sum())


def make_conflicting_quadratics(dim: int, c1, c2, kappa: float) -> QuadraticSuite:
    """Analytic two-task quadratic suite (see :class:`QuadraticSuite`)."""
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    if dim < 1:
        raise ValidationError(f"dim must be >= 1, got {dim}")
    if c1.shape != (dim,) or c2.shape != (dim,):
        raise DimensionError(f"offsets must have shape ({dim},), got {c1.shape}, {c2.shape}")
    return QuadraticSuite(c1=c1, c2=c2, kappa=float(kappa))


def _split_slices(n: int):
    n_train = int(round(SPLIT_FRACTIONS[0] * n))
    n_val = int(round(SPLIT_FRACTIONS[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValidationError(f"sample count {n} too small to split into train/val/test")
    return slice(0, n_train), slice(n_train, n_train + n_val), slice(n_train + n_val, n)


def make_blob_classification(
    tasks: int,
    classes: int,
    input_dim: int,
    samples: int,
    separation: float = 2.0,
    label_noise: float = 0.0,
    seed: int = 0,
) -> TaskSuite:
    """Gaussian-mixture inputs with one independent labelling per task.

    Inputs are drawn from `classes` Gaussian blobs whose centers are scaled
    by `separation`.  Each task labels the shared inputs with the argmax of
    its own random unit prototype scores, so the tasks genuinely differ while
    remaining realizable by a linear map on the inputs.  `separation` also
    sets a per-task score-margin floor (rejection sampling), so with zero
    noise the suite is separable with margin and all task losses can be
    driven near zero.  `label_noise` replaces that fraction of labels with
    uniform draws, capping the reachable accuracy at
    (1 - noise) + noise / classes per task.
    """
    if tasks < 1 or classes < 2 or input_dim < 1:
        raise ValidationError("need tasks >= 1, classes >= 2, input_dim >= 1")
    if not 0.0 <= label_noise <= 1.0:
        raise ValidationError(f"label_noise must lie in [0, 1], got {label_noise}")
    if separation < 0.0:
        raise ValidationError(f"separation must be >= 0, got {separation}")
    rng = np.random.default_rng(seed)

    centers = rng.standard_normal((classes, input_dim)) * separation
    prototypes = rng.standard_normal((tasks, classes, input_dim))
    prototypes /= np.linalg.norm(prototypes, axis=2, keepdims=True)
    margin_floor = 0.15 * separation

    X = np.empty((samples, input_dim))
    clean = np.empty((tasks, samples), dtype=np.int64)
    for i in range(samples):
        for _ in range(200):
            x = centers[rng.integers(classes)] + rng.standard_normal(input_dim)
            scores = prototypes @ x  # (tasks, classes)
            top2 = np.sort(scores, axis=1)[:, -2:]
            if np.all(top2[:, 1] - top2[:, 0] >= margin_floor):
                break
        X[i] = x
        clean[:, i] = np.argmax(prototypes @ x, axis=1)

    ys = []
    for t in range(tasks):
        labels = clean[t].copy()
        if label_noise > 0.0:
            flip = rng.uniform(size=samples) < label_noise
            labels[flip] = rng.integers(classes, size=int(flip.sum()))
        ys.append(labels)

    tr, va, te = _split_slices(samples)
    return TaskSuite(
        name="blobs",
        loss_kinds=tuple("cross_entropy" for _ in range(tasks)),
        train=Split(X[tr], tuple(y[tr] for y in ys)),
        val=Split(X[va], tuple(y[va] for y in ys)),
        test=Split(X[te], tuple(y[te] for y in ys)),
        metadata={
            "classes": classes,
            "separation": separation,
            "label_noise": label_noise,
            "seed": seed,
        },
    )


def make_scale_imbalanced_regression(
    ratio: float,
    input_dim: int = 8,
    out_dim: int = 1,
    samples: int = 600,
    noise: float = 0.1,
    seed: int = 0,
) -> TaskSuite:
    """Two linear regression tasks whose optimal-loss scales differ by `ratio`.

    Both tasks share the inputs and a linear teacher; task 2's targets (and
    noise) are multiplied by sqrt(ratio), so its attainable mean-squared
    error, initial loss, and gradient norms all scale with the ratio.
    """
    if not ratio > 0.0:
        raise ValidationError(f"ratio must be > 0, got {ratio}")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((samples, input_dim))
    w1 = rng.standard_normal((out_dim, input_dim)) / np.sqrt(input_dim)
    w2 = rng.standard_normal((out_dim, input_dim)) / np.sqrt(input_dim)
    root = np.sqrt(ratio)
    y1 = X @ w1.T + noise * rng.standard_normal((samples, out_dim))
    y2 = root * (X @ w2.T + noise * rng.standard_normal((samples, out_dim)))
    tr, va, te = _split_slices(samples)
    return TaskSuite(
        name="scale_regression",
        loss_kinds=("mse", "mse"),
        train=Split(X[tr], (y1[tr], y2[tr])),
        val=Split(X[va], (y1[va], y2[va])),
        test=Split(X[te], (y1[te], y2[te])),
        metadata={"ratio": ratio, "noise": noise, "seed": seed},
    )


def _read_exact(fh, n: int, path: str, offset: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise IngestionError(
            f"truncated file: wanted {n} bytes, got {len(data)}", path=path, offset=offset
        )
    return data


def read_idx_images(path) -> np.ndarray:
    """Parse a big-endian IDX image file (magic 0x00000803) to (n, rows, cols) uint8."""
    path = str(path)
    with open(path, "rb") as fh:
        magic = struct.unpack(">i", _read_exact(fh, 4, path, 0))[0]
        if magic != IDX_IMAGE_MAGIC:
            raise IngestionError(
                f"bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}",
                path=path,
                offset=0,
            )
        count, rows, cols = struct.unpack(">iii", _read_exact(fh, 12, path, 4))
        if min(count, rows, cols) < 1:
            raise IngestionError(
                f"bad image header counts ({count}, {rows}, {cols})", path=path, offset=4
            )
        payload = _read_exact(fh, count * rows * cols, path, 16)
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    """Parse a big-endian IDX label file (magic 0x00000801) to (n,) uint8."""
    path = str(path)
    with open(path, "rb") as fh:
        magic = struct.unpack(">i", _read_exact(fh, 4, path, 0))[0]
        if magic != IDX_LABEL_MAGIC:
            raise IngestionError(
                f"bad label magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}",
                path=path,
                offset=0,
            )
        count = struct.unpack(">i", _read_exact(fh, 4, path, 4))[0]
        if count < 1:
            raise IngestionError(f"bad label count {count}", path=path, offset=4)
        payload = _read_exact(fh, count, path, 8)
    return np.frombuffer(payload, dtype=np.uint8).copy()


def compose_pair(
    img_a: np.ndarray, img_b: np.ndarray, canvas: int, offset: int
) -> np.ndarray:
    """Overlay two digit images on a canvas: a at the top-left corner, b at
    (offset, offset), combined by elementwise max and rescaled to [0, 1]."""
    h, w = img_a.shape
    if img_b.shape != (h, w):
        raise DimensionError(f"image shapes differ: {img_a.shape} vs {img_b.shape}")
    if offset + h > canvas or offset + w > canvas:
        raise ValidationError(
            f"{h}x{w} image at offset {offset} does not fit a {canvas}x{canvas} canvas"
        )
    out = np.zeros((canvas, canvas), dtype=np.float64)
    out[:h, :w] = img_a
    out[offset : offset + h, offset : offset + w] = np.maximum(
        out[offset : offset + h, offset : offset + w], img_b
    )
    return out / 255.0


def load_multimnist(
    images_path,
    labels_path,
    canvas: int = 32,
    offset: int = 4,
    seed: int = 0,
) -> TaskSuite:
    """Two-digit composition suite from one IDX image/label file pair.

    Every source image is paired with a uniformly sampled partner from the
    same split and overlaid per :func:`compose_pair`; task 1 predicts the
    top-left source digit, task 2 the bottom-right partner digit.  A source
    with >= 60000 images follows the customary 50000/10000 train/val
    partition (empty test split); smaller files fall back to 70/15/15.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IngestionError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}",
            path=str(labels_path),
            offset=4,
        )
    n = images.shape[0]
    rng = np.random.default_rng(seed)

    if n >= 60000:
        parts = [np.arange(0, 50000), np.arange(50000, 60000), np.arange(0)]
    else:
        tr, va, te = _split_slices(n)
        parts = [np.arange(n)[tr], np.arange(n)[va], np.arange(n)[te]]

    splits = []
    for idx in parts:
        if idx.size == 0:
            splits.append(
                Split(
                    np.empty((0, canvas * canvas)),
                    (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)),
                )
            )
            continue
        partners = idx[rng.integers(idx.size, size=idx.size)]
        X = np.stack(
            [
                compose_pair(images[a], images[b], canvas, offset).ravel()
                for a, b in zip(idx, partners)
            ]
        )
        splits.append(
            Split(X, (labels[idx].astype(np.int64), labels[partners].astype(np.int64)))
        )

    return TaskSuite(
        name="multimnist",
        loss_kinds=("cross_entropy", "cross_entropy"),
        train=splits[0],
        val=splits[1],
        test=splits[2],
        metadata={"classes": 10, "canvas": canvas, "offset": offset, "seed": seed},
    )


SUITE_MAGIC = b"MTSUITE\x01"
SUITE_VERSION = 1


def save_suite(suite: TaskSuite, path) -> None:
    """Serialize a dataset suite to the versioned binary container."""
    arrays = {}
    for which in ("train", "val", "test"):
        split = suite.split(which)
        arrays[f"{which}.X"] = np.ascontiguousarray(split.X, dtype=np.float64)
        for t, y in enumerate(split.ys):
            dtype = np.int64 if y.dtype.kind in "iu" else np.float64
            arrays[f"{which}.y{t}"] = np.ascontiguousarray(y, dtype=dtype)
    manifest = [
        {"key": key, "dtype": arr.dtype.str, "shape": list(arr.shape)}
        for key, arr in arrays.items()
    ]
    header = json.dumps(
        {
            "version": SUITE_VERSION,
            "name": suite.name,
            "loss_kinds": list(suite.loss_kinds),
            "metadata": suite.metadata,
            "arrays": manifest,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SUITE_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for key, _ in ((m["key"], m) for m in manifest):
            fh.write(arrays[key].astype("<" + arrays[key].dtype.str[1:]).tobytes())


def load_suite(path) -> TaskSuite:
    path = str(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(SUITE_MAGIC))
        if magic != SUITE_MAGIC:
            raise IngestionError("not a suite container (bad magic)", path=path, offset=0)
        (header_len,) = struct.unpack("<Q", _read_exact(fh, 8, path, len(SUITE_MAGIC)))
        header = json.loads(_read_exact(fh, header_len, path, len(SUITE_MAGIC) + 8))
        if header.get("version") != SUITE_VERSION:
            raise IngestionError(
                f"unsupported suite version {header.get('version')}", path=path, offset=8
            )
        offset = len(SUITE_MAGIC) + 8 + header_len
        arrays = {}
        for item in header["arrays"]:
            count = int(np.prod(item["shape"])) if item["shape"] else 1
            nbytes = count * np.dtype(item["dtype"]).itemsize
            raw = _read_exact(fh, nbytes, path, offset)
            offset += nbytes
            arrays[item["key"]] = np.frombuffer(raw, dtype=item["dtype"]).reshape(
                item["shape"]
            )

    task_count = len(header["loss_kinds"])
    splits = {}
    for which in ("train", "val", "test"):
        splits[which] = Split(
            arrays[f"{which}.X"],
            tuple(arrays[f"{which}.y{t}"] for t in range(task_count)),
        )
    return TaskSuite(
        name=header["name"],
        loss_kinds=tuple(header["loss_kinds"]),
        train=splits["train"],
        val=splits["val"],
        test=splits["test"],
        metadata=header["metadata"],
    )
