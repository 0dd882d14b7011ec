"""Synthetic two-modality classification data and modality views.

Each class owns one text prototype and one image prototype. A sample's
``dominance`` rho splits the class signal between the modalities: text gets
``rho * proto_text``, image gets ``(1 - rho) * proto_image``. A fraction of
samples carry a unimodal confounder: one modality shows a wrong class's
prototype.

Model inputs are always ``[text | image | text_present | image_present]``.
Masking a modality zeroes its block and clears its presence bit.
"""

from __future__ import annotations

import enum
import gzip
import io
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .exceptions import ConfigError

SPLITS = ("train", "meta", "test")


class ModalityView(str, enum.Enum):
    MULTI = "multi"
    IMAGE_ONLY = "image"
    TEXT_ONLY = "text"


VIEWS = (ModalityView.MULTI, ModalityView.IMAGE_ONLY, ModalityView.TEXT_ONLY)


@dataclass(frozen=True)
class DataGenConfig:
    num_classes: int = 3
    text_dim: int = 16
    image_dim: int = 16
    n_train: int = 2000
    n_meta: int = 300
    n_test: int = 1000
    noise_sigma: float = 0.5
    confounder_prob: float = 0.2
    seed: int = 7
    # Pins rho for every sample; None draws rho ~ U(0, 1).
    fixed_dominance: float | None = None

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("data.num_classes must be >= 2")
        for name in ("text_dim", "image_dim", "n_train", "n_meta", "n_test"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"data.{name} must be > 0")
        if self.noise_sigma < 0:
            raise ConfigError("data.noise_sigma must be >= 0")
        if not 0.0 <= self.confounder_prob <= 1.0:
            raise ConfigError("data.confounder_prob must lie in [0, 1]")
        if self.fixed_dominance is not None and not 0.0 <= self.fixed_dominance <= 1.0:
            raise ConfigError("data.fixed_dominance must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown key 'data.{key}'")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class MultimodalSample:
    id: int
    text: tuple
    image: tuple
    label: int
    dominance: float
    split: str


class MultimodalDataset:
    """Column-oriented sample store; iterates as ``MultimodalSample``."""

    def __init__(self, ids, text, image, labels, dominance, splits, num_classes=None):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.text = np.asarray(text, dtype=np.float64)
        self.image = np.asarray(image, dtype=np.float64)
        if self.text.ndim != 2 or self.image.ndim != 2:
            raise ValueError("text and image must be 2-D (samples x features)")
        self.labels = np.asarray(labels, dtype=np.int64)
        self.dominance = np.asarray(dominance, dtype=np.float64)
        self.splits = np.asarray(splits, dtype=object)
        if num_classes is None:
            num_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
        self.num_classes = int(num_classes)

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    def __getitem__(self, k):
        return MultimodalSample(
            int(self.ids[k]),
            tuple(self.text[k].tolist()),
            tuple(self.image[k].tolist()),
            int(self.labels[k]),
            float(self.dominance[k]),
            str(self.splits[k]),
        )

    def __eq__(self, other):
        if not isinstance(other, MultimodalDataset):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self, other))

    @property
    def text_dim(self):
        return self.text.shape[1]

    @property
    def image_dim(self):
        return self.image.shape[1]

    def subset(self, split):
        mask = self.splits == split
        return MultimodalDataset(
            self.ids[mask], self.text[mask], self.image[mask], self.labels[mask],
            self.dominance[mask], self.splits[mask], self.num_classes,
        )

    def inputs(self, view=ModalityView.MULTI):
        return view_inputs(self.text, self.image, view)


def generate_dataset(cfg):
    rng = np.random.default_rng(cfg.seed)
    C = cfg.num_classes
    proto_text = rng.standard_normal((C, cfg.text_dim))
    proto_image = rng.standard_normal((C, cfg.image_dim))

    N = cfg.n_train + cfg.n_meta + cfg.n_test
    labels = rng.integers(0, C, size=N)
    rho = rng.uniform(0.0, 1.0, size=N)
    if cfg.fixed_dominance is not None:
        rho = np.full(N, float(cfg.fixed_dominance))
    confounded = rng.random(N) < cfg.confounder_prob
    which = rng.integers(0, 2, size=N)  # 0: text confounded, 1: image
    wrong = (labels + rng.integers(1, C, size=N)) % C
    noise_text = rng.standard_normal((N, cfg.text_dim))
    noise_image = rng.standard_normal((N, cfg.image_dim))

    text_cls = np.where(confounded & (which == 0), wrong, labels)
    image_cls = np.where(confounded & (which == 1), wrong, labels)
    text = rho[:, None] * proto_text[text_cls] + cfg.noise_sigma * noise_text
    image = (1.0 - rho)[:, None] * proto_image[image_cls] + cfg.noise_sigma * noise_image

    splits = np.array(
        ["train"] * cfg.n_train + ["meta"] * cfg.n_meta + ["test"] * cfg.n_test, dtype=object
    )
    return MultimodalDataset(np.arange(N), text, image, labels, rho, splits, C)


def view_inputs(text, image, view):
    """Batched model inputs for one view; rows are samples."""
    view = ModalityView(view)
    text = np.atleast_2d(np.asarray(text, dtype=np.float64))
    image = np.atleast_2d(np.asarray(image, dtype=np.float64))
    n = text.shape[0]
    keep_text = view in (ModalityView.MULTI, ModalityView.TEXT_ONLY)
    keep_image = view in (ModalityView.MULTI, ModalityView.IMAGE_ONLY)
    return np.hstack([
        text if keep_text else np.zeros_like(text),
        image if keep_image else np.zeros_like(image),
        np.full((n, 1), float(keep_text)),
        np.full((n, 1), float(keep_image)),
    ])


def apply_view(sample, view):
    return view_inputs(sample.text, sample.image, view)[0]


def mask_inputs(X, view, text_dim):
    """Apply ``view`` to already-assembled Multi inputs (n, d_t + d_v + 2)."""
    X = np.asarray(X, dtype=np.float64)
    return view_inputs(X[:, :text_dim], X[:, text_dim:-2], view)


# ---------------------------------------------------------------- JSONL io


def _open(path, mode):
    path = Path(path)
    if path.suffix == ".gz":
        # mtime=0 keeps the gzip header, and thus the file bytes, reproducible
        raw = gzip.GzipFile(path, mode + "b", mtime=0)
        return io.TextIOWrapper(raw, encoding="utf-8", newline="\n")
    return open(path, mode, encoding="utf-8", newline="\n")


def save_dataset(dataset, path):
    with _open(path, "w") as fh:
        for s in dataset:
            row = {
                "id": s.id, "text": list(s.text), "image": list(s.image),
                "label": s.label, "dominance": s.dominance, "split": s.split,
            }
            fh.write(json.dumps(row) + "\n")


class DatasetParseError(ValueError):
    def __init__(self, path, lineno, reason):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.lineno = lineno


def load_dataset(path, num_classes=None):
    ids, text, image, labels, dom, splits = [], [], [], [], [], []
    with _open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                ids.append(int(row["id"]))
                text.append([float(v) for v in row["text"]])
                image.append([float(v) for v in row["image"]])
                labels.append(int(row["label"]))
                dom.append(float(row["dominance"]))
                if row["split"] not in SPLITS:
                    raise ValueError(f"unknown split {row['split']!r}")
                splits.append(row["split"])
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetParseError(path, lineno, f"malformed sample ({exc})") from exc
    if not ids:
        return MultimodalDataset([], np.zeros((0, 0)), np.zeros((0, 0)), [], [], [], num_classes or 0)
    return MultimodalDataset(ids, text, image, labels, dom, splits, num_classes)
