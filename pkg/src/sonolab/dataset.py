"""Multi-file dataset iteration: batching, shuffling, clipping, resize/crop.

Containers are discovered recursively under a root directory (*.h5 / *.hdf5),
enumerated in lexicographic order, one item per stored frame. Everything an
iterator emits is fully determined by (spec, seed): the shuffle permutation,
crop offsets and batch boundaries all derive from them.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from sonolab.container import UsFile, data_key
from sonolab.core import TensorFrame
from sonolab.errors import ParameterError, SchemaError
from sonolab.ops import clip_map_range

RESIZE_TYPES = ("resize", "center_crop", "random_crop")


@dataclass(frozen=True)
class DatasetSpec:
    root: Path
    key: str = "data/image_sc"
    batch_size: int = 1
    shuffle: bool = False
    seed: int = 0
    clip_range: tuple[float, float] = (-60.0, 0.0)
    normalization_range: tuple[float, float] = (0.0, 1.0)
    image_size: tuple[int, int] | None = None
    resize_type: str = "resize"
    cache_items: int = 0  # frames kept in the in-memory LRU cache; 0 disables

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        object.__setattr__(self, "key", data_key(self.key))
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.resize_type not in RESIZE_TYPES:
            raise ParameterError(
                f"resize_type must be one of {RESIZE_TYPES}, got {self.resize_type!r}"
            )
        if self.image_size is not None:
            h, w = int(self.image_size[0]), int(self.image_size[1])
            if h < 1 or w < 1:
                raise ParameterError(f"image_size must be positive, got {self.image_size}")
            object.__setattr__(self, "image_size", (h, w))
        lo, hi = self.clip_range
        if not lo < hi:
            raise ParameterError(f"clip_range must be increasing, got {self.clip_range}")


def list_container_files(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    files = sorted(
        (p for pat in ("*.h5", "*.hdf5") for p in root.rglob(pat)),
        key=lambda p: p.as_posix(),
    )
    return files


def enumerate_items(spec: DatasetSpec) -> list[tuple[Path, int]]:
    """All (file, frame) items in deterministic order; shuffle uses the seed."""
    files = list_container_files(spec.root)
    items: list[tuple[Path, int]] = []
    missing: list[str] = []
    for path in files:
        with UsFile(path, mode="r") as f:
            if spec.key not in f.manifest:
                missing.append(str(path))
                continue
            items.extend((path, i) for i in range(f.n_frames))
    if missing:
        raise SchemaError(
            f"dataset key {spec.key!r} missing from {len(missing)} file(s): "
            + ", ".join(missing)
        )
    if spec.shuffle:
        perm = np.random.default_rng(spec.seed).permutation(len(items))
        items = [items[i] for i in perm]
    return items


def _bilinear_resize(img: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    th, tw = target
    sh, sw = img.shape
    # half-pixel-center mapping, edges clamped
    rows = np.clip((np.arange(th) + 0.5) * sh / th - 0.5, 0, sh - 1)
    cols = np.clip((np.arange(tw) + 0.5) * sw / tw - 0.5, 0, sw - 1)
    r0 = np.clip(np.floor(rows).astype(np.intp), 0, max(sh - 2, 0))
    c0 = np.clip(np.floor(cols).astype(np.intp), 0, max(sw - 2, 0))
    u = (rows - r0)[:, None]
    v = (cols - c0)[None, :]
    r1 = np.minimum(r0 + 1, sh - 1)
    c1 = np.minimum(c0 + 1, sw - 1)
    return (
        img[np.ix_(r0, c0)] * (1 - u) * (1 - v)
        + img[np.ix_(r0, c1)] * (1 - u) * v
        + img[np.ix_(r1, c0)] * u * (1 - v)
        + img[np.ix_(r1, c1)] * u * v
    )


def resize_or_crop(img, target: tuple[int, int], mode: str = "resize", rng=None) -> np.ndarray:
    """Bring one 2-D image to ``target`` (h, w) by the requested strategy.

    center_crop offsets are floor((src - tgt) / 2); random_crop draws uniform
    offsets from the given rng (seeded by the caller for determinism).
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ParameterError(f"expected a 2-D image, got shape {img.shape}")
    th, tw = int(target[0]), int(target[1])
    if mode == "resize":
        return _bilinear_resize(img, (th, tw))
    sh, sw = img.shape
    if th > sh or tw > sw:
        raise ParameterError(
            f"crop target {target} exceeds source image shape {img.shape}"
        )
    if mode == "center_crop":
        r = (sh - th) // 2
        c = (sw - tw) // 2
    elif mode == "random_crop":
        if rng is None:
            rng = np.random.default_rng(0)
        r = int(rng.integers(0, sh - th + 1))
        c = int(rng.integers(0, sw - tw + 1))
    else:
        raise ParameterError(f"unknown resize mode {mode!r}")
    return img[r : r + th, c : c + tw]


class _FrameCache:
    """Tiny LRU over (path, frame) -> raw frame array."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._store: OrderedDict = OrderedDict()

    def get(self, key):
        if key in self._store:
            self._store.move_to_end(key)
            return self._store[key]
        return None

    def put(self, key, value):
        if self.capacity <= 0:
            return
        self._store[key] = value
        self._store.move_to_end(key)
        while len(self._store) > self.capacity:
            self._store.popitem(last=False)


class DataLoader:
    """Iterate batches of preprocessed frames per a DatasetSpec.

    Each epoch re-derives its permutation from (seed, epoch); the first epoch
    of two identically configured loaders is byte-identical. The final
    partial batch is emitted at its true size so one epoch covers every frame
    exactly once.
    """

    def __init__(self, spec: DatasetSpec):
        self.spec = spec
        self._cache = _FrameCache(spec.cache_items)
        self._epoch = 0

    def _items_for_epoch(self, epoch: int) -> list[tuple[Path, int]]:
        base = enumerate_items(replace(self.spec, shuffle=False))
        if self.spec.shuffle:
            perm = np.random.default_rng([self.spec.seed, epoch]).permutation(len(base))
            base = [base[i] for i in perm]
        return base

    def _load_frame(self, path: Path, frame: int) -> np.ndarray:
        cached = self._cache.get((path, frame))
        if cached is not None:
            return cached
        with UsFile(path, mode="r") as f:
            arr = np.asarray(f.load_data(self.spec.key, indices=[frame]).data)[0]
        self._cache.put((path, frame), arr)
        return arr

    def _prepare(self, arr: np.ndarray, ordinal: int, epoch: int) -> np.ndarray:
        out = clip_map_range(arr, clip=self.spec.clip_range, out_range=self.spec.normalization_range)
        if self.spec.image_size is not None:
            rng = np.random.default_rng([self.spec.seed, epoch, ordinal])
            out = resize_or_crop(out, self.spec.image_size, self.spec.resize_type, rng=rng)
        return out

    def __iter__(self) -> Iterator[TensorFrame]:
        epoch = self._epoch
        self._epoch += 1
        items = self._items_for_epoch(epoch)
        bs = self.spec.batch_size
        for start in range(0, len(items), bs):
            chunk = items[start : start + bs]
            frames = [
                self._prepare(self._load_frame(path, idx), start + j, epoch)
                for j, (path, idx) in enumerate(chunk)
            ]
            yield TensorFrame(data=np.stack(frames, axis=0), axes=("batch", "h", "w"))


def make_dataloader(
    root,
    key: str = "data/image_sc",
    batch_size: int = 1,
    shuffle: bool = False,
    clip_image_range=(-60.0, 0.0),
    normalization_range=(0.0, 1.0),
    image_size=None,
    resize_type: str = "resize",
    seed: int = 0,
    cache_items: int = 0,
) -> DataLoader:
    """Convenience constructor mirroring the DatasetSpec fields."""
    spec = DatasetSpec(
        root=root,
        key=key,
        batch_size=batch_size,
        shuffle=shuffle,
        seed=seed,
        clip_range=tuple(clip_image_range),
        normalization_range=tuple(normalization_range),
        image_size=tuple(image_size) if image_size is not None else None,
        resize_type=resize_type,
        cache_items=cache_items,
    )
    return DataLoader(spec)
