"""Spatial spreading of a bit message over a grid of image blocks.

The message is cut into slices of ``k`` bits. Every slice is stored together
with its binary index, so a decoded grid describes itself: the translator
finds each slice by matching index bits and never needs the layout that was
used to spread the message.

Grids are numpy arrays laid out row-major as ``(rows, cols, k')`` where
``rows = H // b`` and ``cols = W // b``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np


class InvalidParamsError(ValueError):
    pass


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class SpreadParams:
    L: int = 32
    k: int = 2
    b: int = 16
    n: int = 3
    W: int = 256
    H: int = 256
    seed: int | None = None

    def __post_init__(self):
        if self.L <= 0 or self.k <= 0:
            raise InvalidParamsError("L and k must be positive")
        if self.L % self.k:
            raise InvalidParamsError(f"k={self.k} does not divide L={self.L}")
        if self.b <= 0 or self.W % self.b or self.H % self.b:
            raise InvalidParamsError(f"b={self.b} must divide W={self.W} and H={self.H}")
        if self.n < 1:
            raise InvalidParamsError("n must be >= 1")

    @property
    def n_slices(self) -> int:
        return math.ceil(self.L / self.k)

    @property
    def index_bits(self) -> int:
        return math.ceil(math.log2(self.L / self.k))

    @property
    def k_prime(self) -> int:
        return self.k + self.index_bits

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.H // self.b, self.W // self.b

    def with_size(self, W: int, H: int) -> SpreadParams:
        return SpreadParams(self.L, self.k, self.b, self.n, W, H, self.seed)


@dataclass
class SpreadGrid:
    """Cell-level message grid.

    ``layout`` holds the slice index stored in each cell (ground truth only).
    ``mask`` marks cells that survived a spatial attack; masked-out cells are
    ignored by :func:`translate` and by the decoding loss.
    """

    values: np.ndarray
    layout: np.ndarray | None = None
    mask: np.ndarray | None = field(default=None)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


def validate_message(m, L: int) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 1 or m.shape[0] != L:
        raise InvalidParamsError(f"message must have exactly {L} bits, got shape {m.shape}")
    if not np.isin(m, (0, 1)).all():
        raise InvalidParamsError("message bits must be 0 or 1")
    return m.astype(np.uint8)


def random_message(L: int = 32, rng: np.random.Generator | int | None = None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    return rng.integers(0, 2, size=L, dtype=np.uint8)


def message_to_hex(m) -> str:
    """Most-significant bit first; ``L`` must be a multiple of 4."""
    m = np.asarray(m, dtype=np.uint8)
    if m.size % 4:
        raise InvalidParamsError("hex form needs a bit count divisible by 4")
    value = int("".join(map(str, m.tolist())), 2)
    return f"{value:0{m.size // 4}x}"


def message_from_hex(text: str, L: int = 32) -> np.ndarray:
    text = text.strip().lower().removeprefix("0x")
    if len(text) * 4 != L:
        raise InvalidParamsError(f"expected {L // 4} hex characters, got {len(text)}")
    try:
        value = int(text, 16)
    except ValueError as err:
        raise InvalidParamsError(f"not a hex string: {text!r}") from err
    return np.array([int(c) for c in f"{value:0{L}b}"], dtype=np.uint8)


def index_to_bits(i: int, width: int) -> np.ndarray:
    if width == 0:
        return np.zeros(0, dtype=np.uint8)
    return np.array([(i >> (width - 1 - j)) & 1 for j in range(width)], dtype=np.uint8)


def make_tuples(m, params: SpreadParams) -> np.ndarray:
    """Return the tuple sequence as an array of shape ``(n_slices, k')``.

    Row ``i`` is ``bin(i)`` (MSB first) followed by ``m[i*k:(i+1)*k]``.
    """
    m = validate_message(m, params.L)
    nb = params.index_bits
    tuples = np.zeros((params.n_slices, params.k_prime), dtype=np.uint8)
    for i in range(params.n_slices):
        tuples[i, :nb] = index_to_bits(i, nb)
        tuples[i, nb:] = m[i * params.k:(i + 1) * params.k]
    return tuples


def sample_layout(params: SpreadParams, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Assign a slice index to every cell.

    Every index gets ``min(n, cells // T)`` guaranteed copies so that a clean
    grid always offers ``n`` exact matches to the translator when the grid is
    large enough; the remaining cells are drawn uniformly.
    """
    rows, cols = params.grid_shape
    n_cells, T = rows * cols, params.n_slices
    if n_cells < T:
        raise CapacityError(f"grid has {n_cells} cells but {T} tuples must be stored")
    rng = np.random.default_rng(params.seed if rng is None else rng)
    copies = min(params.n, n_cells // T)
    fixed = np.concatenate([rng.permutation(T) for _ in range(copies)])
    layout = np.concatenate([fixed, rng.integers(0, T, size=n_cells - len(fixed))])
    rng.shuffle(layout)
    return layout.reshape(rows, cols)


def extend(values: np.ndarray, b: int) -> np.ndarray:
    """Replicate every cell into a ``b x b`` pixel block."""
    return np.repeat(np.repeat(values, b, axis=0), b, axis=1)


def propagate(m, params: SpreadParams, rng: np.random.Generator | int | None = None):
    """Spread ``m`` into ``(SpreadGrid, extended)``.

    The extended grid has shape ``(H, W, k')``. The layout is drawn from
    ``rng`` when given, otherwise from ``params.seed``.
    """
    tuples = make_tuples(m, params)
    layout = sample_layout(params, rng)
    values = tuples[layout].astype(np.float32)
    return SpreadGrid(values, layout), extend(values, params.b)


def translate(grid, params: SpreadParams, mask: np.ndarray | None = None):
    """Recover ``(message, confidences)`` from a decoded grid with values in [0, 1].

    For each slice the ``n`` cells whose index channels are closest (L1) to
    ``bin(i)`` are selected, ties going to the lowest row-major position. Their
    payload channels are averaged and thresholded (strictly above 0.5 is 1).
    Confidence of a slice is the mean distance of its averaged bits from 0.5.
    """
    if isinstance(grid, SpreadGrid):
        mask = grid.mask if mask is None else mask
        grid = grid.values
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 3 or grid.shape[2] != params.k_prime:
        raise InvalidParamsError(f"grid must be (rows, cols, {params.k_prime}), got {grid.shape}")
    cells = grid.reshape(-1, params.k_prime)
    if mask is not None:
        cells = cells[np.asarray(mask, dtype=bool).reshape(-1)]
    if len(cells) == 0:
        raise CapacityError("no usable cells in grid")
    n = params.n
    if len(cells) < n:
        warnings.warn(f"only {len(cells)} cells available, fewer than n={n}", RuntimeWarning,
                      stacklevel=2)
        n = len(cells)

    nb, k = params.index_bits, params.k
    targets = np.stack([index_to_bits(i, nb) for i in range(params.n_slices)]).astype(np.float64)
    # (slices, cells)
    dist = np.abs(cells[None, :, :nb] - targets[:, None, :]).sum(axis=2)
    chosen = np.argsort(dist, axis=1, kind="stable")[:, :n]
    avg = cells[:, nb:][chosen].mean(axis=1)  # (slices, k)
    bits = (avg > 0.5).astype(np.uint8).reshape(-1)[: params.L]
    confidences = np.abs(avg - 0.5).mean(axis=1)
    return bits, confidences


def calibrate_grid(grid: SpreadGrid, meta: dict, b: int) -> SpreadGrid:
    """Align a ground-truth grid with the geometry of an applied attack.

    ``meta`` is the geometry record produced by the attack (see
    :mod:`ddmark.attacks`). Crops and resizes are mapped at pixel level and
    re-pooled to cells, so a cell of the result describes exactly what the
    decoder sees at that position. Cropout masks every cell not fully inside
    the kept window. All other attacks leave the grid untouched.
    """
    kind = meta.get("kind", "none")
    if kind == "crop":
        top, left, side = meta["top"], meta["left"], meta["side"]
        pixels = extend(grid.values, b)[top:top + side, left:left + side]
        return SpreadGrid(_pool(pixels, b), None, None)
    if kind == "cropout":
        top, left, side = meta["top"], meta["left"], meta["side"]
        rows, cols = grid.values.shape[:2]
        inside = np.zeros((rows * b, cols * b))
        inside[top:top + side, left:left + side] = 1.0
        mask = _pool(inside[..., None], b)[..., 0] == 1.0
        return SpreadGrid(grid.values, grid.layout, mask)
    if kind == "resize":
        out_h, out_w = meta["out_size"]
        rows, cols = grid.values.shape[:2]
        ys = np.floor(np.arange(out_h) * (rows * b) / out_h).astype(int) // b
        xs = np.floor(np.arange(out_w) * (cols * b) / out_w).astype(int) // b
        pixels = grid.values[ys][:, xs]
        return SpreadGrid(_pool(pixels, b), None, None)
    return grid


def _pool(pixels: np.ndarray, b: int) -> np.ndarray:
    rows, cols = pixels.shape[0] // b, pixels.shape[1] // b
    trimmed = pixels[: rows * b, : cols * b]
    return trimmed.reshape(rows, b, cols, b, -1).mean(axis=(1, 3)).astype(np.float32)
