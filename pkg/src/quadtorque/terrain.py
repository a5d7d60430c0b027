"""Uniform-noise heightfield terrain.

Heights are drawn uniformly from the quantized set {min_height + k*step}
covering [min_height, max_height]; each downsample cell is a flat plateau.
Contact normals are +z everywhere and height jumps between neighbouring
cells act as vertical risers for the penetration computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TerrainError(ValueError):
    pass


@dataclass(frozen=True)
class TerrainConfig:
    min_height: float = -0.075
    max_height: float = 0.025
    step: float = 0.01
    downsample_scale: float = 0.2
    extent: tuple[float, float] = (10.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        if self.min_height > self.max_height:
            raise TerrainError("min_height must be <= max_height")
        if self.step <= 0:
            raise TerrainError("step must be > 0")
        if self.downsample_scale <= 0:
            raise TerrainError("downsample_scale must be > 0")
        span = self.max_height - self.min_height
        k = span / self.step
        if abs(k - round(k)) > 1e-9:
            raise TerrainError(
                f"height span {span} is not an integer multiple of step {self.step}"
            )

    @property
    def num_levels(self) -> int:
        return int(round((self.max_height - self.min_height) / self.step)) + 1


@dataclass
class Heightfield:
    """Piecewise-constant height grid; cell (i, j) covers
    [origin + i*cell, origin + (i+1)*cell) x [...j...) with the lower-index
    cell owning shared boundaries."""

    heights: np.ndarray          # (nx, ny) metres
    cell_size: float
    origin: tuple[float, float]  # world x, y of the grid corner
    config: TerrainConfig = field(repr=False, default=None)

    @property
    def shape(self) -> tuple[int, int]:
        return self.heights.shape

    def cell_index(self, x, y):
        """Map world coords to owning cell indices (border-clamped).

        A point exactly on a cell boundary belongs to the lower-index cell:
        index = ceil(local/cell) - 1, clamped into the grid.
        """
        nx, ny = self.heights.shape
        ix = np.ceil((np.asarray(x) - self.origin[0]) / self.cell_size).astype(np.int64) - 1
        iy = np.ceil((np.asarray(y) - self.origin[1]) / self.cell_size).astype(np.int64) - 1
        return np.clip(ix, 0, nx - 1), np.clip(iy, 0, ny - 1)

    def height_at(self, x, y):
        """Terrain height under world (x, y); scalar or batched. Total via
        border clamping."""
        ix, iy = self.cell_index(x, y)
        return self.heights[ix, iy]

    def to_csv(self, path) -> None:
        """Write the raw grid (rows = x index, columns = y index)."""
        header = (
            f"cell_size={self.cell_size},origin_x={self.origin[0]},"
            f"origin_y={self.origin[1]}"
        )
        np.savetxt(path, self.heights, delimiter=",", header=header)


def generate(config: TerrainConfig) -> Heightfield:
    """Sample a heightfield; deterministic for a fixed seed."""
    lx, ly = config.extent
    nx = int(np.floor(lx / config.downsample_scale + 1e-9))
    ny = int(np.floor(ly / config.downsample_scale + 1e-9))
    if nx < 1 or ny < 1:
        raise TerrainError(
            f"extent {config.extent} smaller than one {config.downsample_scale} m cell"
        )
    rng = np.random.Generator(np.random.PCG64(config.seed))
    levels = rng.integers(0, config.num_levels, size=(nx, ny))
    # linspace pins both endpoints exactly; interior points stay within the
    # 1e-9 quantization tolerance of min + k*step
    if config.num_levels == 1:
        values = np.array([config.min_height])
    else:
        values = np.linspace(config.min_height, config.max_height,
                             config.num_levels)
    heights = values[levels]
    origin = (-0.5 * nx * config.downsample_scale, -0.5 * ny * config.downsample_scale)
    return Heightfield(heights=heights, cell_size=config.downsample_scale,
                       origin=origin, config=config)


class TerrainBatch:
    """Per-environment heightfields with a vectorized query path.

    All fields must share cell size and shape (same TerrainConfig except
    seed), which lets the grids stack into one (n_env, nx, ny) array.
    """

    def __init__(self, fields: list[Heightfield]):
        shapes = {f.shape for f in fields}
        cells = {f.cell_size for f in fields}
        if len(shapes) != 1 or len(cells) != 1:
            raise TerrainError("batched terrains must share grid shape and cell size")
        self.fields = fields
        self.heights = np.stack([f.heights for f in fields])
        self.cell_size = fields[0].cell_size
        self.origin = np.asarray([f.origin for f in fields])  # (n_env, 2)
        self.n_env = len(fields)

    @classmethod
    def sample(cls, config: TerrainConfig, n_env: int) -> "TerrainBatch":
        """One independent terrain per environment; env i uses seed+i."""
        from dataclasses import replace
        return cls([generate(replace(config, seed=config.seed + i)) for i in range(n_env)])

    def height_at(self, points, env_ids=None) -> np.ndarray:
        """points: (m, k, 2) world x-y -> heights (m, k); row i is queried
        against environment env_ids[i] (all environments when omitted)."""
        if env_ids is None:
            env_ids = np.arange(self.n_env)
        nx, ny = self.heights.shape[1:]
        local = points - self.origin[env_ids, None, :]
        ij = np.ceil(local / self.cell_size).astype(np.int64) - 1
        ix = np.clip(ij[..., 0], 0, nx - 1)
        iy = np.clip(ij[..., 1], 0, ny - 1)
        return self.heights[np.asarray(env_ids)[:, None], ix, iy]
