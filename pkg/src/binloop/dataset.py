import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
import numpy as np
from pydantic import BaseModel, Field, ValidationError
from scipy.spatial import cKDTree

from binloop.errors import DataError, EmptyFile, ParseError
from binloop.imageio import GrayImage, list_frames, load_grayscale

log = logging.getLogger(__name__)


class PoseFormat(Enum):
  KITTI = 'kitti'
  TUM = 'tum'

  @property
  def token_count(self) -> int:
    return 12 if self == PoseFormat.KITTI else 8


@dataclass(frozen=True)
class Trajectory:
  '''One (x, y, z) position in meters per frame, shape (N, 3).'''
  positions: np.ndarray

  def __post_init__(self):
    positions = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
    if len(positions) < 1:
      raise ValueError('A trajectory needs at least one position')
    if not np.all(np.isfinite(positions)):
      raise ValueError('Trajectory coordinates must be finite')
    positions.setflags(write=False)
    object.__setattr__(self, 'positions', positions)

  def __len__(self) -> int:
    return len(self.positions)


@dataclass(frozen=True)
class GroundTruthPairs:
  '''Reference loop pairs (i, j) with i > j.'''
  pairs: frozenset[tuple[int, int]]

  def __len__(self) -> int:
    return len(self.pairs)

  def __contains__(self, pair: tuple[int, int]) -> bool:
    return pair in self.pairs

  def sorted(self) -> list[tuple[int, int]]:
    return sorted(self.pairs)


def load_poses(path: Path | str, fmt: PoseFormat | str = PoseFormat.KITTI) -> Trajectory:
  '''
  Read camera positions from a pose file.

  Args:
    path: pose file
    fmt: 'kitti' (12 values per line, 3x4 row-major pose, translation at indices 3, 7, 11) or
         'tum' ("timestamp tx ty tz qx qy qz qw")

  Returns:
    Trajectory with one position per non-blank line, in file order
  '''
  path = Path(path)
  fmt = PoseFormat(fmt)
  if not path.is_file():
    raise FileNotFoundError(f'No such pose file: {path}')
  positions = []
  with open(path, 'r', encoding='utf-8') as f:
    for lineno, line in enumerate(f, start=1):
      line = line.strip()
      if not line or line.startswith('#'):  ## TUM files carry comment headers
        continue
      tokens = line.split()
      if len(tokens) != fmt.token_count:
        raise ParseError(f'expected {fmt.token_count} values in {fmt.value} format, got {len(tokens)}', path, lineno)
      try:
        values = [float(t) for t in tokens]
      except ValueError as e:
        raise ParseError(f'non-numeric value ({e})', path, lineno) from e
      if fmt == PoseFormat.KITTI:
        positions.append((values[3], values[7], values[11]))
      else:
        positions.append((values[1], values[2], values[3]))
  if not positions:
    raise EmptyFile(f'{path}: no poses found')
  log.debug(f'Loaded {len(positions)} {fmt.value} poses from {path}')
  try:
    return Trajectory(np.array(positions))
  except ValueError as e:
    raise ParseError(str(e), path) from e


def save_poses_kitti(traj: Trajectory, path: Path | str) -> Path:
  '''Write identity-rotation KITTI poses; positions survive a load_poses round trip exactly.'''
  path = Path(path)
  with open(path, 'w', encoding='utf-8') as f:
    for x, y, z in traj.positions.tolist():
      f.write(f'1 0 0 {x!r} 0 1 0 {y!r} 0 0 1 {z!r}\n')
  return path


def ground_truth_pairs(traj: Trajectory, d_gt: float, min_gap: int) -> GroundTruthPairs:
  '''All (i, j), i - j >= min_gap, whose positions lie within d_gt meters.'''
  if d_gt <= 0:
    raise ValueError('d_gt must be positive')
  if min_gap < 1:
    raise ValueError('min_gap must be at least 1')
  if len(traj) <= min_gap:
    return GroundTruthPairs(frozenset())
  tree = cKDTree(traj.positions)
  close = tree.query_pairs(r=d_gt, output_type='ndarray')
  pairs = set()
  for a, b in close:
    i, j = (int(a), int(b)) if a > b else (int(b), int(a))
    if i - j >= min_gap:
      pairs.add((i, j))
  log.debug(f'{len(pairs)} ground-truth pairs within {d_gt} m and {min_gap} frames')
  return GroundTruthPairs(frozenset(pairs))


class DatasetManifest(BaseModel):
  image_dir: Path = Field(..., description="Directory holding the frames")
  pose_file: Path | None = Field(None, description="Pose file, one line per frame")
  pose_format: PoseFormat = Field(default=PoseFormat.KITTI, description="Pose file format")

  @classmethod
  def load(cls, path: Path | str) -> 'DatasetManifest':
    '''
    Parse a key=value manifest. Relative paths are resolved against the manifest's folder.
    '''
    path = Path(path)
    if not path.is_file():
      raise FileNotFoundError(f'No such manifest: {path}')
    values: dict[str, str] = {}
    with open(path, 'r', encoding='utf-8') as f:
      for lineno, line in enumerate(f, start=1):
        line = line.strip()
        if not line or line.startswith('#'):
          continue
        if '=' not in line:
          raise ParseError(f'expected key=value, got {line!r}', path, lineno)
        key, value = line.split('=', 1)
        values[key.strip()] = value.strip()
    try:
      manifest = cls(**values)
    except ValidationError as e:
      raise ParseError(f'invalid manifest ({e.errors()[0]["msg"]})', path) from e
    base = path.parent
    updates = {'image_dir': base / manifest.image_dir}
    if manifest.pose_file is not None:
      updates['pose_file'] = base / manifest.pose_file
    return manifest.model_copy(update=updates)

  def save(self, path: Path | str) -> Path:
    path = Path(path)
    lines = [f'image_dir={self.image_dir}', f'pose_format={self.pose_format.value}']
    if self.pose_file is not None:
      lines.insert(1, f'pose_file={self.pose_file}')
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


class Sequence:
  '''Frames of one dataset in lexicographic order, plus the trajectory when poses are available.'''

  def __init__(self, manifest: DatasetManifest):
    self.manifest = manifest
    self.frames = list_frames(manifest.image_dir)
    if not self.frames:
      raise DataError(f'No frames found in {manifest.image_dir}')
    self._trajectory: Trajectory | None = None

  @classmethod
  def from_manifest(cls, path: Path | str) -> 'Sequence':
    return cls(DatasetManifest.load(path))

  def __len__(self) -> int:
    return len(self.frames)

  def frame_path(self, index: int) -> Path:
    if not 0 <= index < len(self.frames):
      raise IndexError(f'Frame index {index} out of range 0..{len(self.frames) - 1}')
    return self.frames[index]

  def load_frame(self, index: int) -> GrayImage:
    return load_grayscale(self.frame_path(index))

  @property
  def trajectory(self) -> Trajectory:
    if self._trajectory is None:
      if self.manifest.pose_file is None:
        raise DataError('The dataset manifest names no pose file')
      traj = load_poses(self.manifest.pose_file, self.manifest.pose_format)
      if len(traj) != len(self.frames):
        log.warning(f'{len(traj)} poses for {len(self.frames)} frames in {self.manifest.image_dir}')
      self._trajectory = traj
    return self._trajectory
