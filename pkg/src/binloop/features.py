import math
import logging
from dataclasses import dataclass
from typing import Protocol
import numpy as np
from scipy import ndimage

from binloop.errors import DimensionMismatch
from binloop.imageio import GrayImage

log = logging.getLogger(__name__)

DESCRIPTOR_SIZE = 64
_SAMPLES = 20      ## samples per side of the descriptor window
_SUBREGIONS = 4    ## 4x4 subregions of 5x5 samples each


@dataclass(frozen=True, eq=False)
class KeypointSet:
  '''
  points: (K, 4) rows of (row, col, scale, orientation)
  descriptors: (K, D) unit-norm vectors, one per point
  '''
  points: np.ndarray
  descriptors: np.ndarray

  def __post_init__(self):
    points = np.asarray(self.points, dtype=np.float64).reshape(-1, 4)
    descriptors = np.asarray(self.descriptors, dtype=np.float64)
    if descriptors.ndim != 2:
      descriptors = descriptors.reshape(len(points), -1)
    if len(points) != len(descriptors):
      raise DimensionMismatch(f'{len(points)} points but {len(descriptors)} descriptors')
    object.__setattr__(self, 'points', points)
    object.__setattr__(self, 'descriptors', descriptors)

  @classmethod
  def empty(cls, dim: int = DESCRIPTOR_SIZE) -> 'KeypointSet':
    return cls(np.zeros((0, 4)), np.zeros((0, dim)))

  def __len__(self) -> int:
    return len(self.points)

  @property
  def dim(self) -> int:
    return self.descriptors.shape[1]

  def __eq__(self, other: object) -> bool:
    if not isinstance(other, KeypointSet):
      return NotImplemented
    return np.array_equal(self.points, other.points) and np.array_equal(self.descriptors, other.descriptors)


class FeatureExtractor(Protocol):
  '''Anything that turns a full-resolution frame into at most `max_features` keypoints, deterministically.'''

  def detect_and_describe(self, img: GrayImage, max_features: int) -> KeypointSet:
    ...


class HessianFeatureExtractor:
  '''
  Blob and saddle detector on the scale-normalized |det H| at a few Gaussian scales, with an
  upright 64-D descriptor built from sums of gradients (dx, dy, |dx|, |dy|) over a 4x4 grid.
  '''

  def __init__(self, threshold: float = 1e-3, scales: tuple[float, ...] = (1.2, 2.0, 2.8)):
    if threshold <= 0:
      raise ValueError('threshold must be positive')
    self.threshold = threshold
    self.scales = tuple(sorted(scales))
    self.margin = math.ceil(3 * self.scales[-1])

  def _responses(self, data: np.ndarray) -> np.ndarray:
    stack = np.empty((len(self.scales),) + data.shape)
    for k, sigma in enumerate(self.scales):
      lxx = ndimage.gaussian_filter(data, sigma, order=(0, 2), mode='nearest')
      lyy = ndimage.gaussian_filter(data, sigma, order=(2, 0), mode='nearest')
      lxy = ndimage.gaussian_filter(data, sigma, order=(1, 1), mode='nearest')
      stack[k] = sigma ** 4 * np.abs(lxx * lyy - lxy * lxy)
    return stack

  def detect(self, img: GrayImage, max_features: int) -> np.ndarray:
    '''Keypoint rows (row, col, scale, orientation) sorted by response, strongest first.'''
    data = img.data
    if min(data.shape) <= 2 * self.margin:
      return np.zeros((0, 4))
    stack = self._responses(data)
    peaks = (stack == ndimage.maximum_filter(stack, size=3, mode='nearest')) & (stack > self.threshold)
    m = self.margin
    peaks[:, :m, :] = False
    peaks[:, -m:, :] = False
    peaks[:, :, :m] = False
    peaks[:, :, -m:] = False
    s, r, c = np.nonzero(peaks)
    if s.size == 0:
      return np.zeros((0, 4))
    strength = stack[s, r, c]
    order = np.lexsort((s, c, r, -strength))[:max_features]
    scales = np.asarray(self.scales)[s[order]]
    return np.column_stack([r[order], c[order], scales, np.zeros(order.size)]).astype(np.float64)

  def describe(self, img: GrayImage, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    '''Descriptors for `points`; points whose window carries no gradient are dropped.'''
    if len(points) == 0:
      return points, np.zeros((0, DESCRIPTOR_SIZE))
    data = img.data
    descriptors = np.zeros((len(points), DESCRIPTOR_SIZE))
    for sigma in np.unique(points[:, 2]):
      sel = np.flatnonzero(points[:, 2] == sigma)
      dx = ndimage.gaussian_filter(data, sigma, order=(0, 1), mode='nearest')
      dy = ndimage.gaussian_filter(data, sigma, order=(1, 0), mode='nearest')
      step = 0.5 * sigma
      offsets = (np.arange(_SAMPLES) - (_SAMPLES - 1) / 2.0) * step
      grid_r, grid_c = np.meshgrid(offsets, offsets, indexing='ij')
      weight = np.exp(-(grid_r ** 2 + grid_c ** 2) / (2.0 * (3.3 * step) ** 2))
      rows = points[sel, 0][:, None, None] + grid_r[None]
      cols = points[sel, 1][:, None, None] + grid_c[None]
      coords = [rows.reshape(-1), cols.reshape(-1)]
      gx = ndimage.map_coordinates(dx, coords, order=1, mode='nearest').reshape(rows.shape) * weight
      gy = ndimage.map_coordinates(dy, coords, order=1, mode='nearest').reshape(rows.shape) * weight
      cell = _SAMPLES // _SUBREGIONS
      def _pool(g: np.ndarray) -> np.ndarray:
        return g.reshape(len(sel), _SUBREGIONS, cell, _SUBREGIONS, cell).sum(axis=(2, 4))
      desc = np.stack([_pool(gx), _pool(gy), _pool(np.abs(gx)), _pool(np.abs(gy))], axis=-1)
      descriptors[sel] = desc.reshape(len(sel), DESCRIPTOR_SIZE)
    norms = np.linalg.norm(descriptors, axis=1)
    keep = norms > 1e-12
    return points[keep], descriptors[keep] / norms[keep, None]

  def detect_and_describe(self, img: GrayImage, max_features: int) -> KeypointSet:
    points = self.detect(img, max_features)
    points, descriptors = self.describe(img, points)
    log.debug(f'Detected {len(points)} keypoints on {img.width}x{img.height} frame')
    return KeypointSet(points, descriptors)


def detect_and_describe(img: GrayImage, max_features: int, extractor: FeatureExtractor | None = None) -> KeypointSet:
  extractor = extractor or HessianFeatureExtractor()
  return extractor.detect_and_describe(img, max_features)
