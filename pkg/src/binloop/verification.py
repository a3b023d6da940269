import logging
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable
import numpy as np
from scipy.spatial.distance import cdist

from binloop.errors import DimensionMismatch
from binloop.features import FeatureExtractor, HessianFeatureExtractor, KeypointSet
from binloop.imageio import GrayImage
from binloop.model import VerifyParams
from binloop.retrieval import LoopCandidate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatchResult:
  pairs: list[tuple[int, int, float]] = field(default_factory=list)

  @property
  def count(self) -> int:
    return len(self.pairs)


@dataclass(frozen=True)
class LoopDetection:
  query_id: int
  match_id: int
  xi: float
  match_count: int
  accepted: bool


## Optional consistency hook: (query keypoints, match keypoints, matches) -> retained match count
GeometryCheck = Callable[[KeypointSet, KeypointSet, MatchResult], int]


def _nearest_two(dist: np.ndarray, ratio: float) -> tuple[np.ndarray, np.ndarray]:
  '''Per row: index of the nearest column and whether it passes the ratio test.'''
  order = np.argsort(dist, axis=1, kind='stable')
  nearest = order[:, 0]
  rows = np.arange(dist.shape[0])
  if dist.shape[1] < 2:
    return nearest, np.ones(dist.shape[0], dtype=bool)  ## no second neighbour, accept nearest
  best = dist[rows, nearest]
  second = dist[rows, order[:, 1]]
  return nearest, best < ratio * second


def match_descriptors(a: KeypointSet, b: KeypointSet, ratio: float) -> MatchResult:
  '''
  Mutual nearest neighbours under the ratio test. The ratio test runs in both directions so
  the resulting one-to-one set does not depend on argument order.
  '''
  if len(a) and len(b) and a.dim != b.dim:
    raise DimensionMismatch(f'Descriptor sizes differ: {a.dim} vs {b.dim}')
  if len(a) == 0 or len(b) == 0:
    return MatchResult([])
  dist = cdist(a.descriptors, b.descriptors, metric='euclidean')
  nn_ab, ok_ab = _nearest_two(dist, ratio)
  nn_ba, ok_ba = _nearest_two(dist.T, ratio)
  pairs = []
  for i in range(len(a)):
    j = int(nn_ab[i])
    if ok_ab[i] and ok_ba[j] and nn_ba[j] == i:
      pairs.append((i, j, float(dist[i, j])))
  return MatchResult(pairs)


def _decide(candidate: LoopCandidate, kp_q: KeypointSet, kp_m: KeypointSet, params: VerifyParams,
            geometry_check: GeometryCheck | None = None) -> LoopDetection:
  matches = match_descriptors(kp_q, kp_m, params.ratio)
  count = matches.count
  if geometry_check is not None and count:
    count = int(geometry_check(kp_q, kp_m, matches))
  accepted = count >= params.min_matches
  log.debug(f'Pair ({candidate.query_id}, {candidate.match_id}) xi={candidate.xi:.3f}: {count} matches, {"accepted" if accepted else "rejected"}')
  return LoopDetection(candidate.query_id, candidate.match_id, candidate.xi, count, accepted)


def verify(candidate: LoopCandidate, img_q: GrayImage, img_m: GrayImage, params: VerifyParams,
           extractor: FeatureExtractor | None = None, geometry_check: GeometryCheck | None = None) -> LoopDetection:
  extractor = extractor or HessianFeatureExtractor(params.hessian_threshold)
  kp_q = extractor.detect_and_describe(img_q, params.max_features)
  kp_m = extractor.detect_and_describe(img_m, params.max_features)
  return _decide(candidate, kp_q, kp_m, params, geometry_check)


class Verifier:
  '''
  Verifies retrieval candidates with memoized keypoints. Frames are loaded lazily through
  `loader(frame_id)`; the memo is an LRU keyed by frame id and behaves as a pure cache.
  '''

  def __init__(self, params: VerifyParams, loader: Callable[[int], GrayImage],
               extractor: FeatureExtractor | None = None, geometry_check: GeometryCheck | None = None):
    self.params = params
    self.loader = loader
    self.extractor = extractor or HessianFeatureExtractor(params.hessian_threshold)
    self.geometry_check = geometry_check
    self._cache: OrderedDict[int, KeypointSet] = OrderedDict()
    self._lock = threading.Lock()
    self.hits = 0
    self.misses = 0

  def keypoints(self, frame_id: int, image: GrayImage | None = None) -> KeypointSet:
    with self._lock:
      if frame_id in self._cache:
        self._cache.move_to_end(frame_id)
        self.hits += 1
        return self._cache[frame_id]
      self.misses += 1
    img = image if image is not None else self.loader(frame_id)
    kps = self.extractor.detect_and_describe(img, self.params.max_features)
    with self._lock:
      self._cache[frame_id] = kps
      self._cache.move_to_end(frame_id)
      while len(self._cache) > self.params.cache_size:
        self._cache.popitem(last=False)
    return kps

  def verify(self, candidate: LoopCandidate, query_image: GrayImage | None = None) -> LoopDetection:
    kp_q = self.keypoints(candidate.query_id, query_image)
    kp_m = self.keypoints(candidate.match_id)
    return _decide(candidate, kp_q, kp_m, self.params, self.geometry_check)

  def verify_many(self, candidates: list[LoopCandidate], query_image: GrayImage | None = None) -> list[LoopDetection]:
    '''Verify the candidates of one query frame, fanning out to worker threads; order is preserved.'''
    if not candidates:
      return []
    # Query keypoints once, before the fan-out
    self.keypoints(candidates[0].query_id, query_image)
    if self.params.workers <= 1 or len(candidates) == 1:
      return [self.verify(c, query_image) for c in candidates]
    with ThreadPoolExecutor(max_workers=min(self.params.workers, len(candidates))) as e:
      return list(e.map(lambda c: self.verify(c, query_image), candidates))
