import time
import logging
from pathlib import Path
import numpy as np
from tqdm import tqdm

from binloop.binmap import BinaryMap, popcount_many, similarity_many, stack_words
from binloop.dataset import Sequence
from binloop.evaluation import StageTimer
from binloop.features import FeatureExtractor
from binloop.imageio import GrayImage, to_working_resolution
from binloop.model import PipelineConfig, RetrievalParams
from binloop.retrieval import FrameDatabase, FrameRecord
from binloop.saliency import compute_binary_content
from binloop.verification import GeometryCheck, LoopDetection, Verifier

log = logging.getLogger(__name__)

STAGES = ('load', 'saliency', 'retrieval', 'verification')


class LoopDetector:
  '''
  Online loop closure detection over one sequence. Frame t is queried against frames
  0..t-1 only, then inserted. Frame ids are positions in the sequence.
  '''

  def __init__(self, sequence: Sequence, config: PipelineConfig, extractor: FeatureExtractor | None = None,
               geometry_check: GeometryCheck | None = None, memoize_maps: bool = False):
    self.sequence = sequence
    self.config = config
    self.retrieval: RetrievalParams = config.retrieval
    self.memoize_maps = memoize_maps
    self.timer = StageTimer()
    self.database = FrameDatabase()
    self.verifier = Verifier(config.verify, self._load_full, extractor, geometry_check)
    self._maps: dict[int, BinaryMap] = {}

  def _load_full(self, frame_id: int) -> GrayImage:
    return self.sequence.load_frame(frame_id)

  def reset(self, retrieval: RetrievalParams | None = None) -> None:
    '''
    Start a new pass with an empty database and fresh timings. Memoized maps and keypoints
    survive, since neither depends on the retrieval parameters.
    '''
    if retrieval is not None:
      self.retrieval = retrieval
    self.timer = StageTimer()
    self.database = FrameDatabase()

  def binary_content(self, frame_id: int) -> tuple[BinaryMap, GrayImage | None]:
    '''Fingerprint of a frame, plus the full-resolution image when it had to be loaded.'''
    if frame_id in self._maps:
      return self._maps[frame_id], None
    with self.timer.stage('load'):
      image = self.sequence.load_frame(frame_id)
    with self.timer.stage('saliency'):
      small = to_working_resolution(image, self.config.saliency.long_side)
      bmap = compute_binary_content(small, self.config.saliency)
    if self.memoize_maps:
      self._maps[frame_id] = bmap
    return bmap, image

  def process_frame(self, frame_id: int) -> list[LoopDetection]:
    '''Query, verify and then insert one frame; returns the accepted detections.'''
    with self.timer.frame():
      bmap, image = self.binary_content(frame_id)
      rec = FrameRecord(frame_id, bmap, self.sequence.frame_path(frame_id).name)
      with self.timer.stage('retrieval'):
        candidates = self.database.query(rec, self.retrieval)
      detections = []
      if candidates:
        with self.timer.stage('verification'):
          detections = self.verifier.verify_many(candidates, image)
      self.database.insert(rec)
    accepted = [d for d in detections if d.accepted]
    for d in accepted:
      log.info(f'Loop closure: frame {d.query_id} -> {d.match_id} (xi={d.xi:.3f}, {d.match_count} matches)')
    return accepted

  def run(self, progress: bool = True) -> list[LoopDetection]:
    log.info(f'Running loop detection on {len(self.sequence)} frames (xi_min={self.retrieval.xi_min})')
    found = []
    for frame_id in tqdm(range(len(self.sequence)), desc='frames', unit='frame', disable=not progress):
      found.extend(self.process_frame(frame_id))
    log.info(f'{len(found)} loop closures in {len(self.sequence)} frames, '
             f'keypoint cache {self.verifier.hits} hits / {self.verifier.misses} misses')
    return found

  def save_index(self, path: Path | str) -> Path:
    return self.database.save(path)


def similarity_throughput(maps: list[BinaryMap], min_seconds: float = 0.5) -> float:
  '''
  Pairwise similarity comparisons per second, single-threaded, each map of `maps` queried
  against all of them with the batch kernel until `min_seconds` have elapsed.
  '''
  if not maps:
    raise ValueError('Need at least one map')
  stack = stack_words(maps)
  pops = popcount_many(stack)
  comparisons = 0
  start = time.perf_counter()
  elapsed = 0.0
  while elapsed < min_seconds:
    for m in maps:
      similarity_many(m, stack, pops)
      comparisons += len(maps)
    elapsed = time.perf_counter() - start
  return comparisons / elapsed


def random_maps(count: int, width: int = 128, height: int = 96, density: float = 0.1, seed: int = 0) -> list[BinaryMap]:
  rng = np.random.default_rng(seed)
  return [BinaryMap.from_bool(rng.random((height, width)) < density) for _ in range(count)]
