import struct
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator
import numpy as np

from binloop.binmap import (
  BinaryMap, Centroid, centroid, centroid_distance, diagonal, popcount, and_count_many,
  similarity
)
from binloop.errors import DimensionMismatch, IndexFormatError, NonMonotoneId
from binloop.model import RetrievalParams

log = logging.getLogger(__name__)

INDEX_MAGIC = b'BLDB1'
_COUNT = struct.Struct('<I')
_RECORD_HEAD = struct.Struct('<QI')


@dataclass(frozen=True)
class FrameRecord:
  frame_id: int
  map: BinaryMap
  image_ref: str | None = None
  pop: int = field(init=False)
  center: Centroid = field(init=False)

  def __post_init__(self):
    if self.frame_id < 0:
      raise ValueError('frame_id must be nonnegative')
    object.__setattr__(self, 'pop', popcount(self.map))
    object.__setattr__(self, 'center', centroid(self.map))


@dataclass(frozen=True)
class LoopCandidate:
  query_id: int
  match_id: int
  xi: float
  centroid_dist: float


def prefilter(rec_a: FrameRecord, rec_b: FrameRecord, params: RetrievalParams) -> bool:
  '''
  Cheap rejection before the similarity factor. Since xi <= min(pop)/max(pop), a pop ratio
  under xi_min can never reach the threshold.
  '''
  dist = centroid_distance(rec_a.center, rec_b.center, diagonal(rec_a.map))
  if dist is None or dist > params.centroid_max:
    return False
  lo, hi = sorted((rec_a.pop, rec_b.pop))
  return hi > 0 and lo / hi >= params.xi_min


class FrameDatabase:
  '''
  Growing store of frame fingerprints. One writer appends frames in id order; queries only
  read, and a lock keeps the stacked word matrix consistent for concurrent readers.
  '''

  def __init__(self):
    self._records: list[FrameRecord] = []
    self._lock = threading.RLock()
    ## column buffers grow by doubling; only the first len(self) rows are live
    self._stack: np.ndarray | None = None
    self._ids = np.zeros(0, dtype=np.int64)
    self._pops = np.zeros(0, dtype=np.int64)
    self._centers = np.zeros((0, 2), dtype=np.float64)
    self._defined = np.zeros(0, dtype=bool)

  def _grow(self, words: int) -> None:
    capacity = max(64, 2 * len(self._ids))
    def _extend(arr: np.ndarray, shape: tuple) -> np.ndarray:
      out = np.zeros(shape, dtype=arr.dtype)
      out[:len(arr)] = arr
      return out
    stack = self._stack if self._stack is not None else np.zeros((0, words), dtype=np.uint64)
    self._stack = _extend(stack, (capacity, words))
    self._ids = _extend(self._ids, (capacity,))
    self._pops = _extend(self._pops, (capacity,))
    self._centers = _extend(self._centers, (capacity, 2))
    self._defined = _extend(self._defined, (capacity,))

  def __len__(self) -> int:
    return len(self._records)

  def __iter__(self) -> Iterator[FrameRecord]:
    return iter(list(self._records))

  def __getitem__(self, frame_id: int) -> FrameRecord:
    idx = int(np.searchsorted(self._ids[:len(self._records)], frame_id))
    if idx >= len(self._records) or self._records[idx].frame_id != frame_id:
      raise KeyError(frame_id)
    return self._records[idx]

  @property
  def last_id(self) -> int | None:
    return self._records[-1].frame_id if self._records else None

  def insert(self, rec: FrameRecord) -> None:
    with self._lock:
      if self._records:
        if rec.frame_id <= self._records[-1].frame_id:
          raise NonMonotoneId(f'Frame id {rec.frame_id} is not greater than {self._records[-1].frame_id}')
        if rec.map.shape != self._records[0].map.shape:
          raise DimensionMismatch(f'Frame {rec.frame_id} map size {rec.map.shape} differs from database {self._records[0].map.shape}')
      n = len(self._records)
      row = rec.map.words.reshape(-1)
      if n == len(self._ids):
        self._grow(row.shape[0])
      self._stack[n] = row
      self._ids[n] = rec.frame_id
      self._pops[n] = rec.pop
      self._centers[n] = (rec.center.row, rec.center.col)
      self._defined[n] = rec.center.defined
      self._records.append(rec)
    log.debug(f'Stored frame {rec.frame_id} ({rec.pop} salient cells)')

  def query(self, rec: FrameRecord, params: RetrievalParams) -> list[LoopCandidate]:
    '''
    Past frames at least `temporal_gap` older than `rec` that pass the centroid and popcount
    prefilters and reach `xi_min`, best first (ties: older frame first).
    '''
    if rec.pop == 0 or not rec.center.defined:
      return []
    with self._lock:
      n = len(self._records)
      if n == 0:
        return []
      if rec.map.shape != self._records[0].map.shape:
        raise DimensionMismatch(f'Query map size {rec.map.shape} differs from database {self._records[0].map.shape}')
      admissible = self._ids[:n] <= rec.frame_id - params.temporal_gap
      idx = np.flatnonzero(admissible & self._defined[:n])
      if idx.size == 0:
        return []
      # Centroid filter
      diag = diagonal(rec.map)
      deltas = self._centers[idx] - np.array([rec.center.row, rec.center.col])
      dists = np.hypot(deltas[:, 0], deltas[:, 1]) / diag
      keep = dists <= params.centroid_max
      # Popcount ratio bound
      pops = self._pops[idx]
      lo = np.minimum(pops, rec.pop)
      hi = np.maximum(pops, rec.pop)
      keep &= (hi > 0) & (lo / np.maximum(hi, 1) >= params.xi_min)
      idx, dists, hi = idx[keep], dists[keep], hi[keep]
      if idx.size == 0:
        return []
      shared = and_count_many(rec.map, self._stack[idx])
      xi = shared / hi
      ids = self._ids[idx]
    passed = np.flatnonzero(xi >= params.xi_min)
    order = sorted(passed, key=lambda k: (-xi[k], ids[k]))[:params.max_candidates]
    candidates = [
      LoopCandidate(rec.frame_id, int(ids[k]), float(xi[k]), float(dists[k]))
      for k in order
    ]
    if candidates:
      log.debug(f'Frame {rec.frame_id}: {len(candidates)} candidates, best {candidates[0].match_id} xi={candidates[0].xi:.3f}')
    return candidates

  def save(self, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with self._lock, open(path, 'wb') as f:
      f.write(INDEX_MAGIC)
      f.write(_COUNT.pack(len(self._records)))
      for rec in self._records:
        ref = (rec.image_ref or '').encode('utf-8')
        f.write(_RECORD_HEAD.pack(rec.frame_id, len(ref)))
        f.write(ref)
        f.write(rec.map.to_bytes())
    log.info(f'Saved {len(self._records)} frames to {path}')
    return path

  @classmethod
  def load(cls, path: Path | str) -> 'FrameDatabase':
    path = Path(path)
    data = memoryview(path.read_bytes())
    if bytes(data[:len(INDEX_MAGIC)]) != INDEX_MAGIC:
      raise IndexFormatError(f'{path}: not a frame database (bad magic)')
    offset = len(INDEX_MAGIC)
    if len(data) - offset < _COUNT.size:
      raise IndexFormatError(f'{path}: truncated header')
    (count,) = _COUNT.unpack_from(data, offset)
    offset += _COUNT.size
    db = cls()
    for _ in range(count):
      if len(data) - offset < _RECORD_HEAD.size:
        raise IndexFormatError(f'{path}: truncated record')
      frame_id, ref_len = _RECORD_HEAD.unpack_from(data, offset)
      offset += _RECORD_HEAD.size
      if len(data) - offset < ref_len:
        raise IndexFormatError(f'{path}: image reference of frame {frame_id} runs past the end of the file')
      try:
        ref = bytes(data[offset:offset + ref_len]).decode('utf-8')
      except UnicodeDecodeError as e:
        raise IndexFormatError(f'{path}: image reference of frame {frame_id} is not UTF-8') from e
      offset += ref_len
      bmap, offset = BinaryMap.from_bytes(data, offset)
      try:
        db.insert(FrameRecord(frame_id, bmap, ref or None))
      except (NonMonotoneId, DimensionMismatch) as e:
        raise IndexFormatError(f'{path}: {e}') from e
    log.info(f'Loaded {count} frames from {path}')
    return db


def brute_force_query(db: FrameDatabase, rec: FrameRecord, params: RetrievalParams) -> list[LoopCandidate]:
  '''Reference answer: plain similarity over every admissible frame, no prefilters.'''
  found = []
  for other in db:
    if other.frame_id > rec.frame_id - params.temporal_gap:
      continue
    xi = similarity(rec.map, other.map)
    if xi >= params.xi_min:
      dist = centroid_distance(rec.center, other.center, diagonal(rec.map))
      found.append(LoopCandidate(rec.frame_id, other.frame_id, xi, dist if dist is not None else float('nan')))
  found.sort(key=lambda c: (-c.xi, c.match_id))
  return found
