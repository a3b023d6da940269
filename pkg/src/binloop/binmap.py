import math
import struct
import logging
from dataclasses import dataclass
import numpy as np

from binloop.errors import DimensionMismatch, IndexFormatError, InvalidDimensions

log = logging.getLogger(__name__)

WORD_BITS = 64
WORD_DTYPE = np.dtype('<u8')
_HEADER = struct.Struct('<II')


def _words_per_row(width: int) -> int:
  return (width + WORD_BITS - 1) // WORD_BITS


@dataclass(frozen=True, eq=False)
class BinaryMap:
  '''
  Salient region map packed row by row into little-endian 64-bit words.

  Bit `c` of a row lives in word `c // 64`, bit position `c % 64`. Padding bits past
  `width` are always zero, so word-level popcounts never see them.
  '''
  width: int
  height: int
  words: np.ndarray  ## shape (height, words_per_row), dtype <u8

  def __post_init__(self):
    if self.width < 1 or self.height < 1:
      raise InvalidDimensions(f'Binary map must be at least 1x1, got {self.width}x{self.height}')
    words = np.ascontiguousarray(self.words, dtype=WORD_DTYPE)
    if words.shape != (self.height, _words_per_row(self.width)):
      raise InvalidDimensions(f'Word array shape {words.shape} does not fit a {self.width}x{self.height} map')
    words = words & _row_mask(self.width)
    words.setflags(write=False)
    object.__setattr__(self, 'words', words)

  @classmethod
  def from_bool(cls, mask: np.ndarray) -> 'BinaryMap':
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
      raise InvalidDimensions(f'Expected a 2-D mask, got shape {mask.shape}')
    height, width = mask.shape
    padded = np.zeros((height, _words_per_row(width) * WORD_BITS), dtype=bool)
    padded[:, :width] = mask
    packed = np.packbits(padded, axis=1, bitorder='little')
    return cls(width, height, packed.view(WORD_DTYPE))

  @classmethod
  def zeros(cls, width: int, height: int) -> 'BinaryMap':
    return cls(width, height, np.zeros((height, _words_per_row(width)), dtype=WORD_DTYPE))

  def to_bool(self) -> np.ndarray:
    bits = np.unpackbits(self.words.view(np.uint8), axis=1, bitorder='little')
    return bits[:, :self.width].astype(bool)

  @property
  def shape(self) -> tuple[int, int]:
    return self.height, self.width

  def __eq__(self, other: object) -> bool:
    if not isinstance(other, BinaryMap):
      return NotImplemented
    return self.shape == other.shape and np.array_equal(self.words, other.words)

  def __hash__(self) -> int:
    return hash((self.width, self.height, self.words.tobytes()))

  def to_bytes(self) -> bytes:
    return _HEADER.pack(self.width, self.height) + self.words.astype(WORD_DTYPE).tobytes()

  @classmethod
  def from_bytes(cls, data: bytes | memoryview, offset: int = 0) -> tuple['BinaryMap', int]:
    '''Decode one map starting at `offset`; returns the map and the offset just past it.'''
    if len(data) - offset < _HEADER.size:
      raise IndexFormatError('Truncated binary map header')
    width, height = _HEADER.unpack_from(data, offset)
    offset += _HEADER.size
    count = height * _words_per_row(width)
    nbytes = count * WORD_DTYPE.itemsize
    if width < 1 or height < 1 or len(data) - offset < nbytes:
      raise IndexFormatError(f'Truncated or invalid {width}x{height} binary map')
    words = np.frombuffer(data, dtype=WORD_DTYPE, count=count, offset=offset).reshape(height, -1)
    return cls(width, height, words.copy()), offset + nbytes


def _row_mask(width: int) -> np.ndarray:
  mask = np.full(_words_per_row(width), np.iinfo(np.uint64).max, dtype=WORD_DTYPE)
  tail = width % WORD_BITS
  if tail:
    mask[-1] = np.uint64((1 << tail) - 1)
  return mask


@dataclass(frozen=True)
class Centroid:
  row: float
  col: float
  defined: bool

  @classmethod
  def undefined(cls) -> 'Centroid':
    return cls(math.nan, math.nan, False)


def popcount(o: BinaryMap) -> int:
  return int(np.bitwise_count(o.words).sum(dtype=np.int64))


def _check_same_shape(o1: BinaryMap, o2: BinaryMap) -> None:
  if o1.shape != o2.shape:
    raise DimensionMismatch(f'Map sizes differ: {o1.width}x{o1.height} vs {o2.width}x{o2.height}')


def and_count(o1: BinaryMap, o2: BinaryMap) -> int:
  _check_same_shape(o1, o2)
  return int(np.bitwise_count(o1.words & o2.words).sum(dtype=np.int64))


def similarity(o1: BinaryMap, o2: BinaryMap) -> float:
  '''
  Similarity factor: shared set bits over the larger popcount. Two empty maps, or an
  empty map against anything, score 0 so blank frames never look alike.
  '''
  shared = and_count(o1, o2)
  denom = max(popcount(o1), popcount(o2))
  return shared / denom if denom else 0.0


def stack_words(maps: list[BinaryMap]) -> np.ndarray:
  '''Flatten maps of one size into an (N, words) matrix for the batch kernels.'''
  if not maps:
    return np.zeros((0, 0), dtype=WORD_DTYPE)
  shape = maps[0].shape
  for m in maps:
    if m.shape != shape:
      raise DimensionMismatch('All maps in a batch must share one size')
  return np.stack([m.words.reshape(-1) for m in maps])


def popcount_many(stack: np.ndarray) -> np.ndarray:
  return np.bitwise_count(stack).sum(axis=1, dtype=np.int64)


def and_count_many(query: BinaryMap, stack: np.ndarray) -> np.ndarray:
  flat = query.words.reshape(-1)
  if stack.ndim != 2 or stack.shape[1] != flat.shape[0]:
    raise DimensionMismatch(f'Query words {flat.shape[0]} do not fit stack {stack.shape}')
  return np.bitwise_count(stack & flat).sum(axis=1, dtype=np.int64)


def similarity_many(query: BinaryMap, stack: np.ndarray, pops: np.ndarray | None = None) -> np.ndarray:
  shared = and_count_many(query, stack)
  if pops is None:
    pops = popcount_many(stack)
  denom = np.maximum(pops, popcount(query))
  with np.errstate(divide='ignore', invalid='ignore'):
    xi = np.where(denom > 0, shared / np.maximum(denom, 1), 0.0)
  return xi


def centroid(o: BinaryMap) -> Centroid:
  mask = o.to_bool()
  rows, cols = np.nonzero(mask)
  if rows.size == 0:
    return Centroid.undefined()
  return Centroid(float(rows.mean()), float(cols.mean()), True)


def centroid_distance(m1: Centroid, m2: Centroid, diag: float) -> float | None:
  '''Centroid distance over the image diagonal; None when either centroid is undefined.'''
  if diag <= 0:
    raise ValueError('diag must be positive')
  if not (m1.defined and m2.defined):
    return None
  return math.hypot(m1.row - m2.row, m1.col - m2.col) / diag


def diagonal(o: BinaryMap) -> float:
  return math.hypot(o.width, o.height)
