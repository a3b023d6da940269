import csv
import json
import time
import logging
from collections import defaultdict
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, TypeVar
from pydantic import BaseModel, Field

from binloop.dataset import GroundTruthPairs
from binloop.errors import ParseError
from binloop.verification import LoopDetection

log = logging.getLogger(__name__)

T = TypeVar('T')

DETECTIONS_HEADER = ['query_id', 'match_id', 'xi', 'match_count']
REPORT_HEADER = ['tp', 'fp', 'total_truth', 'recall_pct', 'precision_pct', 'mean_time_ms']
UNDEFINED = 'n/a'


class EvalReport(BaseModel):
  recall_rate: float | None = Field(None, description="Percent of ground-truth pairs detected; None without truth")
  precision: float | None = Field(None, description="Percent of detections that are correct; None without detections")
  true_positives: int = Field(0, ge=0)
  false_positives: int = Field(0, ge=0)
  total_truth: int = Field(0, ge=0)
  truth_hits: int = Field(0, ge=0, description="Distinct ground-truth pairs matched by some detection")
  mean_time_ms: float | None = Field(None, description="Mean wall time per frame")
  per_stage_ms: dict[str, float] = Field(default_factory=dict, description="Mean wall time per frame of each stage")

  def to_csv(self) -> str:
    def _fmt(v: float | None) -> str:
      return '' if v is None else f'{v:.3f}'
    row = [str(self.true_positives), str(self.false_positives), str(self.total_truth),
           _fmt(self.recall_rate), _fmt(self.precision), _fmt(self.mean_time_ms)]
    return ','.join(REPORT_HEADER) + '\n' + ','.join(row) + '\n'

  def write_csv(self, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(self.to_csv(), encoding='utf-8')
    return path

  def summary(self) -> str:
    def _pct(v: float | None) -> str:
      return UNDEFINED if v is None else f'{v:.1f}%'
    lines = [
      f'Recall rate:    {_pct(self.recall_rate)} ({self.truth_hits} of {self.total_truth} loop pairs)',
      f'Precision:      {_pct(self.precision)} ({self.true_positives} TP, {self.false_positives} FP)',
      f'Mean time:      {UNDEFINED if self.mean_time_ms is None else f"{self.mean_time_ms:.1f} ms"} per frame',
    ]
    for stage, ms in sorted(self.per_stage_ms.items()):
      lines.append(f'  {stage:<14}{ms:.2f} ms')
    return '\n'.join(lines)


def score(detections: Iterable[LoopDetection], truth: GroundTruthPairs, frame_tol: int,
          mean_time_ms: float | None = None, per_stage_ms: dict[str, float] | None = None) -> EvalReport:
  '''
  A detection is a true positive when some truth pair lies within `frame_tol` frames on both
  ends. Recall counts distinct truth pairs hit: detections are visited in ascending
  (query, match) order and each claims the closest unclaimed truth pair within tolerance.
  '''
  if frame_tol < 0:
    raise ValueError('frame_tol must be nonnegative')
  ordered = sorted((d for d in detections if d.accepted), key=lambda d: (d.query_id, d.match_id))
  by_query: dict[int, list[tuple[int, int]]] = defaultdict(list)
  for i, j in truth.pairs:
    by_query[i].append((i, j))
  hit: set[tuple[int, int]] = set()
  tp = fp = 0
  for det in ordered:
    near = [
      (abs(pair[0] - det.query_id) + abs(pair[1] - det.match_id), pair)
      for qi in range(det.query_id - frame_tol, det.query_id + frame_tol + 1)
      for pair in by_query.get(qi, ())
      if abs(pair[1] - det.match_id) <= frame_tol
    ]
    if not near:
      fp += 1
      continue
    tp += 1
    unclaimed = [key for key in near if key[1] not in hit]
    if unclaimed:
      hit.add(min(unclaimed)[1])
  total = len(truth)
  return EvalReport(
    recall_rate=100.0 * len(hit) / total if total else None,
    precision=100.0 * tp / (tp + fp) if tp + fp else None,
    true_positives=tp,
    false_positives=fp,
    total_truth=total,
    truth_hits=len(hit),
    mean_time_ms=mean_time_ms,
    per_stage_ms=per_stage_ms or {},
  )


class StageTimer:
  '''
  Wall-clock accumulator for pipeline stages. Single owner: the frame loop reports to it from
  one thread.
  '''

  def __init__(self):
    self._samples: dict[str, list[float]] = defaultdict(list)
    self._frames: list[float] = []

  def time_stage(self, stage: str, fn: Callable[..., T], *args: Any, **kwargs: Any) -> tuple[T, float]:
    start = time.perf_counter()
    result = fn(*args, **kwargs)
    elapsed = (time.perf_counter() - start) * 1000.0
    self._samples[stage].append(elapsed)
    return result, elapsed

  @contextmanager
  def stage(self, stage: str) -> Iterator[None]:
    start = time.perf_counter()
    try:
      yield
    finally:
      self._samples[stage].append((time.perf_counter() - start) * 1000.0)

  @contextmanager
  def frame(self) -> Iterator[None]:
    start = time.perf_counter()
    try:
      yield
    finally:
      self._frames.append((time.perf_counter() - start) * 1000.0)

  @property
  def frames(self) -> int:
    return len(self._frames)

  def samples(self, stage: str) -> list[float]:
    return list(self._samples.get(stage, []))

  def per_stage_ms(self) -> dict[str, float]:
    '''Mean of the recorded samples of each stage; stages never run are absent.'''
    return {k: sum(v) / len(v) for k, v in self._samples.items() if v}

  def per_frame_ms(self) -> dict[str, float]:
    '''Total time of each stage spread over all frames.'''
    if not self._frames:
      return {}
    return {k: sum(v) / len(self._frames) for k, v in self._samples.items() if v}

  def mean_time_ms(self) -> float | None:
    return sum(self._frames) / len(self._frames) if self._frames else None

  def to_json(self) -> dict:
    return {'frames': self.frames, 'mean_time_ms': self.mean_time_ms(), 'per_stage_ms': self.per_frame_ms()}


def write_detections_csv(detections: Iterable[LoopDetection], path: Path | str) -> Path:
  path = Path(path)
  path.parent.mkdir(parents=True, exist_ok=True)
  with open(path, 'w', newline='', encoding='utf-8') as f:
    writer = csv.writer(f, lineterminator='\n')
    writer.writerow(DETECTIONS_HEADER)
    for d in detections:
      if d.accepted:
        writer.writerow([d.query_id, d.match_id, f'{d.xi:.6f}', d.match_count])
  return path


def read_detections_csv(path: Path | str) -> list[LoopDetection]:
  path = Path(path)
  if not path.is_file():
    raise FileNotFoundError(f'No such detections file: {path}')
  detections = []
  with open(path, 'r', newline='', encoding='utf-8') as f:
    reader = csv.reader(f)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != DETECTIONS_HEADER:
      raise ParseError(f'expected header {",".join(DETECTIONS_HEADER)}', path, 1)
    for lineno, row in enumerate(reader, start=2):
      if not row:
        continue
      if len(row) != len(DETECTIONS_HEADER):
        raise ParseError(f'expected {len(DETECTIONS_HEADER)} columns, got {len(row)}', path, lineno)
      try:
        detections.append(LoopDetection(int(row[0]), int(row[1]), float(row[2]), int(row[3]), True))
      except ValueError as e:
        raise ParseError(f'bad value ({e})', path, lineno) from e
  return detections


def timing_sidecar(detections_path: Path | str) -> Path:
  p = Path(detections_path)
  return p.with_name(p.name + '.timing.json')


def write_timing(timer: StageTimer, detections_path: Path | str) -> Path:
  path = timing_sidecar(detections_path)
  path.write_text(json.dumps(timer.to_json(), indent=2), encoding='utf-8')
  return path


def read_timing(detections_path: Path | str) -> tuple[float | None, dict[str, float]]:
  path = timing_sidecar(detections_path)
  if not path.is_file():
    log.debug(f'No timing sidecar at {path}')
    return None, {}
  try:
    data = json.loads(path.read_text(encoding='utf-8'))
  except (json.JSONDecodeError, UnicodeDecodeError) as e:
    raise ParseError(f'bad timing data ({e})', path) from e
  if not isinstance(data, dict):
    raise ParseError('timing data must be a JSON object', path)
  mean = data.get('mean_time_ms')
  stages = data.get('per_stage_ms', {})
  if mean is not None and not isinstance(mean, (int, float)):
    raise ParseError(f'mean_time_ms must be a number, got {mean!r}', path)
  if not isinstance(stages, dict) or not all(isinstance(v, (int, float)) for v in stages.values()):
    raise ParseError('per_stage_ms must map stage names to numbers', path)
  return mean, stages


def precision_recall_sweep(runs: dict[float, list[LoopDetection]], truth: GroundTruthPairs,
                           frame_tol: int) -> list[tuple[float, EvalReport]]:
  '''Score one detection run per xi_min value; rows come back in ascending xi_min order.'''
  return [(xi, score(runs[xi], truth, frame_tol)) for xi in sorted(runs)]
