import json
import logging
from pathlib import Path
from typing import Any
from pydantic import BaseModel, Field, field_validator

log = logging.getLogger(__name__)


class BaseModelWithEmptyToNone(BaseModel):
  @field_validator('*', mode='before')
  @classmethod
  def empty_str_to_none(cls, v):
    return None if v == "" else v


class SaliencyParams(BaseModel):
  avg_filter_n: int = Field(default=3, ge=1, description="Side of the n x n mean filter applied to the log spectrum")
  gaussian_sigma: float = Field(default=2.5, gt=0, description="Sigma in pixels of the Gaussian smoothing of the saliency map")
  gamma: float = Field(default=3.0, gt=0, description="Salient region extraction level (threshold = mean * gamma)")
  log_epsilon: float = Field(default=1e-12, gt=0, description="Guard added to the amplitude before taking the log")
  long_side: int = Field(default=128, ge=2, description="Working resolution: longer image side in pixels")

  @field_validator('avg_filter_n')
  @classmethod
  def odd_filter(cls, v: int) -> int:
    if v % 2 == 0:
      raise ValueError('avg_filter_n must be odd')
    return v


class RetrievalParams(BaseModel):
  xi_min: float = Field(default=0.4, gt=0, le=1, description="Minimum similarity factor for a candidate pair")
  centroid_max: float = Field(default=0.15, gt=0, le=1, description="Maximum centroid distance as a fraction of the image diagonal")
  temporal_gap: int = Field(default=100, ge=0, description="Minimum frame distance between query and match")
  max_candidates: int = Field(default=5, ge=1, description="Candidates returned per query")


class VerifyParams(BaseModel):
  ratio: float = Field(default=0.7, gt=0, lt=1, description="Nearest / second-nearest descriptor distance ratio")
  min_matches: int = Field(default=20, ge=1, description="Matched keypoints needed to accept a loop")
  max_features: int = Field(default=500, ge=1, description="Keypoints kept per frame, best response first")
  hessian_threshold: float = Field(default=1e-3, gt=0, description="Minimum scale-normalized |det H| response")
  workers: int = Field(default=4, ge=1, description="Threads used to verify the candidates of one frame")
  cache_size: int = Field(default=256, ge=1, description="Frames whose keypoints are kept in memory")


class GroundTruthParams(BaseModel):
  d_gt: float = Field(default=10.0, gt=0, description="Distance in meters under which two poses are a loop")
  min_gap: int = Field(default=100, ge=1, description="Minimum frame distance of a ground-truth pair")
  frame_tol: int = Field(default=3, ge=0, description="Frame tolerance when matching detections to ground truth")


class OutputParams(BaseModelWithEmptyToNone):
  detections: Path = Field(default=Path('detections.csv'), description="Detections CSV written by detect")
  report: Path = Field(default=Path('report.csv'), description="Report CSV written by eval")
  debug_dir: Path = Field(default=Path('debug'), description="Directory for saliency-debug images")
  index: Path | None = Field(default=None, description="Optional frame database written after detect")


class PipelineConfig(BaseModelWithEmptyToNone):
  manifest: Path | None = Field(default=None, description="Dataset manifest (key=value file)")
  saliency: SaliencyParams = Field(default_factory=SaliencyParams)
  retrieval: RetrievalParams = Field(default_factory=RetrievalParams)
  verify: VerifyParams = Field(default_factory=VerifyParams)
  ground_truth: GroundTruthParams = Field(default_factory=GroundTruthParams)
  output: OutputParams = Field(default_factory=OutputParams)


class Configuration:

  def __init__(self, config_path: Path | None = None):
    self.config_path = Path(config_path) if config_path else None
    self._cfg: PipelineConfig = PipelineConfig()
    if self.config_path is not None and self.config_path.exists():
      self.load()

  def load(self) -> None:
    with open(self.config_path, 'r', encoding='utf-8') as f:
      self._cfg = PipelineConfig(**json.load(f))
    log.debug(f'Loaded configuration from {self.config_path}')

  def save(self, path: Path | None = None) -> None:
    target = Path(path) if path else self.config_path
    if target is None:
      raise ValueError('No configuration path to save to')
    with open(target, 'w', encoding='utf-8') as f:
      json.dump(self._cfg.model_dump(mode='json', exclude_none=True), f, indent=2, ensure_ascii=False)

  def get(self, key: str) -> Any:
    node: Any = self._cfg
    for part in key.split('.'):
      if not isinstance(node, BaseModel) or part not in type(node).model_fields:
        raise KeyError(f'Unknown configuration key {key}')
      node = getattr(node, part)
    return node

  def set(self, key: str, value: Any) -> None:
    '''
    Set a (possibly dotted) field and re-validate the whole model, so a bad value never
    ends up in a live configuration.
    '''
    if value == self.get(key):
      return
    new_cfg = self._cfg.model_dump()
    parts = key.split('.')
    node = new_cfg
    for part in parts[:-1]:
      node = node[part]
    node[parts[-1]] = value
    self._cfg = PipelineConfig(**new_cfg)

  @property
  def pipeline(self) -> PipelineConfig:
    return self._cfg

  @property
  def manifest(self) -> Path | None:
    return self._cfg.manifest

  @manifest.setter
  def manifest(self, value: Path) -> None:
    self.set('manifest', value)

  @property
  def saliency(self) -> SaliencyParams:
    return self._cfg.saliency

  @property
  def retrieval(self) -> RetrievalParams:
    return self._cfg.retrieval

  @property
  def verify(self) -> VerifyParams:
    return self._cfg.verify

  @property
  def ground_truth(self) -> GroundTruthParams:
    return self._cfg.ground_truth

  @property
  def output(self) -> OutputParams:
    return self._cfg.output
