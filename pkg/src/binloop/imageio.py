import logging
from dataclasses import dataclass
from pathlib import Path
import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from binloop.errors import DecodeError, InvalidDimensions

log = logging.getLogger(__name__)

FRAME_SUFFIXES = ('.png', '.jpg', '.jpeg', '.pgm', '.ppm')
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class GrayImage:
  '''Row-major intensity field in [0, 1], shape (height, width).'''
  data: np.ndarray

  def __post_init__(self):
    data = np.array(self.data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
      raise InvalidDimensions(f'Expected a non-empty 2-D field, got shape {data.shape}')
    if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
      raise ValueError('Intensities must lie in [0, 1]')
    data.setflags(write=False)
    object.__setattr__(self, 'data', data)

  @property
  def width(self) -> int:
    return self.data.shape[1]

  @property
  def height(self) -> int:
    return self.data.shape[0]


def load_grayscale(path: Path | str) -> GrayImage:
  '''
  Decode an 8-bit PNG/JPEG/PGM frame into a GrayImage.

  Color frames are reduced with fixed luminance weights (0.299, 0.587, 0.114) rather than
  the decoder's own conversion, so results do not depend on the Pillow build.
  '''
  path = Path(path)
  if not path.is_file():
    raise FileNotFoundError(f'No such image: {path}')
  try:
    with Image.open(path) as img:
      img.load()
      if img.mode in ('L', '1', 'LA'):
        gray = np.asarray(img.convert('L'), dtype=np.float64) / 255.0
      elif img.mode in ('RGB', 'RGBA', 'P', 'CMYK', 'YCbCr'):
        rgb = np.asarray(img.convert('RGB'), dtype=np.float64) / 255.0
        gray = rgb @ LUMA_WEIGHTS
      else:
        raise DecodeError(f'{path}: unsupported image mode {img.mode}')
  except (UnidentifiedImageError, OSError) as e:
    raise DecodeError(f'{path}: cannot decode image ({e})') from e
  return GrayImage(np.clip(gray, 0.0, 1.0))


def resize_bilinear(img: GrayImage, target_w: int, target_h: int) -> GrayImage:
  if target_w < 1 or target_h < 1 or target_w * target_h < 2:
    raise InvalidDimensions(f'Target size {target_w}x{target_h} is too small')
  if (target_w, target_h) == (img.width, img.height):
    return GrayImage(img.data.copy())
  # Pixel-center alignment: output pixel centers map onto the input grid
  rows = (np.arange(target_h) + 0.5) * (img.height / target_h) - 0.5
  cols = (np.arange(target_w) + 0.5) * (img.width / target_w) - 0.5
  grid_r, grid_c = np.meshgrid(rows, cols, indexing='ij')
  out = ndimage.map_coordinates(img.data, [grid_r, grid_c], order=1, mode='nearest')
  return GrayImage(np.clip(out, 0.0, 1.0))


def working_size(width: int, height: int, long_side: int) -> tuple[int, int]:
  '''Scale (width, height) so the longer side is `long_side`, keeping aspect ratio and even sides.'''
  scale = long_side / max(width, height)
  def _even(v: float) -> int:
    return max(2, 2 * int(round(v / 2.0)))
  return _even(width * scale), _even(height * scale)


def to_working_resolution(img: GrayImage, long_side: int) -> GrayImage:
  w, h = working_size(img.width, img.height, long_side)
  return resize_bilinear(img, w, h)


def list_frames(image_dir: Path | str) -> list[Path]:
  image_dir = Path(image_dir)
  if not image_dir.is_dir():
    raise FileNotFoundError(f'No such image directory: {image_dir}')
  frames = sorted(
    (p for p in image_dir.iterdir() if p.is_file() and p.suffix.lower() in FRAME_SUFFIXES),
    key=lambda p: p.name
  )
  log.debug(f'Found {len(frames)} frames in {image_dir}')
  return frames


def save_pgm(values: np.ndarray, path: Path | str, mode: str = 'minmax') -> Path:
  '''
  Write a 2-D field as an 8-bit PGM.

  Args:
    values: boolean or real 2-D array
    path: output file
    mode: 'binary' maps truthy cells to 255, 'minmax' scales linearly from min..max to 0..255
  '''
  path = Path(path)
  values = np.asarray(values)
  if mode == 'binary':
    pixels = np.where(values.astype(bool), 255, 0).astype(np.uint8)
  elif mode == 'minmax':
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    if span <= 0:
      pixels = np.zeros(values.shape, dtype=np.uint8)
    else:
      pixels = np.round((values - lo) / span * 255.0).astype(np.uint8)
  else:
    raise ValueError(f'Unknown PGM mode {mode}')
  path.parent.mkdir(parents=True, exist_ok=True)
  Image.fromarray(pixels).save(path, format='PPM')
  log.debug(f'Wrote {path}')
  return path
