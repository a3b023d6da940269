import math
import logging
from dataclasses import dataclass
import numpy as np
from scipy import ndimage

from binloop.binmap import BinaryMap, popcount
from binloop.errors import DimensionMismatch
from binloop.imageio import GrayImage
from binloop.model import SaliencyParams

log = logging.getLogger(__name__)

## A RealField is a plain (height, width) float64 array: log amplitude, phase, residual, saliency.
RealField = np.ndarray


@dataclass(frozen=True)
class Spectrum:
  '''Un-normalized 2-D DFT of an image, stored as separate real and imaginary planes.'''
  re: np.ndarray
  im: np.ndarray

  def __post_init__(self):
    if self.re.shape != self.im.shape:
      raise DimensionMismatch(f'Spectrum planes differ: {self.re.shape} vs {self.im.shape}')

  @property
  def width(self) -> int:
    return self.re.shape[1]

  @property
  def height(self) -> int:
    return self.re.shape[0]

  def as_complex(self) -> np.ndarray:
    return self.re + 1j * self.im


def forward_dft(img: GrayImage) -> Spectrum:
  '''Forward transform without normalization; the inverse carries the 1/(W*H) factor.'''
  spec = np.fft.fft2(img.data, norm='backward')
  return Spectrum(spec.real.copy(), spec.imag.copy())


def inverse_dft(spec: Spectrum) -> np.ndarray:
  return np.fft.ifft2(spec.as_complex(), norm='backward')


def log_amplitude_and_phase(spec: Spectrum, log_epsilon: float) -> tuple[RealField, RealField]:
  amplitude = np.hypot(spec.re, spec.im)
  log_amp = np.log(amplitude + log_epsilon)
  phase = np.arctan2(spec.im, spec.re)  ## atan2(0, 0) is 0
  return log_amp, phase


def spectral_residual(log_amp: RealField, n: int) -> RealField:
  '''Log spectrum minus its n x n local mean, replicate borders.'''
  if n % 2 == 0:
    raise ValueError('Filter size must be odd')
  if n == 1:
    return np.zeros_like(log_amp)
  return log_amp - ndimage.uniform_filter(log_amp, size=n, mode='nearest')


def gaussian_smooth(field: RealField, sigma: float, radius: int | None = None) -> RealField:
  '''
  Gaussian smoothing with a normalized kernel truncated at `radius` (default ceil(3 sigma)),
  replicate borders. Radius 0 leaves the field untouched.
  '''
  if radius is None:
    radius = math.ceil(3.0 * sigma)
  if radius <= 0:
    return field.copy()
  return ndimage.gaussian_filter(field, sigma=sigma, mode='nearest', radius=radius)


def reconstruct_saliency(residual: RealField, phase: RealField, sigma: float, radius: int | None = None) -> RealField:
  if residual.shape != phase.shape:
    raise DimensionMismatch(f'Residual {residual.shape} and phase {phase.shape} differ')
  recovered = np.fft.ifft2(np.exp(residual + 1j * phase), norm='backward')
  energy = recovered.real ** 2 + recovered.imag ** 2
  return np.maximum(gaussian_smooth(energy, sigma, radius), 0.0)


def binarize(saliency: RealField, gamma: float) -> BinaryMap:
  threshold = float(saliency.mean()) * gamma
  return BinaryMap.from_bool(saliency > threshold)


def saliency_map(img: GrayImage, params: SaliencyParams) -> RealField:
  spec = forward_dft(img)
  log_amp, phase = log_amplitude_and_phase(spec, params.log_epsilon)
  residual = spectral_residual(log_amp, params.avg_filter_n)
  return reconstruct_saliency(residual, phase, params.gaussian_sigma)


def compute_binary_content(img: GrayImage, params: SaliencyParams) -> BinaryMap:
  '''Frame fingerprint: spectral-residual saliency thresholded at gamma times its mean.'''
  bmap = binarize(saliency_map(img, params), params.gamma)
  log.debug(f'Binary content {img.width}x{img.height}: {popcount(bmap)} salient cells')
  return bmap
