#!/usr/bin/env python3
import sys
import json
import logging
import argparse
from pathlib import Path
from pydantic import ValidationError

from binloop import __version__
from binloop.errors import DataError, DimensionMismatch, UsageError
from binloop.model import Configuration

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

## command-line flag (argparse dest) -> configuration key
FLAG_KEYS = {
  'manifest': 'manifest',
  'avg_filter_n': 'saliency.avg_filter_n',
  'gaussian_sigma': 'saliency.gaussian_sigma',
  'gamma': 'saliency.gamma',
  'long_side': 'saliency.long_side',
  'xi_min': 'retrieval.xi_min',
  'centroid_max': 'retrieval.centroid_max',
  'temporal_gap': 'retrieval.temporal_gap',
  'max_candidates': 'retrieval.max_candidates',
  'ratio': 'verify.ratio',
  'min_matches': 'verify.min_matches',
  'max_features': 'verify.max_features',
  'hessian_threshold': 'verify.hessian_threshold',
  'workers': 'verify.workers',
  'd_gt': 'ground_truth.d_gt',
  'min_gap': 'ground_truth.min_gap',
  'frame_tol': 'ground_truth.frame_tol',
  'detections': 'output.detections',
  'report': 'output.report',
  'debug_dir': 'output.debug_dir',
  'save_index': 'output.index',
}


class ArgumentParser(argparse.ArgumentParser):
  def error(self, message: str):
    self.print_usage(sys.stderr)
    self.exit(EXIT_USAGE, f'{self.prog}: error: {message}\n')


def setup_logging(args) -> None:
  logging.basicConfig(
    level=getattr(logging, args.log_level.upper(), logging.INFO),
    format='%(asctime)s - %(levelname)s - %(name)s - %(message)s'
  )
  if args.denoise_logging:
    logging.getLogger('PIL').setLevel(logging.WARNING)

def excepthook(exc_type, exc_value, exc_tb):
  log.critical(f"Uncaught exception {exc_type}", exc_info=(exc_type, exc_value, exc_tb))

def _config_flags() -> argparse.ArgumentParser:
  flags = ArgumentParser(add_help=False)
  g = flags.add_argument_group('configuration overrides')
  g.add_argument('-m', '--manifest', type=Path, help='Dataset manifest (key=value file)')
  g.add_argument('--avg-filter-n', type=int, help='Log-spectrum mean filter size (odd)')
  g.add_argument('--gaussian-sigma', type=float, help='Saliency smoothing sigma in pixels')
  g.add_argument('--gamma', type=float, help='Salient region extraction level')
  g.add_argument('--long-side', type=int, help='Working resolution, longer side in pixels')
  g.add_argument('--xi-min', type=float, help='Minimum similarity factor')
  g.add_argument('--centroid-max', type=float, help='Maximum centroid distance over the image diagonal')
  g.add_argument('--temporal-gap', type=int, help='Minimum frame distance of a loop pair')
  g.add_argument('--max-candidates', type=int, help='Candidates verified per frame')
  g.add_argument('--ratio', type=float, help='Descriptor ratio test threshold')
  g.add_argument('--min-matches', type=int, help='Matches needed to accept a loop')
  g.add_argument('--max-features', type=int, help='Keypoints kept per frame')
  g.add_argument('--hessian-threshold', type=float, help='Keypoint response threshold')
  g.add_argument('--workers', type=int, help='Verification threads')
  g.add_argument('--d-gt', type=float, help='Ground-truth distance radius in meters')
  g.add_argument('--min-gap', type=int, help='Ground-truth minimum frame gap')
  g.add_argument('--frame-tol', type=int, help='Frame tolerance when scoring detections')
  g.add_argument('--detections', type=Path, help='Detections CSV')
  g.add_argument('--report', type=Path, help='Report CSV')
  g.add_argument('--debug-dir', type=Path, help='Output directory of saliency-debug')
  return flags

def parse_arguments(argv: list[str] | None = None) -> argparse.Namespace:
  parser = ArgumentParser(
    prog='binloop',
    description='binloop - Loop closure detection from binary salient-region maps'
  )
  parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
  parser.add_argument(
    '-c', '--config',
    type=Path,
    help='Path to a JSON configuration file'
  )
  parser.add_argument(
    '-l', '--log-level',
    default='INFO',
    choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
    help='Set logging verbosity level'
  )
  parser.add_argument(
    '--denoise-logging',
    action='store_true',
    help='Reduce logging noise from dependencies'
  )
  parser.add_argument(
    '--no-progress',
    action='store_true',
    help='Hide the per-frame progress bar'
  )
  flags = _config_flags()
  sub = parser.add_subparsers(dest='command', required=True)
  p = sub.add_parser('detect', parents=[flags], help='Detect loop closures and write the detections CSV')
  p.add_argument('--save-index', type=Path, help='Also write the frame database to this file')
  p.set_defaults(func=cmd_detect)
  p = sub.add_parser('eval', parents=[flags], help='Score a detections CSV against pose ground truth')
  p.set_defaults(func=cmd_eval)
  p = sub.add_parser('saliency-debug', parents=[flags], help='Write saliency and binary maps of one frame')
  p.add_argument('frame', type=int, help='Frame index')
  p.set_defaults(func=cmd_saliency_debug)
  p = sub.add_parser('bench', parents=[flags], help='Time the pipeline stages and the similarity kernel')
  p.add_argument('--bench-seconds', type=float, default=0.5, help='Minimum duration of the throughput measurement')
  p.set_defaults(func=cmd_bench)
  p = sub.add_parser('sweep', parents=[flags], help='Precision and recall over several xi_min values')
  p.add_argument('--xi-values', type=float, nargs='+', default=[0.3, 0.4, 0.5, 0.6, 0.7],
                 help='xi_min values to evaluate')
  p.set_defaults(func=cmd_sweep)
  return parser.parse_args(argv)

def build_configuration(args: argparse.Namespace) -> Configuration:
  '''File values first, then every flag given on the command line.'''
  if args.config is not None and not args.config.exists():
    log.warning(f'Configuration file {args.config} not found, using defaults')
  cfg = Configuration(args.config)
  for dest, key in FLAG_KEYS.items():
    value = getattr(args, dest, None)
    if value is not None:
      cfg.set(key, value)
  return cfg

def _open_sequence(cfg: Configuration):
  from binloop.dataset import Sequence
  if cfg.manifest is None:
    raise UsageError('No dataset manifest given (use --manifest or the configuration file)')
  return Sequence.from_manifest(cfg.manifest)

def _truth(cfg: Configuration):
  from binloop.dataset import DatasetManifest, ground_truth_pairs, load_poses
  if cfg.manifest is None:
    raise UsageError('No dataset manifest given (use --manifest or the configuration file)')
  manifest = DatasetManifest.load(cfg.manifest)
  if manifest.pose_file is None:
    raise DataError(f'{cfg.manifest}: the manifest names no pose file')
  traj = load_poses(manifest.pose_file, manifest.pose_format)
  gt = cfg.ground_truth
  return ground_truth_pairs(traj, gt.d_gt, gt.min_gap)

def _print_timing(timer) -> None:
  mean = timer.mean_time_ms()
  if mean is None:
    return
  print(f'Mean time per frame: {mean:.2f} ms over {timer.frames} frames')
  for stage, ms in sorted(timer.per_frame_ms().items()):
    print(f'  {stage:<14}{ms:.2f} ms')

def cmd_detect(cfg: Configuration, args: argparse.Namespace) -> int:
  from binloop.evaluation import write_detections_csv, write_timing
  from binloop.pipeline import LoopDetector
  detector = LoopDetector(_open_sequence(cfg), cfg.pipeline)
  detections = detector.run(progress=not args.no_progress)
  out = write_detections_csv(detections, cfg.output.detections)
  write_timing(detector.timer, out)
  log.info(f'Wrote {len(detections)} detections to {out}')
  if cfg.output.index is not None:
    detector.save_index(cfg.output.index)
  _print_timing(detector.timer)
  return EXIT_OK

def cmd_eval(cfg: Configuration, args: argparse.Namespace) -> int:
  from binloop.evaluation import read_detections_csv, read_timing, score
  detections = read_detections_csv(cfg.output.detections)
  truth = _truth(cfg)
  mean_ms, stages = read_timing(cfg.output.detections)
  report = score(detections, truth, cfg.ground_truth.frame_tol, mean_ms, stages)
  print(report.summary())
  out = report.write_csv(cfg.output.report)
  log.info(f'Wrote report to {out}')
  return EXIT_OK

def cmd_saliency_debug(cfg: Configuration, args: argparse.Namespace) -> int:
  from binloop.imageio import save_pgm, to_working_resolution
  from binloop.saliency import binarize, saliency_map
  seq = _open_sequence(cfg)
  if not 0 <= args.frame < len(seq):
    raise UsageError(f'Frame index {args.frame} out of range 0..{len(seq) - 1}')
  small = to_working_resolution(seq.load_frame(args.frame), cfg.saliency.long_side)
  sal = saliency_map(small, cfg.saliency)
  bmap = binarize(sal, cfg.saliency.gamma)
  stem = cfg.output.debug_dir / f'frame_{args.frame:06d}'
  sal_path = save_pgm(sal, stem.with_name(stem.name + '_saliency.pgm'), 'minmax')
  bin_path = save_pgm(bmap.to_bool(), stem.with_name(stem.name + '_binary.pgm'), 'binary')
  print(f'{sal_path}\n{bin_path}')
  return EXIT_OK

def cmd_bench(cfg: Configuration, args: argparse.Namespace) -> int:
  from binloop.pipeline import LoopDetector, random_maps, similarity_throughput
  detector = LoopDetector(_open_sequence(cfg), cfg.pipeline)
  detector.run(progress=not args.no_progress)
  _print_timing(detector.timer)
  maps = [rec.map for rec in detector.database]
  if len(maps) < 2:
    maps = random_maps(64)
  rate = similarity_throughput(maps, args.bench_seconds)
  print(f'Similarity throughput: {rate:,.0f} comparisons/s on {maps[0].width}x{maps[0].height} maps')
  return EXIT_OK

def cmd_sweep(cfg: Configuration, args: argparse.Namespace) -> int:
  from binloop.evaluation import precision_recall_sweep
  from binloop.pipeline import LoopDetector
  truth = _truth(cfg)
  detector = LoopDetector(_open_sequence(cfg), cfg.pipeline, memoize_maps=True)
  runs = {}
  for xi in sorted(set(args.xi_values)):
    detector.reset(cfg.retrieval.model_copy(update={'xi_min': xi}))
    runs[xi] = detector.run(progress=not args.no_progress)
  print('xi_min,tp,fp,recall_pct,precision_pct')
  for xi, report in precision_recall_sweep(runs, truth, cfg.ground_truth.frame_tol):
    recall = '' if report.recall_rate is None else f'{report.recall_rate:.3f}'
    precision = '' if report.precision is None else f'{report.precision:.3f}'
    print(f'{xi:.3f},{report.true_positives},{report.false_positives},{recall},{precision}')
  return EXIT_OK

def main(argv: list[str] | None = None) -> int:
  args = parse_arguments(argv)
  setup_logging(args)
  sys.excepthook = excepthook
  try:
    cfg = build_configuration(args)
    return args.func(cfg, args)
  except (ValidationError, json.JSONDecodeError) as e:
    log.error(f'Invalid configuration: {e}')
    return EXIT_USAGE
  except UsageError as e:
    log.error(f'{e}')
    return EXIT_USAGE
  except (DataError, DimensionMismatch, FileNotFoundError) as e:
    log.error(f'{e}')
    return EXIT_DATA


if __name__ == '__main__':
  sys.exit(main())
