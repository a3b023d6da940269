import logging
import unittest
from pathlib import Path
from tempfile import TemporaryDirectory
import numpy as np
import pytest

from binloop.dataset import (
    DatasetManifest, GroundTruthPairs, PoseFormat, Sequence, Trajectory, ground_truth_pairs,
    load_poses, save_poses_kitti
)
from binloop.errors import DataError, EmptyFile, ParseError
from test.test_helpers import square_positions, write_frame


class TestLoadPoses(unittest.TestCase):
    def setUp(self):
        self.td = TemporaryDirectory()
        self.addCleanup(self.td.cleanup)
        self.dir = Path(self.td.name)

    def write(self, name, text):
        path = self.dir / name
        path.write_text(text)
        return path

    def test_kitti_translation(self):
        traj = load_poses(self.write('k.txt', '1 0 0 5 0 1 0 0 0 0 1 -2\n'), 'kitti')
        np.testing.assert_array_equal(traj.positions, [[5.0, 0.0, -2.0]])

    def test_tum_position(self):
        text = '# timestamp tx ty tz qx qy qz qw\n0.0 1.0 2.0 3.0 0 0 0 1\n\n0.1 4 5 6 0 0 0 1\n'
        traj = load_poses(self.write('t.txt', text), PoseFormat.TUM)
        np.testing.assert_array_equal(traj.positions, [[1, 2, 3], [4, 5, 6]])

    def test_wrong_token_count_names_line(self):
        path = self.write('bad.txt', '1 0 0 5 0 1 0 0 0 0 1 -2\n1 0 0 5 0 1 0 0 0 0 1\n')
        with self.assertRaises(ParseError) as ctx:
            load_poses(path, 'kitti')
        self.assertEqual(ctx.exception.line, 2)
        self.assertIn('bad.txt:2', str(ctx.exception))

    def test_non_numeric(self):
        with self.assertRaises(ParseError):
            load_poses(self.write('nan.txt', '1 0 0 x 0 1 0 0 0 0 1 -2\n'), 'kitti')

    def test_non_finite(self):
        with self.assertRaises(ParseError):
            load_poses(self.write('inf.txt', '1 0 0 inf 0 1 0 0 0 0 1 -2\n'), 'kitti')

    def test_empty_file(self):
        with self.assertRaises(EmptyFile):
            load_poses(self.write('empty.txt', '\n\n'), 'kitti')

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_poses(self.dir / 'missing.txt')

    def test_unknown_format(self):
        with self.assertRaises(ValueError):
            load_poses(self.write('k.txt', '1 0 0 5 0 1 0 0 0 0 1 -2\n'), 'euroc')


def test_kitti_writer_round_trips_exactly(tmp_path, rng):
    traj = Trajectory(rng.normal(scale=250.0, size=(40, 3)))
    back = load_poses(save_poses_kitti(traj, tmp_path / 'poses.txt'), 'kitti')
    np.testing.assert_array_equal(back.positions, traj.positions)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        Trajectory(np.array([[0.0, np.nan, 0.0]]))


class TestGroundTruthPairs(unittest.TestCase):
    def test_straight_line_has_no_loops(self):
        traj = Trajectory(np.column_stack([np.arange(50.0), np.zeros(50), np.zeros(50)]))
        self.assertEqual(len(ground_truth_pairs(traj, 0.5, 1)), 0)

    def test_square_returns_to_start(self):
        pairs = ground_truth_pairs(Trajectory(square_positions()), 1.0, 2)
        self.assertIn((4, 0), pairs)
        self.assertEqual(pairs.sorted(), [(4, 0)])

    def test_gap_longer_than_trajectory(self):
        self.assertEqual(len(ground_truth_pairs(Trajectory(square_positions()), 1.0, 10)), 0)

    def test_invalid_arguments(self):
        traj = Trajectory(square_positions())
        with self.assertRaises(ValueError):
            ground_truth_pairs(traj, 0.0, 2)
        with self.assertRaises(ValueError):
            ground_truth_pairs(traj, 1.0, 0)


def test_ground_truth_matches_double_loop(rng):
    positions = np.cumsum(rng.normal(size=(120, 3)), axis=0)
    positions[80:100] = positions[10:30] + rng.normal(scale=0.3, size=(20, 3))
    traj = Trajectory(positions)
    expected = set()
    for i in range(len(positions)):
        for j in range(i):
            if i - j >= 15 and np.linalg.norm(positions[i] - positions[j]) <= 2.0:
                expected.add((i, j))
    assert ground_truth_pairs(traj, 2.0, 15) == GroundTruthPairs(frozenset(expected))
    assert len(expected) > 0


class TestManifest(unittest.TestCase):
    def test_relative_paths_resolve_against_manifest(self):
        with TemporaryDirectory() as td:
            root = Path(td)
            path = root / 'seq.txt'
            path.write_text('# sequence 00\nimage_dir = image_0\npose_file=poses/00.txt\npose_format=tum\n')
            manifest = DatasetManifest.load(path)
            self.assertEqual(manifest.image_dir, root / 'image_0')
            self.assertEqual(manifest.pose_file, root / 'poses' / '00.txt')
            self.assertEqual(manifest.pose_format, PoseFormat.TUM)

    def test_bad_lines(self):
        with TemporaryDirectory() as td:
            path = Path(td) / 'seq.txt'
            path.write_text('image_dir=frames\njust words\n')
            with self.assertRaises(ParseError) as ctx:
                DatasetManifest.load(path)
            self.assertEqual(ctx.exception.line, 2)
            path.write_text('image_dir=frames\npose_format=euroc\n')
            with self.assertRaises(ParseError):
                DatasetManifest.load(path)
            path.write_text('pose_format=kitti\n')
            with self.assertRaises(ParseError):
                DatasetManifest.load(path)

    def test_save_load(self):
        with TemporaryDirectory() as td:
            root = Path(td)
            original = DatasetManifest(image_dir=root / 'frames', pose_file=root / 'poses.txt')
            loaded = DatasetManifest.load(original.save(root / 'seq.txt'))
            self.assertEqual(loaded, original)


def test_sequence_frames_and_trajectory(tmp_path, rng, caplog):
    frames_dir = tmp_path / 'frames'
    frames_dir.mkdir()
    for name in ['b.png', 'a.png', 'c.png']:
        write_frame(rng.random((10, 12)), frames_dir / name)
    save_poses_kitti(Trajectory(rng.normal(size=(2, 3))), tmp_path / 'poses.txt')
    seq = Sequence(DatasetManifest(image_dir=frames_dir, pose_file=tmp_path / 'poses.txt'))
    assert len(seq) == 3
    assert [p.name for p in seq.frames] == ['a.png', 'b.png', 'c.png']
    assert seq.load_frame(1).data.shape == (10, 12)
    with pytest.raises(IndexError):
        seq.frame_path(3)
    with caplog.at_level(logging.WARNING, logger='binloop.dataset'):
        assert len(seq.trajectory) == 2
    assert '2 poses for 3 frames' in caplog.text


def test_sequence_errors(tmp_path):
    empty = tmp_path / 'empty'
    empty.mkdir()
    with pytest.raises(DataError):
        Sequence(DatasetManifest(image_dir=empty))
    write_frame(np.zeros((4, 4)), empty / 'a.png')
    with pytest.raises(DataError):
        Sequence(DatasetManifest(image_dir=empty)).trajectory
    with pytest.raises(FileNotFoundError):
        Sequence.from_manifest(tmp_path / 'missing.txt')


if __name__ == '__main__':
    unittest.main()
