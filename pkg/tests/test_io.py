import numpy as np
import pytest

from hierpool import io
from hierpool.bow import SparseHistogram
from hierpool.hier import Pose


def test_bow_roundtrip(tmp_path):
    frames = [(0, SparseHistogram.from_words([3, 1, 3])), (7, SparseHistogram.from_pairs([(2, 2.5)]))]
    io.write_bow(tmp_path / "b.txt", frames)
    assert (tmp_path / "b.txt").read_text() == "0 1:1 3:2\n7 2:2.5\n"
    back = io.read_bow(tmp_path / "b.txt")
    assert [f for f, _ in back] == [0, 7]
    assert all(a == b for (_, a), (_, b) in zip(frames, back))


@pytest.mark.parametrize("line", ["0 3:1 1:1", "0 1:0", "x 1:1", "0 1-1", "0"])
def test_bow_bad_lines(tmp_path, line):
    (tmp_path / "b.txt").write_text(line + "\n")
    with pytest.raises(io.DataError):
        io.read_bow(tmp_path / "b.txt")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="file not found"):
        io.read_bow(tmp_path / "nope.txt")


def test_kitti_poses(tmp_path):
    (tmp_path / "p.txt").write_text(
        "1 0 0 1.5 0 1 0 -2 0 0 1 3\n"
        "0 -1 0 10 1 0 0 20 0 0 1 30\n")
    poses = io.read_poses(tmp_path / "p.txt")
    assert poses[0].translation.tolist() == [1.5, -2.0, 3.0]
    assert poses[1].translation.tolist() == [10.0, 20.0, 30.0]
    assert poses[1].t == 1
    io.write_poses(tmp_path / "q.txt", poses)
    again = io.read_poses(tmp_path / "q.txt")
    assert np.allclose(again[1].rotation, poses[1].rotation)
    (tmp_path / "bad.txt").write_text("1 2 3\n")
    with pytest.raises(io.DataError):
        io.read_poses(tmp_path / "bad.txt")


def test_labels(tmp_path):
    io.write_labels(tmp_path / "l.txt", [(0, 3), (1, 3), (2, 4)])
    assert io.read_labels(tmp_path / "l.txt") == {0: 3, 1: 3, 2: 4}


def test_descriptors(tmp_path):
    b = np.array([[0, 255, 16], [1, 2, 3]], np.uint8)
    io.write_descriptors(tmp_path / "b.txt", b)
    assert (tmp_path / "b.txt").read_text().splitlines()[0] == "b:00ff10"
    assert np.array_equal(io.read_descriptors(tmp_path / "b.txt"), b)
    r = np.array([[0.5, -1.0], [2.0, 3.25]])
    io.write_descriptors(tmp_path / "r.txt", r)
    assert np.array_equal(io.read_descriptors(tmp_path / "r.txt"), r)
    (tmp_path / "m.txt").write_text("b:00ff\n0.5,1\n")
    with pytest.raises(io.DataError):
        io.read_descriptors(tmp_path / "m.txt")


def test_report(tmp_path):
    io.write_report(tmp_path / "r.csv", ["a", "b"], [(1, 0.5), ("x", np.float64(0.25))], {"seed": 3})
    text = (tmp_path / "r.csv").read_text().splitlines()
    assert text[0] == '# config: {"seed": 3}'
    assert text[1].startswith("# generated: ")
    config, rows = io.read_report(tmp_path / "r.csv")
    assert config == {"seed": 3}
    assert rows == [{"a": "1", "b": "0.5"}, {"a": "x", "b": "0.25"}]
    assert io.report_body(tmp_path / "r.csv") == "a,b\n1,0.5\nx,0.25\n"
