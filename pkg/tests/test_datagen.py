import hashlib
from dataclasses import replace

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from shaperank import datagen
from shaperank.datagen import FigureSpec, SelfIntersection
from shaperank.mesh import load_mesh, surface_area, validate


@pytest.fixture(scope="module")
def figure():
    return datagen.generate_figure(FigureSpec())


def test_figure_is_closed_genus_zero(figure):
    rep = validate(figure)
    assert rep.closed and rep.components == 1 and rep.euler_characteristic == 2
    assert rep.non_manifold_edges == 0 and rep.degenerate_faces == 0
    assert figure.n_vertices == 1000


def test_unbent_figure_mirror_symmetric():
    m = datagen.generate_figure(FigureSpec(grid_offset=False, target_vertices=None))
    assert datagen.is_symmetric(m)
    bent = datagen.generate_figure(FigureSpec(grid_offset=False, target_vertices=None,
                                              angles=(0.6, 0, 0, 0, 0, 0)))
    assert not datagen.is_symmetric(bent)


def test_rigid_motion_and_scale_applied(figure):
    q = tuple(Rotation.from_euler("xyz", [0.3, 0.2, 1.0]).as_quat())
    moved = datagen.generate_figure(replace(FigureSpec(), rotation=q, translation=(5.0, 0, -3.0)))
    assert surface_area(moved) == pytest.approx(surface_area(figure), rel=1e-9)
    big = datagen.generate_figure(replace(FigureSpec(), scale=2.0))
    assert surface_area(big) == pytest.approx(4 * surface_area(figure), rel=1e-9)


def test_same_seed_same_mesh_other_seed_remeshes(figure):
    again = datagen.generate_figure(FigureSpec())
    assert np.array_equal(again.vertices, figure.vertices)
    other = datagen.generate_figure(FigureSpec(seed=5))
    assert other.n_vertices == figure.n_vertices
    assert not np.array_equal(other.vertices, figure.vertices)
    assert surface_area(other) == pytest.approx(surface_area(figure), rel=0.03)


def test_spec_validation():
    with pytest.raises(ValueError):
        FigureSpec(radii=(1.0, 2.0, 3.0))
    with pytest.raises(ValueError):
        FigureSpec(scale=0.0)
    with pytest.raises(ValueError):
        FigureSpec(angles=(np.pi / 2, 0, 0, 0, 0, 0))


def test_self_intersection_detected():
    # elbows bent far inward fold the forearms back into the torso
    spec = FigureSpec(angles=(-1.4, -1.4, -1.5, -1.5, 0, 0), radii=(9.0, 8.0, 8.0, 6.5))
    with pytest.raises(SelfIntersection):
        datagen.check_self_intersection(datagen.skeleton(spec))
    datagen.check_self_intersection(datagen.skeleton(FigureSpec()))


def test_class_parameters():
    a = datagen.class_parameters(10, 0)
    assert a == datagen.class_parameters(10, 0)
    assert a != datagen.class_parameters(10, 1)
    scales = sorted(c["scale"] for c in a)
    assert np.allclose(scales, np.linspace(0.85, 1.15, 10))
    la, lv = np.array([datagen._size_proxy(c) for c in a]).T
    la = la + 2 * np.log([c["scale"] for c in a])
    gaps = np.abs(la[:, None] - la[None])[np.triu_indices(10, 1)]
    assert gaps.min() > 0.02


def test_pose_parameters():
    rigid = datagen.pose_parameters(5, "rigid_poses", 0)
    assert rigid[0]["rotation"] is None and rigid[0]["translation"] == (0.0, 0.0, 0.0)
    for p in rigid:
        assert p["angles"] == (0.0,) * 6
    for p in rigid[1:]:
        assert np.linalg.norm(p["rotation"]) == pytest.approx(1.0)
    bent = datagen.pose_parameters(6, "bent_poses", 0, max_bend=0.8)
    assert bent[0]["angles"] == (0.0,) * 6
    assert all(max(abs(x) for x in p["angles"]) <= 0.8 for p in bent)
    assert all(p["rotation"] is None for p in bent)
    with pytest.raises(ValueError):
        datagen.pose_parameters(3, "wobbly", 0)


def test_generate_benchmark_manifest(tmp_path):
    man = datagen.generate_benchmark(2, 2, "bent_poses", 3, tmp_path / "a")
    assert man.ids == ["b3_c00_p00", "b3_c00_p01", "b3_c01_p00", "b3_c01_p01"]
    assert man.classes == ["class00", "class00", "class01", "class01"]
    assert man.poses == ["pose00", "pose01", "pose00", "pose01"]
    for path, entry in zip(man.paths(), man.entries):
        assert hashlib.sha256(path.read_bytes()).hexdigest() == entry[4]
        assert validate(load_mesh(path)).closed
    back = datagen.read_manifest(tmp_path / "a" / "manifest.csv")
    assert back.entries == man.entries and back.seed == 3 and back.mode == "bent_poses"
    # same seed, byte-identical files
    again = datagen.generate_benchmark(2, 2, "bent_poses", 3, tmp_path / "b")
    assert [e[4] for e in again.entries] == [e[4] for e in man.entries]
    assert (tmp_path / "a" / "manifest.csv").read_bytes() == (tmp_path / "b" / "manifest.csv").read_bytes()


def test_rigid_benchmark_poses_are_rigid_copies(tmp_path):
    man = datagen.generate_benchmark(2, 3, "rigid_poses", 0, tmp_path, prefix="t")
    meshes = [load_mesh(p) for p in man.paths()]
    assert man.ids[0] == "t_c00_p00"
    for c in range(2):
        base = surface_area(meshes[3 * c])
        for p in (1, 2):
            assert surface_area(meshes[3 * c + p]) == pytest.approx(base, rel=0.03)


def test_generate_benchmark_errors(tmp_path):
    with pytest.raises(ValueError):
        datagen.generate_benchmark(1, 2, "bent_poses", 0, tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        datagen.generate_benchmark(2, 2, "bent_poses", 0, blocker / "sub")


def test_read_manifest_requires_columns(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("model_id,path\na,a.off\n")
    with pytest.raises(ValueError, match="columns"):
        datagen.read_manifest(p)
