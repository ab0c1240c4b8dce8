import numpy as np
import pytest

from chromacc.datasets import (DataError, DatasetManifest, LabeledSample,
                               WORKING_RES, leave_one_camera_out,
                               load_dataset, write_manifest)
from chromacc.floatmap import write_pfm
from chromacc.sensor import CameraProfile, CaptureMeta


def _profile(name, seed=0):
    rng = np.random.default_rng(seed)
    c1 = np.eye(3) + 0.05 * rng.normal(size=(3, 3))
    c2 = np.eye(3) + 0.05 * rng.normal(size=(3, 3))
    return CameraProfile(c1, c2, 2856.0, 6504.0, name=name)


def _write_image(path, shape=(6, 8), seed=0):
    rng = np.random.default_rng(seed)
    write_pfm(path, rng.uniform(0.1, 1.0, size=shape + (3,)))


def _manifest_fixture(tmp_path, n_per_camera=2, cameras=("cam_a", "cam_b")):
    manifest = DatasetManifest()
    ell = np.array([1.0, 2.0, 1.0]) / np.sqrt(6.0)
    for ci, cam in enumerate(cameras):
        manifest.profiles[cam] = _profile(cam, seed=ci)
        for i in range(n_per_camera):
            img = tmp_path / f"{cam}_{i}.pfm"
            _write_image(img, seed=10 * ci + i)
            meta = CaptureMeta(iso=100.0 + i, aperture=2.8,
                               exposure_time=0.01, baseline_exposure=0.5,
                               baseline_noise=1.5, illuminant=ell, camera=cam)
            manifest.samples.append(LabeledSample(
                image_path=str(img), camera=cam, illuminant=ell,
                scene=f"scene_{i}", meta=meta))
    return manifest


def test_manifest_round_trip(tmp_path):
    manifest = _manifest_fixture(tmp_path)
    path = tmp_path / "data.jsonl"
    write_manifest(manifest, path)
    back = load_dataset(path)
    assert sorted(back.profiles) == ["cam_a", "cam_b"]
    for cam in back.profiles:
        assert np.allclose(back.profiles[cam].c1, manifest.profiles[cam].c1)
        assert np.allclose(back.profiles[cam].c2, manifest.profiles[cam].c2)
        assert back.profiles[cam].q1 == 2856.0
    assert len(back.samples) == len(manifest.samples)
    for got, want in zip(back.samples, manifest.samples):
        assert got.camera == want.camera
        assert got.scene == want.scene
        assert np.allclose(got.illuminant, want.illuminant)
        assert np.allclose(np.linalg.norm(got.illuminant), 1.0)
        assert got.meta.iso == want.meta.iso
        assert got.meta.baseline_exposure == want.meta.baseline_exposure
        img = got.load(working_res=None)
        assert img.pixels.shape == (6, 8, 3)


def test_load_resizes_to_working_res(tmp_path):
    manifest = _manifest_fixture(tmp_path, n_per_camera=1)
    sample = manifest.samples[0]
    img = sample.load()
    assert img.pixels.shape == WORKING_RES + (3,)
    img = sample.load(working_res=(4, 6))
    assert img.pixels.shape == (4, 6, 3)
    assert np.all(img.pixels >= 0)


def test_mask_loaded_and_resized(tmp_path):
    _write_image(tmp_path / "img.pfm", shape=(8, 8))
    mask = np.zeros((8, 8))
    mask[:4] = 1.0
    write_pfm(tmp_path / "mask.pfm", mask)
    sample = LabeledSample(image_path=str(tmp_path / "img.pfm"),
                           camera="c", illuminant=np.ones(3) / np.sqrt(3.0),
                           mask_path=str(tmp_path / "mask.pfm"))
    img = sample.load(working_res=None)
    assert img.mask.dtype == bool
    assert np.array_equal(img.mask, mask > 0.5)
    small = sample.load(working_res=(4, 4))
    assert small.mask.shape == (4, 4)
    assert small.mask[0].all() and not small.mask[-1].any()


def test_mask_shape_mismatch_rejected(tmp_path):
    _write_image(tmp_path / "img.pfm", shape=(8, 8))
    write_pfm(tmp_path / "mask.pfm", np.ones((4, 4)))
    sample = LabeledSample(image_path=str(tmp_path / "img.pfm"),
                           camera="c", illuminant=np.ones(3) / np.sqrt(3.0),
                           mask_path=str(tmp_path / "mask.pfm"))
    with pytest.raises(DataError):
        sample.load()


def test_gray_file_rejected_as_image(tmp_path):
    write_pfm(tmp_path / "img.pfm", np.ones((4, 4)))
    sample = LabeledSample(image_path=str(tmp_path / "img.pfm"),
                           camera="c", illuminant=np.ones(3) / np.sqrt(3.0))
    with pytest.raises(DataError):
        sample.load()


def test_non_unit_illuminant_normalized_with_warning(tmp_path):
    with pytest.warns(UserWarning, match="re-normalized"):
        sample = LabeledSample(image_path="x.pfm", camera="c",
                               illuminant=[2.0, 2.0, 2.0])
    assert np.allclose(sample.illuminant, np.ones(3) / np.sqrt(3.0))
    with pytest.raises(DataError):
        LabeledSample(image_path="x.pfm", camera="c",
                      illuminant=[1.0, 0.0, -1.0])


def test_manifest_parse_errors(tmp_path):
    img = tmp_path / "a.pfm"
    _write_image(img)
    profile_line = ('{"type": "camera", "camera": "c", "q1": 2856, '
                    '"q2": 6504, "c1": %s, "c2": %s}'
                    % (np.eye(3).tolist(), np.eye(3).tolist()))
    image_line = ('{"type": "image", "camera": "c", "image": "a.pfm", '
                  '"illuminant": [0.5, 0.7071067811865476, 0.5]}')

    def check(text, match):
        path = tmp_path / "m.jsonl"
        path.write_text(text)
        with pytest.raises(DataError, match=match):
            load_dataset(path)

    check("not json\n", "invalid JSON")
    check('{"type": "mystery"}\n', "unknown record type")
    check(image_line + "\n", "no profile record")
    check(profile_line + "\n"
          + '{"type": "image", "camera": "c", "image": "a.pfm"}\n',
          "missing key")
    check(profile_line + "\n" + image_line.replace("a.pfm", "gone.pfm")
          + "\n", "missing file")
    # comments and blank lines are fine; line numbers point at the offender
    check("# header\n\n" + profile_line + "\nnope\n", "4")
    with pytest.raises(DataError):
        load_dataset(tmp_path / "absent.jsonl")


def test_check_files_can_be_disabled(tmp_path):
    manifest = _manifest_fixture(tmp_path, n_per_camera=1)
    path = tmp_path / "m.jsonl"
    write_manifest(manifest, path)
    (tmp_path / "cam_a_0.pfm").unlink()
    with pytest.raises(DataError):
        load_dataset(path)
    back = load_dataset(path, check_files=False)
    assert len(back.samples) == 2


def test_meta_round_trips_through_manifest(tmp_path):
    manifest = _manifest_fixture(tmp_path, n_per_camera=1)
    path = tmp_path / "m.jsonl"
    write_manifest(manifest, path)
    got = load_dataset(path).samples[0].meta
    want = manifest.samples[0].meta
    for key in ("iso", "aperture", "exposure_time", "baseline_exposure",
                "baseline_noise"):
        assert getattr(got, key) == getattr(want, key)
    assert got.camera == "cam_a"
    assert np.allclose(got.illuminant, want.illuminant)


def test_leave_one_camera_out_excludes_shared_scenes(tmp_path):
    manifest = _manifest_fixture(tmp_path, n_per_camera=2,
                                 cameras=("cam_a", "cam_b", "cam_c"))
    # cam_c gets one extra sample without a scene id
    extra = tmp_path / "cam_c_x.pfm"
    _write_image(extra, seed=99)
    manifest.samples.append(LabeledSample(
        image_path=str(extra), camera="cam_c",
        illuminant=[0.5, 0.7071067811865476, 0.5], scene=None))
    train, test = leave_one_camera_out(manifest, "cam_a")
    assert all(s.camera == "cam_a" for s in test)
    assert len(test) == 2
    # every other camera shares scene_0/scene_1, so only the sceneless
    # sample survives into training
    assert [s.scene for s in train] == [None]
    assert all(s.camera != "cam_a" for s in train)

    train, test = leave_one_camera_out(manifest, "cam_c")
    assert len(test) == 3
    assert all(s.camera != "cam_c" for s in train)
    assert len(train) == 0  # scene_0 and scene_1 both appear in test


def test_leave_one_camera_out_validation(tmp_path):
    manifest = _manifest_fixture(tmp_path, cameras=("solo",))
    with pytest.raises(ValueError, match="at least 2"):
        leave_one_camera_out(manifest, "solo")
    manifest = _manifest_fixture(tmp_path)
    with pytest.raises(ValueError, match="unknown camera"):
        leave_one_camera_out(manifest, "cam_z")
