import json

import numpy as np
import pytest

from photomesh import (Image, ShapeState, TriangleMesh, make_icosphere, photometric_loss,
                       project)
from photomesh.scenes import (NoiseSpec, OrbitRig, Panorama, SceneBundle, TextureSpec,
                              crop_panorama, load_scene, make_noise_panorama,
                              make_orbit_cameras, make_sequence, perturb_state, render,
                              save_scene, vertex_colors)
from photomesh.transform import SimilarityParams


class TestOrbitCameras:
    def test_four_azimuth_pattern(self):
        rig = OrbitRig(azimuths=4, elevations=(0.0,), radius=2.0, width=64, height=64)
        cams = make_orbit_cameras(rig)
        centers = np.array([c.center for c in cams])
        expect = np.array([[2, 0, 0], [0, 0, 2], [-2, 0, 0], [0, 0, -2]], dtype=float)
        assert np.abs(centers - expect).max() < 1e-9

    def test_origin_projects_to_principal_point(self):
        rig = OrbitRig(azimuths=6, elevations=(-10.0, 0.0, 20.0), radius=2.5,
                       width=96, height=96)
        for cam in make_orbit_cameras(rig):
            xy, depth = project(np.zeros(3), cam)
            assert np.abs(xy - [cam.cx, cam.cy]).max() < 1e-6
            assert depth == pytest.approx(2.5)

    def test_adjacent_azimuth_rotation_is_15_degrees(self):
        rig = OrbitRig(azimuths=24, elevations=(0.0,), radius=2.5, width=64, height=64)
        cams = make_orbit_cameras(rig)
        for a, b in zip(cams[:-1], cams[1:]):
            rel = a.rotation @ b.rotation.T
            angle = np.degrees(np.arccos(np.clip((np.trace(rel) - 1) / 2, -1, 1)))
            assert angle == pytest.approx(15.0, abs=1e-9)

    def test_shared_intrinsics(self):
        cams = make_orbit_cameras(OrbitRig())
        assert len(cams) == 72
        assert all(c.intrinsics_match(cams[0]) for c in cams)

    def test_rig_validation(self):
        with pytest.raises(ValueError):
            OrbitRig(azimuths=1)
        with pytest.raises(ValueError):
            OrbitRig(radius=0.8)


class TestRender:
    def test_empty_mesh_returns_background(self):
        rig = OrbitRig(azimuths=4, elevations=(0.0,), width=48, height=48)
        cam = make_orbit_cameras(rig)[0]
        rng = np.random.default_rng(0)
        bg = Image(rng.random((48, 48, 3)))
        out = render(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))), cam, bg)
        assert np.array_equal(out.pixels, bg.pixels)

    def test_fullscreen_triangle_constant_color(self):
        from photomesh import Camera

        cam = Camera(fx=10, fy=10, cx=16, cy=16, rotation=np.eye(3),
                     translation=np.zeros(3), width=32, height=32)
        mesh = TriangleMesh([[-40, -40, 2.0], [40, -40, 2.0], [0, 60, 2.0]],
                            [[0, 1, 2]], colors=np.tile([0.3, 0.6, 0.9], (3, 1)))
        bg = Image(np.zeros((32, 32, 3)))
        out = render(mesh, cam, bg)
        assert np.abs(out.pixels - [0.3, 0.6, 0.9]).max() < 1e-9

    def test_resampled_colors_match_interpolation(self):
        from photomesh import visible_samples
        from photomesh.image import sample_bilinear_many
        from photomesh.intersect import barycentric_points

        mesh = make_icosphere(2)
        mesh = mesh.with_colors(vertex_colors(mesh.vertices, TextureSpec(kind="smooth"), 3))
        rig = OrbitRig(azimuths=4, elevations=(0.0,), width=64, height=64)
        cam = make_orbit_cameras(rig)[0]
        bg = Image(np.full((64, 64, 3), 0.5))
        img = render(mesh, cam, bg)
        samples = visible_samples(mesh, cam, [cam])
        sampled = sample_bilinear_many(img, samples.pixels)
        expect = barycentric_points(mesh.colors, mesh.faces, samples.face_indices,
                                    samples.alphas)
        assert np.abs(sampled - expect).max() < 1.0 / 255


class TestCropPanorama:
    def test_constant_panorama_gives_constant_crop(self):
        pano = Panorama(Image(np.full((64, 128, 3), 0.7)))
        cam = make_orbit_cameras(OrbitRig(azimuths=4, elevations=(10.0,),
                                          width=48, height=48))[1]
        out = crop_panorama(pano, cam)
        assert np.abs(out.pixels - 0.7).max() < 1e-12

    def test_bright_spot_at_looked_at_direction(self):
        # single bright pixel at longitude 0, latitude 0 <-> direction (0,0,1)
        px = np.zeros((128, 256, 3))
        px[64, 128] = 1.0
        # blur a little so bilinear sampling sees it
        px[63:66, 127:130] = 1.0
        pano = Panorama(Image(px))
        from photomesh import look_at

        cam = look_at(np.array([0.0, 0.0, -2.0]), np.array([0.0, 0.0, 10.0]),
                      np.array([0, 1.0, 0]), fx=40, fy=40, cx=24, cy=24,
                      width=48, height=48)
        out = crop_panorama(pano, cam, fov_deg=90.0)
        j, i = np.unravel_index(np.argmax(out.pixels.sum(axis=2)), (48, 48))
        assert abs(i + 0.5 - 24.0) <= 1.0
        assert abs(j + 0.5 - 24.0) <= 1.0

    def test_yaw_rotation_shift_equivariance(self):
        # crops of yaw-rotated cameras agree after the exact angular remap of
        # the image columns (the "horizontal panorama shift" in tan space)
        pano = make_noise_panorama(seed=4, width=256, height=128, octaves=(4,))
        rig = OrbitRig(azimuths=16, elevations=(0.0,), width=64, height=64)
        cams = make_orbit_cameras(rig)
        a = crop_panorama(pano, cams[0]).pixels
        b = crop_panorama(pano, cams[1]).pixels
        w = 64
        f = (w / 2.0) / np.tan(np.deg2rad(45.0))
        delta = 2 * np.pi / 16
        row = w // 2
        cols_b = np.arange(10, w - 10) + 0.5
        phi = np.arctan((cols_b - w / 2) / f) + delta
        cols_a = w / 2 + f * np.tan(phi)
        ok = (cols_a > 0.5) & (cols_a < w - 0.5)
        i0 = np.floor(cols_a[ok] - 0.5).astype(int)
        fu = (cols_a[ok] - 0.5) - i0
        interp_a = (1 - fu[:, None]) * a[row, i0] + fu[:, None] * a[row, i0 + 1]
        err = np.abs(interp_a - b[row, cols_b[ok].astype(int)]).mean()
        base = np.abs(a[row, cols_b[ok].astype(int)] - b[row, cols_b[ok].astype(int)]).mean()
        assert err < 0.15 * base

    def test_fov_validation(self):
        pano = make_noise_panorama(seed=0, width=64, height=32)
        cam = make_orbit_cameras(OrbitRig(azimuths=4, elevations=(0.0,),
                                          width=16, height=16))[0]
        with pytest.raises(ValueError):
            crop_panorama(pano, cam, fov_deg=180.0)

    def test_aspect_invariant(self):
        with pytest.raises(ValueError):
            Panorama(Image(np.zeros((64, 100, 3))))


class TestTextures:
    def test_constant(self):
        v = np.random.default_rng(0).standard_normal((50, 3))
        c = vertex_colors(v, TextureSpec(kind="constant"))
        assert (c == c[0]).all()

    def test_checker_two_tone(self):
        v = np.random.default_rng(1).standard_normal((200, 3))
        spec = TextureSpec(kind="checker", scale=2.0)
        c = vertex_colors(v, spec)
        uniq = np.unique(c, axis=0)
        assert len(uniq) == 2

    def test_noise_amp_adds_variation(self):
        v = np.random.default_rng(2).standard_normal((100, 3))
        c = vertex_colors(v, TextureSpec(kind="constant", noise_amp=0.1), seed=5)
        assert np.std(c) > 0.01


class TestPerturbState:
    def test_zero_sigma_identity(self):
        state = ShapeState(np.arange(4.0), SimilarityParams(0.1, np.ones(3), np.ones(3)))
        out = perturb_state(state, NoiseSpec(sigma=0.0, seed=9))
        assert np.array_equal(out.to_vector(), state.to_vector())

    def test_same_seed_scales_same_direction(self):
        state = ShapeState(np.zeros(4))
        a = perturb_state(state, NoiseSpec(sigma=0.06, seed=3))
        b = perturb_state(state, NoiseSpec(sigma=0.12, seed=3))
        da = a.transform.to_vector() - state.transform.to_vector()
        db = b.transform.to_vector() - state.transform.to_vector()
        assert np.abs(db - 2 * da).max() < 1e-15

    def test_optional_code_noise(self):
        state = ShapeState(np.zeros(4))
        out = perturb_state(state, NoiseSpec(sigma=0.1, seed=1, code_sigma=0.05))
        assert np.abs(out.code).max() > 0

    def test_sigma_validation(self):
        with pytest.raises(ValueError):
            NoiseSpec(sigma=-0.1)


class TestMakeSequence:
    def test_frame_count(self, small_prior):
        rig = OrbitRig(azimuths=5, elevations=(0.0, 20.0), width=48, height=48)
        pano = make_noise_panorama(seed=2, width=128, height=64)
        frames, gt_mesh, gt_state = make_sequence(
            small_prior, np.zeros(small_prior.n_code), rig, pano, "checker", seed=2)
        assert len(frames) == 10
        assert gt_mesh.colors is not None
        assert np.array_equal(gt_state.transform.to_vector(), np.zeros(7))

    def test_no_mask_leakage(self, small_scene):
        frames, _, _ = small_scene
        img, cam = frames[0]
        assert isinstance(img, Image)
        assert img.pixels.shape[2] == 3  # RGB only, nothing else in the bundle

    def test_gt_beats_perturbed_loss(self, small_prior, small_scene):
        frames, gt_mesh, gt_state = small_scene
        gt = small_prior.generate(gt_state)
        wins = 0
        trials = 20
        for seed in range(trials):
            noisy = small_prior.generate(perturb_state(gt_state, NoiseSpec(0.12, seed)))
            i, j = seed % len(frames), (seed + 1) % len(frames)
            (ia, ca), (ib, cb) = frames[i], frames[j]
            l_gt, _ = photometric_loss(ia, ib, ca, cb, gt)
            l_noisy, _ = photometric_loss(ia, ib, ca, cb, noisy)
            wins += l_gt < l_noisy
        assert wins == trials


class TestSceneBundle:
    def test_round_trip(self, small_prior, tmp_path):
        rig = OrbitRig(azimuths=3, elevations=(0.0,), width=32, height=32)
        pano = make_noise_panorama(seed=5, width=128, height=64)
        frames, gt_mesh, gt_state = make_sequence(
            small_prior, np.zeros(small_prior.n_code), rig, pano, "checker", seed=5)
        bundle = SceneBundle(frames, gt_mesh, gt_state, {"rig": rig.to_dict()})
        out = tmp_path / "scene"
        save_scene(bundle, out)
        assert (out / "cameras.json").exists()
        assert (out / "gt_mesh.obj").exists()
        assert (out / "spec.json").exists()
        back = load_scene(out)
        assert len(back.frames) == 3
        assert np.array_equal(back.gt_state.to_vector(), gt_state.to_vector())
        assert np.array_equal(back.gt_mesh.vertices, gt_mesh.vertices)
        # 8-bit PNG round trip quantizes pixel data
        assert np.abs(back.frames[0][0].pixels - frames[0][0].pixels).max() <= 0.5 / 255
        assert back.meta["rig"]["azimuths"] == 3

    def test_missing_cameras_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_scene(tmp_path)
