import numpy as np
import pytest

from moe_sim.errors import ContractViolation
from moe_sim.mechanics import ee_pose_at, equilibrium_solve
from moe_sim.models import CurrentModel, MaskCorruption
from moe_sim.sensing import (
    actuator_load,
    apply_mask,
    cast_capsules,
    corrupt_mask,
    finger_mask,
    pixel_rays,
    quantize_depth,
    render,
    render_depth,
)
from moe_sim.types import DepthFrame, HeadModel, Mask, RigidTransform, TendonState

CAMERA_AT_ORIGIN = RigidTransform.identity()


def _ball(z: float) -> HeadModel:
    return HeadModel(np.array([0.0, 0.0, z]), 0.08, 0.02, 800.0, 4000.0)


def test_rays_have_unit_depth(small_camera):
    rays = pixel_rays(small_camera)
    assert rays.shape == (256, 3)
    np.testing.assert_array_equal(rays[:, 2], 1.0)
    np.testing.assert_allclose(rays[8 * 16 + 8], [0.0, 0.0, 1.0])


def test_head_depth_on_the_optical_axis(small_camera):
    depth, is_finger = cast_capsules(small_camera, CAMERA_AT_ORIGIN, np.zeros((0, 2, 3)), 0.01, _ball(0.3))
    assert depth[8, 8] == pytest.approx(0.2)
    assert not is_finger.any()


def test_capsule_occludes_the_head(small_camera):
    segment = np.array([[[-0.05, 0.0, 0.1], [0.05, 0.0, 0.1]]])
    depth, is_finger = cast_capsules(small_camera, CAMERA_AT_ORIGIN, segment, 0.01, _ball(0.3))
    assert depth[8, 8] == pytest.approx(0.09)
    assert is_finger[8, 8]
    # rows far from the capsule still see the head
    assert not is_finger[0, 8]


def test_capsule_end_caps_are_round(small_camera):
    segment = np.array([[[0.0, 0.0, 0.2], [0.0, 0.0, 0.3]]])
    depth, is_finger = cast_capsules(small_camera, CAMERA_AT_ORIGIN, segment, 0.01)
    assert depth[8, 8] == pytest.approx(0.19)
    assert is_finger[8, 8]


def test_quantize_clips_to_valid_range(camera):
    depth = np.array([[0.05, 0.0704, 0.2506], [0.5, 0.6, np.inf]])
    frame = quantize_depth(camera, depth)
    np.testing.assert_array_equal(frame.depth, [[0, 70, 251], [500, 0, 0]])
    assert frame.depth.dtype == np.dtype("<u2")


def test_quantize_noise_is_seeded(camera):
    depth = np.full((4, 4), 0.2)
    a = quantize_depth(camera, depth, noise_mm=2.0, seed=3)
    b = quantize_depth(camera, depth, noise_mm=2.0, seed=3)
    np.testing.assert_array_equal(a.depth, b.depth)
    assert not np.all(a.depth == 200)


def test_render_sees_fingers_from_the_wrist(camera, finger, head):
    pose = ee_pose_at(head, (0.0, 0.0, -1.0), head.outer_radius + 0.2)
    states, _, _ = equilibrium_solve(finger, [0.0] * 4, None, pose)
    frame, mask = render(camera, finger, states, head, pose, noise_mm=0.0)
    assert frame.shape == (camera.height, camera.width)
    assert mask.count() > 0
    assert np.any(frame.depth[mask.bits] > 0)


def test_depth_and_mask_agree_with_render(camera, finger, head):
    pose = ee_pose_at(head, (0.0, 0.0, -1.0), head.outer_radius + 0.2)
    states, _, _ = equilibrium_solve(finger, [0.01, 0.0, 0.01, 0.0], None, pose)
    frame, mask = render(camera, finger, states, head, pose, noise_mm=0.0)
    depth = render_depth(camera, finger, states, head, pose, noise_mm=0.0)
    np.testing.assert_array_equal(depth.depth, frame.depth)
    np.testing.assert_array_equal(finger_mask(camera, finger, states, head, pose).bits, mask.bits)


def test_apply_mask_zeroes_background():
    frame = DepthFrame(np.full((3, 3), 120))
    mask = Mask(np.eye(3, dtype=bool))
    masked = apply_mask(frame, mask)
    assert masked.masked
    np.testing.assert_array_equal(masked.depth, 120 * np.eye(3, dtype=int))


@pytest.mark.parametrize("seed", range(5))
def test_masking_law_on_random_frames(seed):
    rng = np.random.default_rng(seed)
    frame = DepthFrame(rng.integers(0, 2000, size=(64, 64)))
    mask = Mask(rng.uniform(size=(64, 64)) < 0.4)
    masked = apply_mask(frame, mask)
    np.testing.assert_array_equal(masked.depth, np.where(mask.bits, frame.depth, 0))
    np.testing.assert_array_equal(apply_mask(masked, mask).depth, masked.depth)
    np.testing.assert_array_equal(apply_mask(frame, Mask(np.ones((64, 64)))).depth, frame.depth)
    assert not np.any(apply_mask(frame, Mask(np.zeros((64, 64)))).depth)


def test_apply_mask_requires_matching_shape():
    with pytest.raises(ContractViolation):
        apply_mask(DepthFrame(np.zeros((3, 3))), Mask(np.zeros((4, 3), dtype=bool)))


def _square_mask():
    bits = np.zeros((9, 9), dtype=bool)
    bits[3:6, 3:6] = True
    return Mask(bits)


def test_dilate_and_erode():
    mask = _square_mask()
    assert corrupt_mask(mask, MaskCorruption.DILATE, 1).count() == 25
    assert corrupt_mask(mask, MaskCorruption.ERODE, 1).count() == 1
    np.testing.assert_array_equal(corrupt_mask(mask, MaskCorruption.DILATE, 0).bits, mask.bits)


def test_flip_changes_exact_fraction():
    mask = _square_mask()
    flipped = corrupt_mask(mask, MaskCorruption.FLIP, 0.1, seed=2)
    assert int(np.sum(flipped.bits != mask.bits)) == round(0.1 * 81)
    again = corrupt_mask(mask, MaskCorruption.FLIP, 0.1, seed=2)
    np.testing.assert_array_equal(flipped.bits, again.bits)


def test_full_flip_is_the_complement():
    mask = _square_mask()
    np.testing.assert_array_equal(corrupt_mask(mask, MaskCorruption.FLIP, 1.0, seed=0).bits, ~mask.bits)


def test_dilating_one_pixel_gives_a_block():
    bits = np.zeros((5, 5), dtype=bool)
    bits[2, 2] = True
    expected = np.zeros((5, 5), dtype=bool)
    expected[1:4, 1:4] = True
    np.testing.assert_array_equal(corrupt_mask(Mask(bits), MaskCorruption.DILATE, 1).bits, expected)


@pytest.mark.parametrize("mode, magnitude", [(MaskCorruption.FLIP, 1.5), (MaskCorruption.DILATE, -1.0)])
def test_corruption_magnitude_is_checked(mode, magnitude):
    with pytest.raises(ContractViolation):
        corrupt_mask(_square_mask(), mode, magnitude)


def test_actuator_load_from_pair_tension():
    tendons = TendonState(np.array([1.0, 0.5, 0.0, 0.0, 0.02, 0.0, 3.0, 0.0]), np.zeros(4))
    q = actuator_load(tendons, CurrentModel(k_s=2.0, deadband=0.05)).q
    np.testing.assert_allclose(q, [0.725, 0.0, 0.0, 1.475])


def test_actuator_load_rejects_negative_tension():
    tendons = TendonState(np.array([-1.0] + [0.0] * 7), np.zeros(4))
    with pytest.raises(ContractViolation):
        actuator_load(tendons, CurrentModel())


def test_actuator_noise_is_seeded_and_non_negative():
    tendons = TendonState(np.full(8, 0.5), np.zeros(4))
    model = CurrentModel(noise_sigma=0.05)
    a = actuator_load(tendons, model, seed=9).q
    np.testing.assert_array_equal(a, actuator_load(tendons, model, seed=9).q)
    assert np.all(a >= 0.0)


def test_straight_fingers_are_slack(finger):
    _, _, tendons = equilibrium_solve(finger, [0.0] * 4, None)
    np.testing.assert_array_equal(actuator_load(tendons, CurrentModel()).q, np.zeros(4))
