import numpy as np
import pytest

from kimodo.motion_repr import RawMotion
from kimodo.rotations import axis_angle_to_matrix, matrix_to_rotation_6d
from kimodo.skeleton import canonical_skeleton, forward_kinematics


@pytest.fixture(scope="session")
def skeleton():
    return canonical_skeleton()


@pytest.fixture(scope="session")
def untrained_bundle(skeleton):
    """ModelBundle around an untrained tiny model: good enough for pipeline
    determinism/shape/constraint-exactness tests that need no learning."""
    import torch

    from kimodo.denoiser import DenoiserConfig, HashedTextEmbedder, MotionDenoiser
    from kimodo.diffusion import NoiseSchedule
    from kimodo.motion_repr import CodecConfig, encode, fit_normalization, standardize
    from kimodo.synthetic import generate_family
    from kimodo.training import ModelBundle, TrainingConfig, set_dropout

    rng = np.random.default_rng(1234)
    clips = [generate_family("straight_walk", rng, skeleton) for _ in range(3)]
    stats = fit_normalization([encode(c.raw, skeleton) for c in clips])
    config = DenoiserConfig(
        n_joints=27, n_layers=1, n_heads=2, latent_dim=32,
        extra_tokens=2, text_dim=32, max_frames=240, dropout=0.0,
    )
    torch.manual_seed(7)
    model = MotionDenoiser(config).eval()
    set_dropout(model, 0.0)
    return ModelBundle(
        model=model,
        denoiser_config=config,
        training_config=TrainingConfig(),
        codec_config=CodecConfig(),
        stats=stats,
        skeleton=skeleton,
        schedule=NoiseSchedule.cosine(1000),
        embedder=HashedTextEmbedder(32),
        model_id="untrained-test",
    )


def smooth_random_rotations(rng, n_frames, n_joints, scale=0.6):
    """Slowly varying valid global rotations: low-passed axis-angle curves."""
    keys = rng.normal(scale=scale, size=(4, n_joints, 3))
    t = np.linspace(0.0, 3.0, n_frames)
    idx = np.minimum(t.astype(int), 2)
    frac = (t - idx)[:, None, None]
    aa = keys[idx] * (1 - frac) + keys[idx + 1] * frac
    return axis_angle_to_matrix(aa)


def make_random_motion(rng, skeleton, n_frames=60, fps=30.0):
    """Kinematically valid random motion: FK of smooth rotations + root path."""
    rots = smooth_random_rotations(rng, n_frames, skeleton.n_joints)
    t = np.linspace(0.0, n_frames / fps, n_frames)
    root = np.stack(
        [
            0.8 * t + 0.05 * np.sin(2 * np.pi * t),
            0.95 + 0.02 * np.cos(2 * np.pi * t),
            0.3 * t + 0.04 * np.cos(2 * np.pi * 0.7 * t),
        ],
        axis=1,
    )
    root += rng.normal(scale=0.2, size=3)
    positions = forward_kinematics(skeleton, root, rots)
    return RawMotion(
        fps=fps,
        joint_positions=positions,
        rotations_6d=matrix_to_rotation_6d(rots),
    )
