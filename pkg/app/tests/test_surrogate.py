import math
import struct
import warnings
import zlib

import numpy as np
import pytest
import torch

from app.exceptions import CheckpointError, DimensionMismatchError, NonFiniteInputError
from app.models.observation import Patch
from app.models.surrogate import Architecture, ResidualKernel, SupportSet, SurrogateModel
from app.repositories.checkpoint import CheckpointRepository
from app.schemas.action import ScoopAction, Stiffness


def make_patch(rng, size=16, depth=0.4, stiffness=Stiffness.HIGH):
    return Patch(depth_patch=rng.normal(scale=2.0, size=(size, size)),
                 color_patch=rng.uniform(0.0, 1.0, size=(size, size, 3)),
                 depth=depth, stiffness=stiffness)


def support_of(patches, rewards, budget=5):
    support = SupportSet(budget)
    for patch, reward in zip(patches, rewards):
        support.append(patch, ScoopAction(x=0.0, y=0.0, theta=0.0, depth=patch.depth), reward)
    return support


@pytest.fixture
def fresh_model(settings):
    torch.manual_seed(11)
    return SurrogateModel(Architecture.from_settings(settings.training, settings.perception),
                          reward_offset=15.0, reward_scale=5.0)


def test_encode_is_deterministic(tiny_model):
    rng = np.random.default_rng(0)
    patches = [make_patch(rng) for _ in range(5)]
    first = tiny_model.encode(patches)
    second = tiny_model.encode(patches)
    assert first.shape == (5, tiny_model.architecture.feature_dim)
    assert torch.equal(first, second)
    assert tiny_model.encode([]).shape == (0, tiny_model.architecture.feature_dim)


def test_action_parameters_change_the_features(tiny_model):
    patch = make_patch(np.random.default_rng(1))
    variants = [patch.with_action(d, b) for d in (0.2, 0.8) for b in Stiffness]
    z = tiny_model.encode(variants)
    assert torch.unique(z, dim=0).shape[0] == 4


def test_encoder_gradients_match_finite_differences(tiny_model):
    rng = np.random.default_rng(2)
    depth, color, action = tiny_model.tensors([make_patch(rng), make_patch(rng, depth=0.6)])
    depth.requires_grad_(True)
    color.requires_grad_(True)
    assert torch.autograd.gradcheck(tiny_model.encode_tensors, (depth, color, action), eps=1e-6, atol=1e-6)


def test_mean_loss_gradients_match_finite_differences(fresh_model):
    rng = np.random.default_rng(6)
    patches = [make_patch(rng, depth=d) for d in (0.2, 0.4, 0.6, 0.8, 0.4, 0.2)]
    targets = torch.from_numpy(rng.normal(size=len(patches)))
    depth, color, action = fresh_model.tensors(patches)
    names, values = zip(*[(name, p.detach().clone().requires_grad_(True))
                          for name, p in fresh_model.mean.named_parameters()])

    def loss(*params):
        z = fresh_model.encode_tensors(depth, color, action)
        prediction = torch.func.functional_call(fresh_model.mean, dict(zip(names, params)), (z,))
        return ((prediction - targets) ** 2).mean()

    assert torch.autograd.gradcheck(loss, values, eps=1e-6, atol=1e-6)


def test_prediction_without_support_is_the_deep_mean(tiny_model):
    rng = np.random.default_rng(3)
    patches = [make_patch(rng) for _ in range(4)]
    with torch.no_grad():
        expected_mean = tiny_model.to_reward(tiny_model.mean(tiny_model.encode(patches))).numpy()
    expected_var = 10.0 ** 2 * tiny_model.kernel.signal_variance

    for support in (None, SupportSet(3)):
        mean, var = tiny_model.predict(patches, support)
        assert np.array_equal(mean, expected_mean)
        np.testing.assert_allclose(var, expected_var, rtol=1e-14)
    assert np.array_equal(tiny_model.predict_mean(patches), expected_mean)


def test_posterior_interpolates_a_noise_free_observation(fresh_model):
    with torch.no_grad():
        fresh_model.kernel.log_noise_variance.fill_(math.log(1e-12))
    patch = make_patch(np.random.default_rng(4))
    reward = 37.0
    mean, var = fresh_model.predict([patch], support_of([patch], [reward]))
    assert abs(mean[0] - reward) <= 1e-6 * reward
    assert var[0] < 1e-6


def test_posterior_interpolates_distant_observations(fresh_model):
    with torch.no_grad():
        fresh_model.kernel.log_noise_variance.fill_(math.log(1e-12))
        fresh_model.kernel.log_lengthscales.fill_(math.log(1e-3))
    rng = np.random.default_rng(5)
    patches = [make_patch(rng, depth=0.2), make_patch(rng, depth=0.8)]
    rewards = [3.0, 52.0]
    mean, _ = fresh_model.predict(patches, support_of(patches, rewards))
    for predicted, reward in zip(mean, rewards):
        assert abs(predicted - reward) <= 1e-6 * reward


def test_support_observation_pulls_the_prediction(fresh_model):
    patch = make_patch(np.random.default_rng(6))
    prior_mean, prior_var = fresh_model.predict([patch])
    target = float(prior_mean[0]) + 30.0
    mean, var = fresh_model.predict([patch], support_of([patch], [target]))
    assert prior_mean[0] < mean[0] < target
    assert var[0] < prior_var[0]


def test_malformed_patches_are_rejected(tiny_model):
    rng = np.random.default_rng(7)
    with pytest.raises(DimensionMismatchError):
        tiny_model.predict([make_patch(rng, size=8)])
    broken = make_patch(rng)
    broken.depth_patch[3, 3] = np.nan
    with pytest.raises(NonFiniteInputError):
        tiny_model.predict([broken])


def test_invalid_architectures_are_rejected():
    with pytest.raises(DimensionMismatchError):
        Architecture(patch_size=18)
    with pytest.raises(DimensionMismatchError):
        Architecture(lengthscale_mode="per-layer")
    with pytest.raises(ValueError):
        SurrogateModel(Architecture(), reward_scale=0.0)


def test_support_set_limits():
    rng = np.random.default_rng(8)
    action = ScoopAction(x=1.0, y=1.0, theta=0.0, depth=0.2)
    support = SupportSet(2)
    support.append(make_patch(rng), action, 1.0)
    support.append(make_patch(rng), action, 0.0)
    with pytest.raises(ValueError):
        support.append(make_patch(rng), action, 2.0)
    with pytest.raises(ValueError):
        SupportSet(2).append(make_patch(rng), action, -1.0)
    with pytest.raises(ValueError):
        SupportSet(0)
    assert np.array_equal(support.rewards, [1.0, 0.0])


def test_nlml_needs_a_support(tiny_model):
    with pytest.raises(ValueError):
        tiny_model.nlml(SupportSet(3))
    rng = np.random.default_rng(9)
    patches = [make_patch(rng) for _ in range(3)]
    assert math.isfinite(tiny_model.nlml(support_of(patches, [5.0, 10.0, 30.0])))


def test_kernel_gram_over_patches(tiny_model):
    rng = np.random.default_rng(10)
    gram = tiny_model.kernel_gram([make_patch(rng) for _ in range(4)])
    assert gram.shape == (4, 4)
    assert np.array_equal(gram, gram.T)
    np.testing.assert_allclose(np.diag(gram), tiny_model.kernel.signal_variance, rtol=1e-14)


def test_kernel_clamp_applies_variance_floors():
    kernel = ResidualKernel(4, signal_variance=1e-6, noise_variance=1e-9)
    kernel.clamp_(signal_floor=1e-3, noise_floor=1e-4)
    assert kernel.signal_variance == pytest.approx(1e-3)
    assert kernel.noise_variance == pytest.approx(1e-4)
    assert kernel.log_lengthscales.shape == (1,)
    assert ResidualKernel(4, "ard").log_lengthscales.shape == (4,)


def test_variances_read_from_trainable_parameters_without_warnings():
    kernel = ResidualKernel(4, signal_variance=0.5, noise_variance=0.02)
    assert kernel.log_signal_variance.requires_grad
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert kernel.signal_variance == pytest.approx(0.5)
        assert kernel.noise_variance == pytest.approx(0.02)


def test_checkpoint_round_trip_preserves_predictions(tiny_model, tmp_path):
    rng = np.random.default_rng(11)
    queries = [make_patch(rng) for _ in range(6)]
    history = [make_patch(rng) for _ in range(2)]
    support = support_of(history, [4.0, 25.0])

    restored = CheckpointRepository.deserialize(CheckpointRepository.serialize(tiny_model))
    assert restored.architecture == tiny_model.architecture
    assert restored.reward_offset == 20.0 and restored.reward_scale == 10.0
    for a, b in zip(tiny_model.predict(queries, support), restored.predict(queries, support)):
        assert np.array_equal(a, b)

    repository = CheckpointRepository()
    path = repository.save(tiny_model, tmp_path / "models" / "tiny.ckpt")
    loaded = repository.load(path)
    assert np.array_equal(loaded.predict_mean(queries), tiny_model.predict_mean(queries))


def test_checkpoint_keeps_ard_lengthscales():
    model = SurrogateModel(Architecture(patch_size=8, feature_dim=3, lengthscale_mode="ard"))
    restored = CheckpointRepository.deserialize(CheckpointRepository.serialize(model))
    assert restored.kernel.log_lengthscales.shape == (3,)


def test_corrupted_checkpoints_are_rejected(tiny_model, tmp_path):
    payload = CheckpointRepository.serialize(tiny_model)

    with pytest.raises(CheckpointError, match="empty"):
        CheckpointRepository.deserialize(b"")
    with pytest.raises(CheckpointError, match="magic"):
        CheckpointRepository.deserialize(b"NOPE" + payload[4:])
    with pytest.raises(CheckpointError):
        CheckpointRepository.deserialize(payload[:len(payload) // 2])

    flipped = bytearray(payload)
    flipped[len(payload) // 2] ^= 0xFF
    with pytest.raises(CheckpointError, match="checksum"):
        CheckpointRepository.deserialize(bytes(flipped))

    body = bytearray(payload[:-4])
    body[4:6] = struct.pack("<H", 99)
    with pytest.raises(CheckpointError, match="version"):
        CheckpointRepository.deserialize(bytes(body) + struct.pack("<I", zlib.crc32(bytes(body))))

    with pytest.raises(CheckpointError):
        CheckpointRepository().load(tmp_path / "missing.ckpt")
