"""
Surrogate Model

Feature encoder, deep mean and residual GP kernel, combined into the model
that predicts scooped volume for a patch conditioned on the online support set.

Rewards are handled internally in standardized units; the affine map back to
cm^3 is a buffer of the model so it travels with the checkpoint.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from app.config import PerceptionSettings, TrainingSettings
from app.core import gp
from app.exceptions import DimensionMismatchError, NonFiniteInputError
from app.models.observation import Patch
from app.schemas.action import ScoopAction, Stiffness

logger = logging.getLogger(__name__)

ENCODE_BATCH = 512
ACTION_PARAMS = 3


@dataclass(frozen=True)
class Architecture:
    """
    Layer sizes of a surrogate model.

    Attributes:
        patch_size (int): Patch edge P, divisible by 4
        feature_dim (int): Encoder output dimension F
        conv_channels (Tuple[int, int]): Widths of the two convolution stages
        encoder_hidden (int): Hidden width of the encoder head
        mean_hidden (int): Hidden width of the deep mean
        lengthscale_mode (str): "shared" or "ard"
    """
    patch_size: int = 24
    feature_dim: int = 16
    conv_channels: Tuple[int, int] = (4, 8)
    encoder_hidden: int = 32
    mean_hidden: int = 32
    lengthscale_mode: str = "shared"

    def __post_init__(self):
        if self.patch_size % 4 != 0:
            raise DimensionMismatchError(f"Patch size {self.patch_size} is not divisible by 4")
        if self.lengthscale_mode not in ("shared", "ard"):
            raise DimensionMismatchError(f"Unknown lengthscale mode '{self.lengthscale_mode}'")

    @classmethod
    def from_settings(cls, training: TrainingSettings, perception: PerceptionSettings) -> "Architecture":
        return cls(
            patch_size=perception.PATCH_SIZE,
            feature_dim=training.FEATURE_DIM,
            conv_channels=tuple(training.CONV_CHANNELS),
            encoder_hidden=training.ENCODER_HIDDEN,
            mean_hidden=training.MEAN_HIDDEN,
            lengthscale_mode=training.LENGTHSCALE_MODE,
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["conv_channels"] = list(self.conv_channels)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "Architecture":
        return cls(**{**data, "conv_channels": tuple(data["conv_channels"])})


class FeatureEncoder(nn.Module):
    """
    Maps a patch and its action parameters to a feature vector in R^F.

    Two conv/tanh/avg-pool stages over the depth patch, the colour channel
    means appended before a hidden layer, and (d, one-hot b) appended before
    the output layer. Smooth activations keep finite differences meaningful.
    """

    def __init__(self, architecture: Architecture):
        super().__init__()
        c1, c2 = architecture.conv_channels
        self.conv = nn.Sequential(
            nn.Conv2d(1, c1, kernel_size=3, padding=1), nn.Tanh(), nn.AvgPool2d(2),
            nn.Conv2d(c1, c2, kernel_size=3, padding=1), nn.Tanh(), nn.AvgPool2d(2),
        )
        flat = c2 * (architecture.patch_size // 4) ** 2
        self.hidden = nn.Linear(flat + 3, architecture.encoder_hidden)
        self.head = nn.Linear(architecture.encoder_hidden + ACTION_PARAMS, architecture.feature_dim)

    def forward(self, depth: torch.Tensor, color: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        h = self.conv(depth).flatten(1)
        h = torch.tanh(self.hidden(torch.cat([h, color], dim=1)))
        return torch.tanh(self.head(torch.cat([h, action], dim=1)))


class DeepMean(nn.Module):
    """Feature vector to standardized volume."""

    def __init__(self, architecture: Architecture):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(architecture.feature_dim, architecture.mean_hidden),
            nn.Tanh(),
            nn.Linear(architecture.mean_hidden, 1),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z).squeeze(-1)


class ResidualKernel(nn.Module):
    """
    Squared-exponential kernel over encoded features, with observation noise.

    Variances and lengthscales are stored in the log domain so they stay positive.
    """

    def __init__(self, feature_dim: int, lengthscale_mode: str = "shared",
                 signal_variance: float = 1.0, lengthscale: float = 2.0, noise_variance: float = 0.1):
        super().__init__()
        dims = feature_dim if lengthscale_mode == "ard" else 1
        self.feature_dim = feature_dim
        self.log_signal_variance = nn.Parameter(torch.tensor(math.log(signal_variance), dtype=torch.float64))
        self.log_lengthscales = nn.Parameter(torch.full((dims,), math.log(lengthscale), dtype=torch.float64))
        self.log_noise_variance = nn.Parameter(torch.tensor(math.log(noise_variance), dtype=torch.float64))

    @property
    def signal_variance(self) -> float:
        return float(torch.exp(self.log_signal_variance.detach()))

    @property
    def noise_variance(self) -> float:
        return float(torch.exp(self.log_noise_variance.detach()))

    def gram(self, z1: torch.Tensor, z2: Optional[torch.Tensor] = None) -> torch.Tensor:
        return gp.se_kernel(z1, z1 if z2 is None else z2, self.log_signal_variance, self.log_lengthscales)

    def posterior(self, z_support, residuals, z_query):
        return gp.posterior(z_support, residuals, z_query, self.log_signal_variance,
                            self.log_lengthscales, self.log_noise_variance)

    def nlml(self, z, residuals):
        return gp.negative_log_marginal_likelihood(z, residuals, self.log_signal_variance,
                                                   self.log_lengthscales, self.log_noise_variance)

    def predictive_nll(self, z_support, rho_support, z_query, rho_query):
        return gp.predictive_negative_log_likelihood(z_support, rho_support, z_query, rho_query,
                                                     self.log_signal_variance, self.log_lengthscales,
                                                     self.log_noise_variance)

    def clamp_(self, signal_floor: float, noise_floor: float) -> None:
        """Keep the variances at or above their floors after an optimizer step."""
        with torch.no_grad():
            self.log_signal_variance.clamp_(min=math.log(signal_floor))
            self.log_noise_variance.clamp_(min=math.log(noise_floor))


@dataclass(frozen=True)
class SupportEntry:
    patch: Patch
    action: ScoopAction
    reward: float


class SupportSet:
    """
    Online history H of (patch, action, reward) on the current terrain.

    Append-only; holds at most `budget` entries. Rewards are in cm^3.
    """

    def __init__(self, budget: int):
        if budget < 1:
            raise ValueError(f"Support budget must be >= 1, got {budget}")
        self.budget = budget
        self._entries: List[SupportEntry] = []

    def append(self, patch: Patch, action: ScoopAction, reward: float) -> None:
        if len(self._entries) >= self.budget:
            raise ValueError(f"Support set is full ({self.budget} entries)")
        if not math.isfinite(reward) or reward < 0:
            raise ValueError(f"Support reward must be finite and >= 0, got {reward}")
        self._entries.append(SupportEntry(patch, action, float(reward)))

    @property
    def entries(self) -> Tuple[SupportEntry, ...]:
        return tuple(self._entries)

    @property
    def patches(self) -> List[Patch]:
        return [e.patch for e in self._entries]

    @property
    def rewards(self) -> np.ndarray:
        return np.array([e.reward for e in self._entries], dtype=np.float64)

    def __len__(self) -> int:
        return len(self._entries)


class SurrogateModel(nn.Module):
    """
    Deep-mean / deep-kernel GP surrogate of scooped volume.

    The encoder output feeds both the deep mean and the residual kernel. All
    public prediction methods take and return rewards in cm^3; the kernel
    hyperparameters are in standardized units.

    Methods:
        encode: Feature vectors for patches
        predict: Posterior mean and variance given a support set
        predict_mean: Deep mean only (the Non-Adaptive predictor)
        kernel_gram: Kernel matrix over patches
        nlml: Negative log marginal likelihood of a support set's residuals
    """

    def __init__(self, architecture: Architecture, reward_offset: float = 0.0, reward_scale: float = 1.0):
        super().__init__()
        if not reward_scale > 0:
            raise ValueError(f"Reward scale must be positive, got {reward_scale}")
        self.architecture = architecture
        self.encoder = FeatureEncoder(architecture)
        self.mean = DeepMean(architecture)
        self.kernel = ResidualKernel(architecture.feature_dim, architecture.lengthscale_mode)
        self.register_buffer("reward_affine", torch.tensor([reward_offset, reward_scale], dtype=torch.float64))
        self.double()

    @property
    def reward_offset(self) -> float:
        return float(self.reward_affine[0])

    @property
    def reward_scale(self) -> float:
        return float(self.reward_affine[1])

    def standardize(self, rewards: torch.Tensor) -> torch.Tensor:
        return (rewards - self.reward_affine[0]) / self.reward_affine[1]

    def to_reward(self, values: torch.Tensor) -> torch.Tensor:
        return self.reward_affine[0] + self.reward_affine[1] * values

    def tensors(self, patches: Sequence[Patch]) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """
        Stack patches into encoder inputs.

        Raises:
            DimensionMismatchError: If a patch does not have the architecture's size
            NonFiniteInputError: If any patch or action value is NaN or infinite
        """
        size = self.architecture.patch_size
        for patch in patches:
            if patch.depth_patch.shape != (size, size) or patch.color_patch.shape != (size, size, 3):
                raise DimensionMismatchError(
                    f"Patch of shape {patch.depth_patch.shape} does not match P={size}")
        depth = np.stack([p.depth_patch for p in patches]).astype(np.float64)
        color = np.stack([p.color_patch.reshape(-1, 3).mean(axis=0) for p in patches]).astype(np.float64)
        action = np.array([[p.depth, float(p.stiffness == Stiffness.LOW), float(p.stiffness == Stiffness.HIGH)]
                           for p in patches], dtype=np.float64)
        if not (np.isfinite(depth).all() and np.isfinite(color).all() and np.isfinite(action).all()):
            raise NonFiniteInputError("Patch contains non-finite values")
        return torch.from_numpy(depth[:, None]), torch.from_numpy(color), torch.from_numpy(action)

    def encode_tensors(self, depth: torch.Tensor, color: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        return self.encoder(depth, color, action)

    def encode(self, patches: Sequence[Patch]) -> torch.Tensor:
        """
        Feature vectors (n, F) for patches, computed in batches without gradients.
        """
        if len(patches) == 0:
            return torch.zeros((0, self.architecture.feature_dim), dtype=torch.float64)
        chunks = []
        with torch.no_grad():
            for start in range(0, len(patches), ENCODE_BATCH):
                chunks.append(self.encoder(*self.tensors(patches[start:start + ENCODE_BATCH])))
        return torch.cat(chunks)

    def predict(self, patches: Sequence[Patch], support: Optional[SupportSet] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        Posterior mean (cm^3) and variance (cm^6) of scooped volume.

        Args:
            patches (Sequence[Patch]): Query patches
            support (SupportSet, optional): Online history; empty or None gives the prior

        Returns:
            Tuple[np.ndarray, np.ndarray]: Means and variances, one per query

        Raises:
            DimensionMismatchError, NonFiniteInputError: On malformed inputs
            FactorizationError: If the support Gram matrix cannot be factorized
        """
        z_query = self.encode(patches)
        with torch.no_grad():
            mean = self.mean(z_query)
            if support is None or len(support) == 0:
                residual_mean = torch.zeros_like(mean)
                variance = torch.exp(self.kernel.log_signal_variance) * torch.ones_like(mean)
            else:
                z_support = self.encode(support.patches)
                rho = self.standardize(torch.from_numpy(support.rewards)) - self.mean(z_support)
                residual_mean, variance = self.kernel.posterior(z_support, rho, z_query)
            scale = self.reward_affine[1]
            return (self.to_reward(mean + residual_mean).numpy(),
                    (scale * scale * variance).numpy())

    def predict_mean(self, patches: Sequence[Patch]) -> np.ndarray:
        """Deep-mean prediction in cm^3, ignoring any support."""
        return self.predict(patches, None)[0]

    def kernel_gram(self, patches: Sequence[Patch]) -> np.ndarray:
        """Kernel matrix K_ij = k(z_i, z_j) over encoded patches (standardized units)."""
        z = self.encode(patches)
        with torch.no_grad():
            return self.kernel.gram(z).numpy()

    def nlml(self, support: SupportSet) -> float:
        """
        Negative log marginal likelihood of the support residuals (standardized units).

        Raises:
            ValueError: If the support is empty
        """
        if len(support) == 0:
            raise ValueError("nlml needs at least one support entry")
        z = self.encode(support.patches)
        with torch.no_grad():
            rho = self.standardize(torch.from_numpy(support.rewards)) - self.mean(z)
            return float(self.kernel.nlml(z, rho))
