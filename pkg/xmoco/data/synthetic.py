from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from xmoco.constants import CorrelationMode, SplitTag
from xmoco.data.pairs import ModalityPair, PairDataset
from xmoco.errors import ConfigError
from xmoco.numkit import ordered_matmul

LOGGER = logging.getLogger(__name__)

WEAK_DELTA = 1.0  # Std of the extra latent perturbation modality b sees in weak mode


@dataclass(frozen=True)
class SynthSpec:
    """
    Recipe for a synthetic paired dataset with known alignment.

    Attributes:
        n_pairs (int): Number of pairs.
        latent_dim (int): Dimension of the shared latent.
        input_dim_a (int): Modality-a feature length.
        input_dim_b (int): Modality-b feature length.
        noise_sigma (float): Std of the per-modality observation noise.
        correlation_mode (CorrelationMode): STRONG shares the latent exactly; WEAK perturbs it for modality b.
        seed (int): Generation seed.

    """

    n_pairs: int = 3000
    latent_dim: int = 16
    input_dim_a: int = 64
    input_dim_b: int = 48
    noise_sigma: float = 0.05
    correlation_mode: CorrelationMode = CorrelationMode.STRONG
    seed: int = 7

    def __post_init__(self) -> None:
        object.__setattr__(self, "correlation_mode", CorrelationMode(self.correlation_mode))

    def validate(self) -> None:
        """
        Check dimensions and noise level.

        Raises:
            ConfigError: Naming the first invalid key.

        """
        for key in ("n_pairs", "latent_dim", "input_dim_a", "input_dim_b"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"synth.{key} must be >= 1, got {getattr(self, key)}")
        if not math.isfinite(self.noise_sigma) or self.noise_sigma < 0:
            raise ConfigError(f"synth.noise_sigma must be >= 0, got {self.noise_sigma}")

    def to_dict(self) -> dict[str, Any]:
        """Serialize to plain JSON types."""
        data = asdict(self)
        data["correlation_mode"] = self.correlation_mode.value
        return data


def generate_synthetic(spec: SynthSpec) -> PairDataset:
    """
    Generate pairs whose modalities are noisy linear images of a shared Gaussian latent.

    Per pair u ~ N(0, I); feat_a = P_a u + sigma e_a and feat_b = P_b u' + sigma e_b, with fixed seeded projections
    P_a, P_b. In strong mode u' = u; in weak mode u' = u + delta * N(0, I), delta = 1, so alignment is partial.

    Args:
        spec (SynthSpec): The recipe.

    Returns:
        PairDataset: ``spec.n_pairs`` pairs with ids ``pair-000000``, ``pair-000001``, ...

    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    proj_a = rng.standard_normal((spec.input_dim_a, spec.latent_dim)) / math.sqrt(spec.latent_dim)
    proj_b = rng.standard_normal((spec.input_dim_b, spec.latent_dim)) / math.sqrt(spec.latent_dim)
    latent = rng.standard_normal((spec.n_pairs, spec.latent_dim))
    latent_b = latent
    if spec.correlation_mode is CorrelationMode.WEAK:
        latent_b = latent + WEAK_DELTA * rng.standard_normal((spec.n_pairs, spec.latent_dim))

    feats_a = ordered_matmul(latent, proj_a.T)
    feats_b = ordered_matmul(latent_b, proj_b.T)
    if spec.noise_sigma > 0:
        feats_a = feats_a + spec.noise_sigma * rng.standard_normal(feats_a.shape)
        feats_b = feats_b + spec.noise_sigma * rng.standard_normal(feats_b.shape)

    pairs = tuple(ModalityPair(f"pair-{i:06d}", feats_a[i], feats_b[i]) for i in range(spec.n_pairs))
    LOGGER.info(
        f"Generated {spec.n_pairs} {spec.correlation_mode.value} pairs "
        f"(dims {spec.input_dim_a}/{spec.input_dim_b}, latent {spec.latent_dim}, sigma {spec.noise_sigma})",
    )
    return PairDataset(pairs, SplitTag.ALL)
