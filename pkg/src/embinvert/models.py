"""Backend contracts plus seeded desk-scale synthetic implementations.

Three capabilities make up a backend: a generator (latent vector to image),
one or more embedders (image to identity embedding, each with its own
decision threshold), and a face detector (image to confidence).  Real
generative or recognition models plug in through these same contracts via
the adapter registry; the synthetic versions below are small, smooth,
fully seeded stand-ins that keep the whole pipeline's geometry (latent ->
image -> embedding -> cosine) while running in milliseconds.

Gradient support is expressed through vector-Jacobian products so that the
white-box loss gradient composes generically:

    d loss / d latent = G.vjp(latent, F.vjp(image, d cos / d embedding))
"""
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .core import EmbeddingVector, ImageSample, LatentCode, cosine_similarity
from .errors import (
    ConfigInvalid,
    DimensionMismatch,
    GradientUnavailable,
    ShapeMismatch,
    ZeroNormEmbedding,
)


class GeneratorHandle:
    """Maps any length-d_lat vector deterministically to an image."""

    d_lat: int
    output_shape: Tuple[int, int, int]
    supports_gradient: bool
    generator_id: str

    def generate(self, latent: LatentCode) -> ImageSample:
        raise NotImplementedError

    def vjp(self, latent_values: np.ndarray, image_cotangent: np.ndarray) -> np.ndarray:
        """Pull an image-space cotangent back to latent space."""
        raise GradientUnavailable(f"generator {self.generator_id!r} has no gradient")


class EmbedderHandle:
    """Maps images deterministically to unit-comparable embeddings."""

    d_emb: int
    tau_F: Optional[float]
    supports_gradient: bool
    model_id: str

    def embed(self, image: ImageSample) -> EmbeddingVector:
        raise NotImplementedError

    def vjp(self, image: ImageSample, embedding_cotangent: np.ndarray) -> np.ndarray:
        raise GradientUnavailable(f"embedder {self.model_id!r} has no gradient")


class DetectorHandle:
    """Returns a confidence in [0, 1] that an image contains a face."""

    detector_id: str

    def detect(self, image: ImageSample) -> float:
        raise NotImplementedError


def _check_latent(g: GeneratorHandle, latent_values: np.ndarray):
    if latent_values.size != g.d_lat:
        raise DimensionMismatch(
            f"latent length {latent_values.size} != generator d_lat {g.d_lat}"
        )


def _check_image(expected_shape, image: ImageSample, who: str):
    if image.shape != tuple(expected_shape):
        raise ShapeMismatch(
            f"{who}: image shape {image.shape} != expected {tuple(expected_shape)}"
        )


class SyntheticGenerator(GeneratorHandle):
    """image = tanh(W @ latent + b) with seeded dense W.

    Smooth and differentiable; the bias field gives all outputs a common
    "prototype" component that the synthetic detector keys on.
    """

    supports_gradient = True

    def __init__(self, d_lat: int, output_shape: Tuple[int, int, int], seed_seq,
                 generator_id: str = "synthetic-generator"):
        self.d_lat = int(d_lat)
        self.output_shape = tuple(int(v) for v in output_shape)
        self.generator_id = generator_id
        d_pix = int(np.prod(self.output_shape))
        rng = np.random.default_rng(seed_seq)
        self.weight = rng.standard_normal((d_pix, self.d_lat)) / math.sqrt(self.d_lat)
        self.bias = 0.5 * rng.standard_normal(d_pix)

    def generate(self, latent: LatentCode) -> ImageSample:
        _check_latent(self, latent.values)
        flat = np.tanh(self.weight @ latent.values + self.bias)
        return ImageSample(flat.reshape(self.output_shape))

    def vjp(self, latent_values: np.ndarray, image_cotangent: np.ndarray) -> np.ndarray:
        _check_latent(self, latent_values)
        pre = self.weight @ latent_values + self.bias
        act = np.tanh(pre)
        return self.weight.T @ ((1.0 - act * act) * image_cotangent.reshape(-1))


class SyntheticEmbedder(EmbedderHandle):
    """Unit-normalized seeded linear map of the flattened image.

    Distinct seeds give genuinely different models, which is what makes
    cross-model evaluation informative.  ``tau_F`` is unset at construction
    and assigned once by EER calibration during world building.
    """

    supports_gradient = True

    def __init__(self, d_emb: int, input_shape: Tuple[int, int, int], seed_seq,
                 model_id: str):
        self.d_emb = int(d_emb)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.model_id = model_id
        self.tau_F: Optional[float] = None
        d_pix = int(np.prod(self.input_shape))
        rng = np.random.default_rng(seed_seq)
        self.weight = rng.standard_normal((self.d_emb, d_pix)) / math.sqrt(d_pix)

    def embed(self, image: ImageSample) -> EmbeddingVector:
        _check_image(self.input_shape, image, f"embedder {self.model_id}")
        raw = self.weight @ image.flat()
        norm = np.linalg.norm(raw)
        if norm == 0.0:
            raise ZeroNormEmbedding(f"embedder {self.model_id}: raw embedding is zero")
        return EmbeddingVector(raw / norm)

    def vjp(self, image: ImageSample, embedding_cotangent: np.ndarray) -> np.ndarray:
        _check_image(self.input_shape, image, f"embedder {self.model_id}")
        raw = self.weight @ image.flat()
        norm = np.linalg.norm(raw)
        if norm == 0.0:
            raise ZeroNormEmbedding(f"embedder {self.model_id}: raw embedding is zero")
        unit = raw / norm
        # Backprop through v / ||v||.
        cot_raw = (embedding_cotangent - np.dot(unit, embedding_cotangent) * unit) / norm
        return (self.weight.T @ cot_raw).reshape(self.input_shape)


class SyntheticDetector(DetectorHandle):
    """Sigmoid of the image's correlation with a fixed template direction.

    The template is the generator's bias-field prototype, so on-manifold
    generations correlate strongly while degenerate images do not.  The
    (offset, slope) pair is calibrated by the world builder so that every
    identity-derived image scores at least 0.999.
    """

    def __init__(self, template: np.ndarray, offset: float, slope: float,
                 detector_id: str = "synthetic-detector",
                 input_shape: Optional[Tuple[int, int, int]] = None):
        t = np.asarray(template, dtype=np.float64).reshape(-1)
        self.template = t / np.linalg.norm(t)
        self.offset = float(offset)
        self.slope = float(slope)
        self.detector_id = detector_id
        self.input_shape = tuple(input_shape) if input_shape is not None else None
        self.input_size = t.size

    def detect(self, image: ImageSample) -> float:
        if self.input_shape is not None and image.shape != self.input_shape:
            raise ShapeMismatch(
                f"detector {self.detector_id}: image shape {image.shape} != "
                f"{self.input_shape}")
        flat = image.flat()
        if flat.size != self.input_size:
            raise ShapeMismatch(
                f"detector {self.detector_id}: image size {flat.size} != {self.input_size}"
            )
        norm = np.linalg.norm(flat)
        corr = 0.0 if norm == 0.0 else float(flat @ self.template / norm)
        score = 1.0 / (1.0 + math.exp(-self.slope * (corr - self.offset)))
        return min(1.0, max(0.0, score))


@dataclass(frozen=True, eq=False)
class IdentityRecord:
    identity_id: str
    center: np.ndarray
    latents: np.ndarray          # (images_per_identity, d_lat)
    images: Tuple[ImageSample, ...]


@dataclass(frozen=True)
class WorldConfig:
    d_lat: int = 64
    image_shape: Tuple[int, int, int] = (3, 16, 16)
    embedder_dims: Tuple[int, ...] = (32, 32)
    n_identities: int = 20
    images_per_identity: int = 4   # the target image plus J alternates
    identity_noise: float = 0.35
    impostor_pair_factor: int = 1  # impostor pairs per genuine pair in calibration

    def validate(self):
        if self.d_lat <= 0:
            raise ConfigInvalid("d_lat must be positive")
        if len(self.image_shape) != 3 or any(v <= 0 for v in self.image_shape):
            raise ConfigInvalid(f"bad image_shape {self.image_shape}")
        if len(self.embedder_dims) < 2:
            raise ConfigInvalid(
                "at least 2 embedders required (cross-model evaluation needs a "
                "non-target model)"
            )
        if any(d <= 0 for d in self.embedder_dims):
            raise ConfigInvalid("embedder dims must be positive")
        if self.n_identities < 2:
            raise ConfigInvalid("need at least 2 identities")
        if self.images_per_identity < 1:
            raise ConfigInvalid("need at least 1 image per identity")
        if not self.identity_noise > 0:
            raise ConfigInvalid("identity_noise must be > 0")


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    config: WorldConfig
    master_seed: int
    generator: SyntheticGenerator
    embedders: Tuple[SyntheticEmbedder, ...]
    detector: SyntheticDetector
    identities: Tuple[IdentityRecord, ...]

    def embedder_by_id(self, model_id: str) -> SyntheticEmbedder:
        for e in self.embedders:
            if e.model_id == model_id:
                return e
        from .errors import UnknownModel
        raise UnknownModel(f"no embedder with model_id {model_id!r}")


# Stream ids for deriving independent RNGs from the master seed.
_STREAM_GENERATOR = 0
_STREAM_EMBEDDER = 1
_STREAM_IDENTITIES = 3
_STREAM_IMPOSTORS = 4

_DETECTOR_MARGIN = 0.05
_DETECTOR_SLOPE = 200.0


def make_synthetic_world(config: WorldConfig, master_seed: int) -> SyntheticWorld:
    """Build a fully deterministic desk-scale world.

    All parameters derive from (config, master_seed).  Embedder decision
    thresholds are calibrated at minimum EER on the world's own
    genuine/impostor pairs; the detector is calibrated so every identity
    image clears 0.999.
    """
    config.validate()
    shape_tag = "x".join(str(v) for v in config.image_shape)
    gen = SyntheticGenerator(
        config.d_lat, config.image_shape,
        np.random.SeedSequence([master_seed, _STREAM_GENERATOR]),
        generator_id=f"synthetic-seed{master_seed}-{config.d_lat}to{shape_tag}",
    )
    embedders = tuple(
        SyntheticEmbedder(
            d_emb, config.image_shape,
            np.random.SeedSequence([master_seed, _STREAM_EMBEDDER, k]),
            model_id=f"synthetic-embedder-{k}",
        )
        for k, d_emb in enumerate(config.embedder_dims)
    )

    rng_id = np.random.default_rng(
        np.random.SeedSequence([master_seed, _STREAM_IDENTITIES]))
    identities = []
    for k in range(config.n_identities):
        center = rng_id.standard_normal(config.d_lat)
        noise = rng_id.standard_normal((config.images_per_identity, config.d_lat))
        latents = center[None, :] + config.identity_noise * noise
        images = tuple(
            gen.generate(LatentCode(latents[j], seed=-1))
            for j in range(config.images_per_identity)
        )
        identities.append(IdentityRecord(f"id{k:03d}", center, latents, images))
    identities = tuple(identities)

    detector = _calibrate_detector(gen, identities)
    _calibrate_thresholds(embedders, identities, master_seed,
                          config.impostor_pair_factor)

    return SyntheticWorld(
        config=config,
        master_seed=master_seed,
        generator=gen,
        embedders=embedders,
        detector=detector,
        identities=identities,
    )


def _calibrate_detector(gen: SyntheticGenerator, identities) -> SyntheticDetector:
    template = np.tanh(gen.bias)
    template = template / np.linalg.norm(template)
    corrs = [
        float(img.flat() @ template / np.linalg.norm(img.flat()))
        for rec in identities for img in rec.images
    ]
    offset = min(corrs) - _DETECTOR_MARGIN
    return SyntheticDetector(template, offset, _DETECTOR_SLOPE,
                             input_shape=gen.output_shape)


def _calibrate_thresholds(embedders, identities, master_seed: int,
                          impostor_factor: int):
    from .evaluation import calibration_set_from_images, compute_eer_threshold

    images_by_identity = [rec.images for rec in identities]
    if all(len(images) < 2 for images in images_by_identity):
        return  # no genuine pairs; thresholds stay uncalibrated
    for k, emb in enumerate(embedders):
        cal = calibration_set_from_images(
            images_by_identity, emb,
            seed=[master_seed, _STREAM_IMPOSTORS, k],
            impostor_factor=impostor_factor)
        tau_F, _eer = compute_eer_threshold(cal)
        emb.tau_F = tau_F


def generate(g: GeneratorHandle, latent: LatentCode) -> ImageSample:
    """Deterministic latent-to-image map of the given generator."""
    return g.generate(latent)


def embed(f: EmbedderHandle, image: ImageSample) -> EmbeddingVector:
    """Deterministic image-to-embedding map of the given embedder."""
    return f.embed(image)


def detect(d: DetectorHandle, image: ImageSample) -> float:
    """Face-detection confidence in [0, 1]."""
    return d.detect(image)


def loss_eval(g: GeneratorHandle, f: EmbedderHandle, latent: LatentCode,
              target: EmbeddingVector) -> float:
    """Objective value: cosine similarity of the generated image's embedding
    with the target embedding."""
    return cosine_similarity(f.embed(g.generate(latent)), target)


def loss_gradient(g: GeneratorHandle, f: EmbedderHandle, latent: LatentCode,
                  target: EmbeddingVector) -> np.ndarray:
    """Gradient of loss_eval with respect to the latent values."""
    if not (g.supports_gradient and f.supports_gradient):
        raise GradientUnavailable("generator or embedder does not expose gradients")
    x = latent.values
    image = g.generate(latent)
    e = f.embed(image).values
    t = target.values
    t_norm = np.linalg.norm(t)
    if t_norm == 0.0:
        raise ZeroNormEmbedding("target embedding has zero norm")
    t_hat = t / t_norm
    # loss = e . t_hat with e already unit-norm; the normalization
    # Jacobian lives inside the embedder's vjp.
    cot_embedding = t_hat
    cot_image = f.vjp(image, cot_embedding)
    return g.vjp(x, cot_image)


class QueryLedger:
    """Exact count of target-model evaluations, split into the selection
    phase (q_topn) and the refinement phase (q_adv).

    When ``q_max`` is set the ledger refuses to overrun it; refiners are
    expected to check ``remaining_adv()`` first, so a raise here indicates
    a bookkeeping bug rather than a user error.
    """

    def __init__(self, q_max: Optional[int] = None):
        self.q_topn = 0
        self.q_adv = 0
        self.q_max = q_max

    @property
    def total(self) -> int:
        return self.q_topn + self.q_adv

    def charge_topn(self, n: int = 1):
        self._check(n)
        self.q_topn += n

    def charge_adv(self, n: int = 1):
        self._check(n)
        self.q_adv += n

    def remaining(self) -> Optional[int]:
        if self.q_max is None:
            return None
        return self.q_max - self.total

    def _check(self, n: int):
        if self.q_max is not None and self.total + n > self.q_max:
            raise RuntimeError(
                f"query ledger overrun: {self.total} + {n} > q_max {self.q_max}"
            )

    def __repr__(self):
        return (f"QueryLedger(q_topn={self.q_topn}, q_adv={self.q_adv}, "
                f"q_max={self.q_max})")


class AttackSession:
    """Capability-scoped access to one (generator, embedder) pair for one
    attack, with every objective evaluation charged to the ledger.

    Black-box sessions (allow_gradient=False) raise GradientUnavailable on
    any gradient request regardless of what the handles could provide.
    Gradient calls in white-box sessions are not charged; queries count
    objective evaluations only.
    """

    def __init__(self, generator: GeneratorHandle, embedder: EmbedderHandle,
                 ledger: QueryLedger, allow_gradient: bool):
        self.generator = generator
        self.embedder = embedder
        self.ledger = ledger
        self.allow_gradient = allow_gradient

    def loss(self, latent_values: np.ndarray, target: EmbeddingVector) -> float:
        self.ledger.charge_adv(1)
        return loss_eval(self.generator, self.embedder,
                         LatentCode(latent_values), target)

    def loss_gradient(self, latent_values: np.ndarray,
                      target: EmbeddingVector) -> np.ndarray:
        if not self.allow_gradient:
            raise GradientUnavailable("black-box session: gradients are out of reach")
        return loss_gradient(self.generator, self.embedder,
                             LatentCode(latent_values), target)
