"""Reusable pool of screened latent codes with cached generations.

Built once per generator and reused across targets: candidates are drawn
from sequential seeds, screened for Gaussian normality first (cheap, no
generation needed), then generated and screened for face presence.  Both
the latent and its generation are cached so later selection stages never
regenerate.

Pool entries are target-agnostic by construction; nothing embedding- or
identity-specific is stored.

File format (version 1, little-endian):
    magic "LPOOL" | u16 version | u8 checksum algo (1 = crc32)
    u32 d_lat | u32 C | u32 H | u32 W | u32 V
    f64 tau_K | f64 tau_D | i64 build_seed | u32 entry count
    u16 generator id length | utf-8 generator id
    per entry: i64 seed | f64 p_K | f64 p_D | f32[d_lat] latent
               | f32[C*H*W] image | u32 crc32 of the entry bytes
    u32 crc32 of everything before it
Latent and image payloads are stored as IEEE-754 32-bit floats; in-memory
pools hold float32-representable values, so round-trips are lossless.
"""
import struct
import zlib
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .core import ImageSample, LatentCode
from .errors import (
    ChecksumMismatch,
    ConfigInvalid,
    FormatVersionMismatch,
    IoFailure,
    PoolExhausted,
)
from .models import DetectorHandle, GeneratorHandle
from .normality import k2_test

_MAGIC = b"LPOOL"
_FORMAT_VERSION = 1
_CHECKSUM_CRC32 = 1

DEFAULT_MAX_DRAW_FACTOR = 10_000

# Candidates whose batch-prefilter p-value is within this slack of tau_K are
# re-tested with the scalar path, whose result is authoritative.
_PREFILTER_SLACK = 1e-6
_BATCH = 4096


@dataclass(frozen=True)
class PoolEntry:
    latent: LatentCode
    image: ImageSample


@dataclass(frozen=True)
class PoolBuildStats:
    drawn: int
    normality_accepted: int
    detector_accepted: int

    @property
    def normality_rate(self) -> float:
        return self.normality_accepted / self.drawn if self.drawn else 0.0


@dataclass(frozen=True)
class LatentPool:
    entries: Tuple[PoolEntry, ...]
    V: int
    tau_K: float
    tau_D: float
    generator_id: str
    build_seed: int
    stats: Optional[PoolBuildStats] = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.entries) != self.V:
            raise ConfigInvalid(
                f"pool holds {len(self.entries)} entries but V = {self.V}")
        for e in self.entries:
            if e.latent.p_K is None or e.latent.p_K < self.tau_K:
                raise ConfigInvalid("pool entry violates the normality threshold")
            if e.latent.p_D is None or e.latent.p_D < self.tau_D:
                raise ConfigInvalid("pool entry violates the detection threshold")

    @property
    def d_lat(self) -> int:
        return len(self.entries[0].latent)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return self.entries[0].image.shape


def sample_latent(d_lat: int, seed: int) -> LatentCode:
    """Deterministic standard-normal draw for (d_lat, seed).

    Values are quantized to float32 precision so that pool persistence is
    exactly lossless; screening metadata stays unset.
    """
    if d_lat <= 0:
        raise ValueError(f"d_lat must be positive, got {d_lat}")
    rng = np.random.default_rng(seed)
    values = rng.standard_normal(d_lat).astype(np.float32).astype(np.float64)
    return LatentCode(values=values, seed=seed)


def screen_normality(code: LatentCode, tau_K: float,
                     channels: Optional[int] = None) -> Tuple[bool, LatentCode]:
    """Run the omnibus normality test; accept iff p_K >= tau_K.

    By default the code is tested as one flattened sample.  With
    ``channels`` set, the code splits into that many equal blocks which
    must all pass; p_K records the worst block.  Returns (accepted, code
    with p_K recorded).  The threshold itself is not range-checked here:
    0 accepts everything and anything above 1 rejects everything, which
    is exactly what the comparison yields.
    """
    if channels is None:
        p_K = k2_test(code.values).p_value
    else:
        if channels < 1 or len(code) % channels != 0:
            raise ConfigInvalid(
                f"cannot split a length-{len(code)} code into {channels} channels")
        width = len(code) // channels
        p_K = min(k2_test(code.values[k * width:(k + 1) * width]).p_value
                  for k in range(channels))
    updated = code.with_screening(p_K=p_K)
    return p_K >= tau_K, updated


def screen_face(image: ImageSample, detector: DetectorHandle,
                tau_D: float) -> Tuple[bool, float]:
    """Run the face detector; accept iff confidence >= tau_D.

    Returns (accepted, p_D).  Confidences never exceed 1, so a threshold
    above 1 rejects every image.
    """
    p_D = detector.detect(image)
    return p_D >= tau_D, p_D


def _batch_normality_pvalues(matrix: np.ndarray) -> np.ndarray:
    """Vectorized prefilter: the same transforms as k2_test along axis 1.

    Used only to skip obvious rejections; every acceptance is confirmed by
    the scalar test so stored p_K values are exactly reproducible.
    """
    n = matrix.shape[1]
    d = matrix - matrix.mean(axis=1, keepdims=True)
    m2 = np.mean(d * d, axis=1)
    m3 = np.mean(d * d * d, axis=1)
    m4 = np.mean(d ** 4, axis=1)
    nf = float(n)

    g1 = m3 / m2 ** 1.5
    y = g1 * np.sqrt((nf + 1.0) * (nf + 3.0) / (6.0 * (nf - 2.0)))
    beta2 = (3.0 * (nf * nf + 27.0 * nf - 70.0) * (nf + 1.0) * (nf + 3.0)
             / ((nf - 2.0) * (nf + 5.0) * (nf + 7.0) * (nf + 9.0)))
    w2 = -1.0 + np.sqrt(2.0 * (beta2 - 1.0))
    delta = 1.0 / np.sqrt(0.5 * np.log(w2))
    alpha = np.sqrt(2.0 / (w2 - 1.0))
    z_skew = delta * np.arcsinh(y / alpha)

    b2 = m4 / (m2 * m2)
    mean_b2 = 3.0 * (nf - 1.0) / (nf + 1.0)
    var_b2 = (24.0 * nf * (nf - 2.0) * (nf - 3.0)
              / ((nf + 1.0) ** 2 * (nf + 3.0) * (nf + 5.0)))
    x = (b2 - mean_b2) / np.sqrt(var_b2)
    sqrt_beta1 = (6.0 * (nf * nf - 5.0 * nf + 2.0) / ((nf + 7.0) * (nf + 9.0))
                  * np.sqrt(6.0 * (nf + 3.0) * (nf + 5.0)
                            / (nf * (nf - 2.0) * (nf - 3.0))))
    a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1
                                  + np.sqrt(1.0 + 4.0 / sqrt_beta1 ** 2))
    denom = 1.0 + x * np.sqrt(2.0 / (a - 4.0))
    safe = np.where(denom == 0.0, 1.0, denom)
    term = np.sign(denom) * np.cbrt((1.0 - 2.0 / a) / np.abs(safe))
    z_kurt = ((1.0 - 2.0 / (9.0 * a)) - term) / np.sqrt(2.0 / (9.0 * a))

    return np.exp(-0.5 * (z_skew ** 2 + z_kurt ** 2))


def build_pool(generator: GeneratorHandle, detector: DetectorHandle, V: int,
               tau_K: float, tau_D: float, build_seed: int,
               max_draw_factor: int = DEFAULT_MAX_DRAW_FACTOR,
               progress=None) -> LatentPool:
    """Draw, screen, generate, screen again; stop at V accepted entries.

    Candidate i is drawn from seed build_seed + i.  The normality screen
    runs before any generation (cheap filter first); the detector sees
    only normality survivors, so generator invocations equal the count of
    normality acceptances.  Raises PoolExhausted once max_draw_factor * V
    candidates have been drawn without filling the pool.
    """
    if V < 1:
        raise ConfigInvalid(f"V must be >= 1, got {V}")
    if not 0.0 <= tau_K <= 1.0 or not 0.0 <= tau_D <= 1.0:
        raise ConfigInvalid("thresholds must be in [0, 1]")
    cap = max_draw_factor * V
    entries: List[PoolEntry] = []
    drawn = 0
    n_norm = 0
    n_face = 0
    while len(entries) < V:
        if drawn >= cap:
            raise PoolExhausted(
                f"drew {drawn} candidates (cap {cap}) but accepted only "
                f"{len(entries)} of {V}")
        chunk = min(_BATCH, cap - drawn)
        codes = [sample_latent(generator.d_lat, build_seed + drawn + i)
                 for i in range(chunk)]
        matrix = np.stack([c.values for c in codes])
        prefilter = _batch_normality_pvalues(matrix)
        for i, code in enumerate(codes):
            if prefilter[i] < tau_K - _PREFILTER_SLACK:
                continue
            accepted, code = screen_normality(code, tau_K)
            if not accepted:
                continue
            n_norm += 1
            image = generator.generate(code)
            image = ImageSample(
                image.values.astype(np.float32).astype(np.float64))
            face_ok, p_D = screen_face(image, detector, tau_D)
            if not face_ok:
                continue
            n_face += 1
            entries.append(PoolEntry(latent=code.with_screening(p_D=p_D),
                                     image=image))
            if len(entries) == V:
                # Candidates after the V-th acceptance in this chunk were
                # drawn speculatively; only count up to the winner.
                drawn += i + 1
                break
        else:
            drawn += chunk
            if progress is not None:
                progress(drawn, len(entries))
            continue
        break
    stats = PoolBuildStats(drawn=drawn, normality_accepted=n_norm,
                           detector_accepted=n_face)
    return LatentPool(entries=tuple(entries), V=V, tau_K=tau_K, tau_D=tau_D,
                      generator_id=generator.generator_id,
                      build_seed=build_seed, stats=stats)


def save_pool(pool: LatentPool, path):
    """Write the versioned binary pool file described in the module docstring."""
    gen_id = pool.generator_id.encode("utf-8")
    c, h, w = pool.image_shape
    buf = bytearray()
    buf += _MAGIC
    buf += struct.pack("<HB", _FORMAT_VERSION, _CHECKSUM_CRC32)
    buf += struct.pack("<5I", pool.d_lat, c, h, w, pool.V)
    buf += struct.pack("<ddqI", pool.tau_K, pool.tau_D, pool.build_seed,
                       len(pool.entries))
    buf += struct.pack("<H", len(gen_id)) + gen_id
    for e in pool.entries:
        entry = bytearray()
        entry += struct.pack("<qdd", e.latent.seed, e.latent.p_K, e.latent.p_D)
        entry += e.latent.values.astype("<f4").tobytes()
        entry += e.image.values.astype("<f4").tobytes()
        entry += struct.pack("<I", zlib.crc32(bytes(entry)))
        buf += entry
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    try:
        with open(path, "wb") as fh:
            fh.write(bytes(buf))
    except OSError as exc:
        raise IoFailure(f"cannot write pool file {path}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ChecksumMismatch("pool file truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_pool(path) -> LatentPool:
    """Read and verify a pool file; raises on version or checksum problems."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read pool file {path}: {exc}") from exc
    if len(data) < len(_MAGIC) + 4 or data[:len(_MAGIC)] != _MAGIC:
        raise IoFailure(f"{path} is not a latent pool file")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) != stored_crc:
        raise ChecksumMismatch(f"{path}: whole-file checksum mismatch")

    r = _Reader(data[:-4])
    r.take(len(_MAGIC))
    version, algo = r.unpack("<HB")
    if version != _FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"{path}: format version {version}, supported {_FORMAT_VERSION}")
    if algo != _CHECKSUM_CRC32:
        raise FormatVersionMismatch(f"{path}: unknown checksum algorithm {algo}")
    d_lat, c, h, w, v = r.unpack("<5I")
    tau_K, tau_D, build_seed, count = r.unpack("<ddqI")
    (id_len,) = r.unpack("<H")
    generator_id = r.take(id_len).decode("utf-8")

    d_pix = c * h * w
    entries = []
    for _ in range(count):
        start = r.pos
        seed, p_K, p_D = r.unpack("<qdd")
        latent = np.frombuffer(r.take(4 * d_lat), dtype="<f4").astype(np.float64)
        image = np.frombuffer(r.take(4 * d_pix), dtype="<f4").astype(np.float64)
        body = r.data[start:r.pos]
        (crc,) = r.unpack("<I")
        if zlib.crc32(body) != crc:
            raise ChecksumMismatch(f"{path}: entry checksum mismatch")
        entries.append(PoolEntry(
            latent=LatentCode(values=latent, seed=seed, p_K=p_K, p_D=p_D),
            image=ImageSample(image.reshape(c, h, w)),
        ))
    return LatentPool(entries=tuple(entries), V=v, tau_K=tau_K, tau_D=tau_D,
                      generator_id=generator_id, build_seed=build_seed)
