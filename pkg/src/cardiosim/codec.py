"""Trainable encoder/decoder pair between beat windows and latent vectors.

A beat window is a C x W sample block, beat-aligned with the R peak a
quarter of the way in and resampled to a fixed per-channel length. The
codec flattens it, runs a small dense net each way, and exposes a
deterministic mode (the default) and a variational mode with mean/logvar
heads and a KL penalty. An empirical probe estimates the decoder's local
bi-Lipschitz constants over sampled latent pairs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .ecg_ode import Waveform
from .metrics import pan_tompkins_rpeaks
from .nn import AdamW, DivergenceError, Mlp, cosine_lr

_CODEC_MAGIC = b"CWMCODEC1"

R_OFFSET_FRAC = 0.25  # R peak position inside a beat window


@dataclass(frozen=True)
class LatentState:
    """A d-dimensional latent cardiac state."""

    z: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.z, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("latent state must be finite")
        object.__setattr__(self, "z", arr)

    @property
    def d(self) -> int:
        return self.z.size


@dataclass
class CodecParams:
    """Encoder/decoder weights plus the window geometry they assume."""

    encoder: Mlp
    decoder: Mlp
    d: int
    n_channels: int
    window: int
    sample_rate: float
    kl_weight: float = 0.0
    seed: int = 0
    losses: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        expected_out = 2 * self.d if self.variational else self.d
        if self.encoder.out_dim != expected_out:
            raise ValueError("encoder output dimension inconsistent with d")
        if self.decoder.in_dim != self.d:
            raise ValueError("decoder input dimension must equal d")
        if self.decoder.out_dim != self.n_channels * self.window:
            raise ValueError("decoder output must match the flattened window")

    @property
    def variational(self) -> bool:
        return self.kl_weight > 0.0

    @classmethod
    def identity(cls, n_channels: int, window: int, sample_rate: float) -> "CodecParams":
        n = n_channels * window
        return cls(encoder=Mlp.identity(n), decoder=Mlp.identity(n), d=n,
                   n_channels=n_channels, window=window, sample_rate=sample_rate)

    # -- checkpoint io ------------------------------------------------------

    def save(self, path: str) -> None:
        header = json.dumps({
            "encoder": {"sizes": self.encoder.sizes, "activations": self.encoder.activations},
            "decoder": {"sizes": self.decoder.sizes, "activations": self.decoder.activations},
            "d": self.d, "n_channels": self.n_channels, "window": self.window,
            "sample_rate": self.sample_rate, "kl_weight": self.kl_weight,
            "seed": self.seed, "losses": self.losses,
        }).encode()
        flat = np.concatenate([self.encoder.get_flat(), self.decoder.get_flat()])
        with open(path, "wb") as fh:
            fh.write(_CODEC_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(flat.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str) -> "CodecParams":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:len(_CODEC_MAGIC)] != _CODEC_MAGIC:
            raise ValueError("not a codec checkpoint (bad magic)")
        hlen = struct.unpack_from("<I", blob, len(_CODEC_MAGIC))[0]
        ofs = len(_CODEC_MAGIC) + 4
        meta = json.loads(blob[ofs:ofs + hlen].decode())
        enc = Mlp.create(meta["encoder"]["sizes"], meta["encoder"]["activations"], seed=0)
        dec = Mlp.create(meta["decoder"]["sizes"], meta["decoder"]["activations"], seed=0)
        flat = np.frombuffer(blob, dtype="<f8", offset=ofs + hlen)
        enc.set_flat(flat[:enc.n_params()])
        dec.set_flat(flat[enc.n_params():enc.n_params() + dec.n_params()])
        return cls(encoder=enc, decoder=dec, d=meta["d"], n_channels=meta["n_channels"],
                   window=meta["window"], sample_rate=meta["sample_rate"],
                   kl_weight=meta["kl_weight"], seed=meta["seed"], losses=meta["losses"])


def _resample_channels(samples: np.ndarray, length: int) -> np.ndarray:
    c, t = samples.shape
    if t == length:
        return samples
    src = np.linspace(0.0, 1.0, t)
    dst = np.linspace(0.0, 1.0, length)
    return np.vstack([np.interp(dst, src, samples[i]) for i in range(c)])


def encode(codec: CodecParams, w: Waveform) -> LatentState:
    """Map a beat window to its latent state (mean head in variational
    mode). Inputs with a different length are linearly resampled per
    channel; a channel-count mismatch is an error."""
    if w.n_channels != codec.n_channels:
        raise ValueError(f"expected {codec.n_channels} channels, got {w.n_channels}")
    x = _resample_channels(w.samples, codec.window).reshape(1, -1)
    out = codec.encoder(x)[0]
    return LatentState(z=out[:codec.d])


def encode_sample(codec: CodecParams, w: Waveform, seed: int = 0) -> LatentState:
    """Posterior draw from a variational codec (mean + exp(logvar/2) * xi);
    falls back to the deterministic encoding when kl_weight is zero."""
    if w.n_channels != codec.n_channels:
        raise ValueError(f"expected {codec.n_channels} channels, got {w.n_channels}")
    x = _resample_channels(w.samples, codec.window).reshape(1, -1)
    out = codec.encoder(x)[0]
    if not codec.variational:
        return LatentState(z=out[:codec.d])
    mu, logvar = out[:codec.d], out[codec.d:]
    xi = np.random.default_rng(seed).standard_normal(codec.d)
    return LatentState(z=mu + np.exp(0.5 * logvar) * xi)


def decode(codec: CodecParams, z: LatentState | np.ndarray) -> Waveform:
    vec = z.z if isinstance(z, LatentState) else np.asarray(z, dtype=np.float64).reshape(-1)
    if vec.size != codec.d:
        raise ValueError(f"expected latent dimension {codec.d}, got {vec.size}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("latent state must be finite")
    flat = codec.decoder(vec[None, :])[0]
    return Waveform(samples=flat.reshape(codec.n_channels, codec.window),
                    sample_rate=codec.sample_rate)


def beat_windows(w: Waveform, window: int = 256) -> list[np.ndarray]:
    """Cut beat-aligned C x window blocks out of a recording.

    Each block spans one median-RR cycle positioned so the R peak sits at
    R_OFFSET_FRAC of the window, then is resampled to `window` samples per
    channel.
    """
    peaks = pan_tompkins_rpeaks(w)
    if len(peaks) < 2:
        return []
    rr = int(round(float(np.median(np.diff(peaks)))))
    offset = int(round(R_OFFSET_FRAC * rr))
    out = []
    for r in peaks:
        start = r - offset
        if start < 0 or start + rr > w.n_samples:
            continue
        out.append(_resample_channels(w.samples[:, start:start + rr], window))
    return out


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CodecTrainConfig:
    d: int = 16
    hidden: tuple[int, ...] = (64,)
    window: int = 256
    sample_rate: float = 256.0
    kl_weight: float = 0.0
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be non-negative")


def _codec_loss_and_grads(codec: CodecParams, x: np.ndarray,
                          xi: np.ndarray | None) -> tuple[float, float, dict[str, np.ndarray]]:
    """(reconstruction mse, kl term, grads keyed enc.*/dec.*) for one batch.

    `xi` is the fixed reparameterization draw in variational mode; the
    function is deterministic given it, which is what the finite-difference
    gradient contract checks.
    """
    b, f = x.shape
    d = codec.d
    enc_out, enc_cache = codec.encoder.forward(x)
    if codec.variational:
        mu, logvar = enc_out[:, :d], enc_out[:, d:]
        std = np.exp(0.5 * logvar)
        z = mu + std * xi
        kl = float(np.mean(-0.5 * np.sum(1.0 + logvar - mu * mu - np.exp(logvar), axis=1)))
    else:
        mu, logvar, std = enc_out, None, None
        z = mu
        kl = 0.0

    recon, dec_cache = codec.decoder.forward(z)
    diff = recon - x
    mse = float(np.mean(diff * diff))

    dout = 2.0 * diff / (b * f)
    dec_dw, dec_db, dz = codec.decoder.backward(dec_cache, dout)

    if codec.variational:
        dmu = dz + codec.kl_weight * mu / b
        dlogvar = dz * (0.5 * std * xi) + codec.kl_weight * 0.5 * (np.exp(logvar) - 1.0) / b
        denc = np.concatenate([dmu, dlogvar], axis=1)
    else:
        denc = dz
    enc_dw, enc_db, _ = codec.encoder.backward(enc_cache, denc)

    grads: dict[str, np.ndarray] = {}
    for i, (dw, db) in enumerate(zip(enc_dw, enc_db)):
        grads[f"enc.layer{i}.W"] = dw
        grads[f"enc.layer{i}.b"] = db
    for i, (dw, db) in enumerate(zip(dec_dw, dec_db)):
        grads[f"dec.layer{i}.W"] = dw
        grads[f"dec.layer{i}.b"] = db
    return mse, kl, grads


def codec_param_groups(codec: CodecParams) -> dict[str, np.ndarray]:
    groups = {}
    for name, arr in codec.encoder.param_groups().items():
        groups[f"enc.{name}"] = arr
    for name, arr in codec.decoder.param_groups().items():
        groups[f"dec.{name}"] = arr
    return groups


def train_codec(windows: np.ndarray | list[np.ndarray],
                config: CodecTrainConfig) -> CodecParams:
    """Fit the codec on a stack of beat windows.

    Accepts an (n, C, W) array or a list of C x W blocks. AdamW with cosine
    annealing; per-epoch reconstruction and KL losses are recorded on the
    returned params. Aborts with DivergenceError on a non-finite loss.
    """
    arr = np.asarray(windows, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, None, :]
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ValueError("need a non-empty (n, C, W) window stack")
    n, c, w_len = arr.shape
    if w_len != config.window:
        arr = np.stack([_resample_channels(blk, config.window) for blk in arr])
        w_len = config.window
    x_all = arr.reshape(n, c * w_len)

    feat = c * w_len
    enc_sizes = [feat, *config.hidden, 2 * config.d if config.kl_weight > 0 else config.d]
    dec_sizes = [config.d, *reversed(config.hidden), feat]
    acts = ["tanh"] * len(config.hidden) + ["identity"]
    codec = CodecParams(
        encoder=Mlp.create(enc_sizes, acts, seed=config.seed),
        decoder=Mlp.create(dec_sizes, acts, seed=config.seed + 1),
        d=config.d, n_channels=c, window=w_len, sample_rate=config.sample_rate,
        kl_weight=config.kl_weight, seed=config.seed,
    )

    names = list(codec_param_groups(codec))
    opt = AdamW([codec_param_groups(codec)[k] for k in names], lr=config.lr)
    rng = np.random.default_rng(config.seed)
    for epoch in range(config.epochs):
        lr = cosine_lr(config.lr, epoch, config.epochs)
        order = rng.permutation(n)
        ep_mse, ep_kl, batches = 0.0, 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x = x_all[idx]
            xi = rng.standard_normal((len(idx), config.d)) if codec.variational else None
            mse, kl, grads = _codec_loss_and_grads(codec, x, xi)
            loss = mse + config.kl_weight * kl
            if not np.isfinite(loss):
                raise DivergenceError(f"codec loss diverged at epoch {epoch}: {loss}")
            opt.step([grads[k] for k in names], lr=lr)
            ep_mse += mse
            ep_kl += kl
            batches += 1
        codec.losses.append({"epoch": epoch, "mse": ep_mse / batches, "kl": ep_kl / batches})
    return codec


# ---------------------------------------------------------------------------
# Bi-Lipschitz probe
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BiLipschitzEstimate:
    c1: float
    c2: float
    pair_lo: tuple[int, int]
    pair_hi: tuple[int, int]
    skipped: int


def bi_lipschitz_probe(codec: CodecParams, latents: np.ndarray,
                       pair_count: int = 200, seed: int = 0) -> BiLipschitzEstimate:
    """Empirical decoder expansion bounds over sampled latent pairs.

    c1/c2 are the min/max of ||dec(z) - dec(z')|| / ||z - z'||; coincident
    pairs are skipped and counted.
    """
    pts = np.asarray(latents, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two latent samples")
    rng = np.random.default_rng(seed)
    decoded = codec.decoder(pts)
    c1, c2 = np.inf, -np.inf
    pair_lo = pair_hi = (0, 1)
    skipped = 0
    for _ in range(pair_count):
        i, j = rng.choice(pts.shape[0], size=2, replace=False)
        dz = float(np.linalg.norm(pts[i] - pts[j]))
        if dz == 0.0:
            skipped += 1
            continue
        ratio = float(np.linalg.norm(decoded[i] - decoded[j])) / dz
        if ratio < c1:
            c1, pair_lo = ratio, (int(i), int(j))
        if ratio > c2:
            c2, pair_hi = ratio, (int(i), int(j))
    if not np.isfinite(c1):
        raise ValueError("all sampled pairs were coincident")
    return BiLipschitzEstimate(c1=c1, c2=c2, pair_lo=pair_lo, pair_hi=pair_hi,
                               skipped=skipped)
