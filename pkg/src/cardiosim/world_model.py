"""Action-conditioned latent dynamics with an ODE-template energy anchor.

The prior chain per transition: decode the current latent to a beat window,
anchor the cardiac phase at its final sample, modulate the template
parameters with the action, integrate one horizon of the ODE, and project
the trajectory through a learnable map into latent space. Training
regularizes the denoiser's clean-latent prediction toward that anchor with
a noise-level-dependent weight, jointly optimizing the denoiser and the
projection.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .actions import Action, Registry
from .codec import CodecParams, LatentState, decode
from .diffusion import NoiseSchedule, ancestral_sample, build_schedule
from .ecg_ode import PhaseWindow, OdeParams, TWO_PI, integrate_rk4
from .metrics import NoBeatsDetected, PatientProfile, phase_anchor
from .nn import AdamW, DivergenceError, Mlp, cosine_lr

_WM_MAGIC = b"CWMWM1"
_TRANS_MAGIC = b"CWMTRANS1"


# ---------------------------------------------------------------------------
# Conditioning
# ---------------------------------------------------------------------------


def action_features(action: Action, registry: Registry) -> np.ndarray:
    """Multi-hot drug indicator plus the scalar dose."""
    ids = registry.drug_ids()
    vec = np.zeros(len(ids) + 1)
    for drug_id in action.drug_ids:
        vec[ids.index(drug_id)] = 1.0
    vec[-1] = action.dose
    return vec


def conditioning_vector(z_k: np.ndarray, action: Action, profile: PatientProfile,
                        registry: Registry) -> np.ndarray:
    return np.concatenate([np.asarray(z_k, dtype=np.float64),
                           action_features(action, registry),
                           profile.features()])


def tau_embedding(tau: int, emb_dim: int, n_steps: int) -> np.ndarray:
    """Sinusoidal embedding of the normalized diffusion step."""
    half = emb_dim // 2
    freqs = np.exp(np.linspace(0.0, math.log(1000.0), half))
    angle = (tau / n_steps) * freqs
    return np.concatenate([np.sin(angle), np.cos(angle)])


# ---------------------------------------------------------------------------
# Parameter bundles
# ---------------------------------------------------------------------------


@dataclass
class DenoiserParams:
    """Clean-latent predictor: input (z_tau, tau embedding, conditioning)."""

    net: Mlp
    d: int
    emb_dim: int
    cond_dim: int
    n_steps: int

    def __post_init__(self) -> None:
        if self.net.in_dim != self.d + self.emb_dim + self.cond_dim:
            raise ValueError("denoiser input size inconsistent with d/emb/cond")
        if self.net.out_dim != self.d:
            raise ValueError("denoiser must emit a d-dimensional prediction")

    def features(self, z_tau: np.ndarray, tau: int, cond: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(z_tau, dtype=np.float64),
                               tau_embedding(tau, self.emb_dim, self.n_steps),
                               cond])

    def __call__(self, z_tau: np.ndarray, tau: int, cond: np.ndarray) -> np.ndarray:
        return self.net(self.features(z_tau, tau, cond)[None, :])[0]


@dataclass
class ProjectionParams:
    """Temporal resampler to a fixed length followed by a small dense map."""

    net: Mlp
    input_len: int
    d: int

    def __post_init__(self) -> None:
        if self.net.in_dim != self.input_len or self.net.out_dim != self.d:
            raise ValueError("projection net shape inconsistent")

    def resample(self, e_epk: np.ndarray) -> np.ndarray:
        e = np.asarray(e_epk, dtype=np.float64).reshape(-1)
        if e.size == self.input_len:
            return e
        src = np.linspace(0.0, 1.0, e.size)
        dst = np.linspace(0.0, 1.0, self.input_len)
        return np.interp(dst, src, e)


@dataclass(frozen=True)
class EpkAnchor:
    """ODE trajectory and its latent projection for one (state, action)."""

    e_epk: np.ndarray
    z_epk: np.ndarray

    def __post_init__(self) -> None:
        if not (np.all(np.isfinite(self.e_epk)) and np.all(np.isfinite(self.z_epk))):
            raise ValueError("anchor must be finite")


# ---------------------------------------------------------------------------
# EPK construction chain
# ---------------------------------------------------------------------------


def build_epk(z_k: LatentState | np.ndarray, action: Action, codec: CodecParams,
              base_params: OdeParams, window: PhaseWindow, registry: Registry,
              lead_scale: float = 1.0, fallback_phase_zero: bool = False) -> np.ndarray:
    e, _ = build_epk_info(z_k, action, codec, base_params, window, registry,
                          lead_scale, fallback_phase_zero)
    return e


def build_epk_info(z_k: LatentState | np.ndarray, action: Action, codec: CodecParams,
                   base_params: OdeParams, window: PhaseWindow, registry: Registry,
                   lead_scale: float = 1.0,
                   fallback_phase_zero: bool = False) -> tuple[np.ndarray, bool]:
    """ODE trajectory for the next horizon, anchored at the decoded state.

    decode -> phase anchor -> modulate -> integrate. The window supplies the
    horizon and sample count; its start is replaced by the anchored phase.
    Returns (trajectory, fallback_used). Without the fallback flag a failed
    anchor propagates NoBeatsDetected.
    """
    from .actions import modulate  # local import keeps module load order simple

    x_hat = decode(codec, z_k)
    fallback = False
    try:
        anchor = phase_anchor(x_hat)
    except NoBeatsDetected:
        if not fallback_phase_zero:
            raise
        anchor, fallback = 0.0, True
    params_a = modulate(base_params, action, registry)
    theta_start = (params_a.component("R").theta + anchor) % TWO_PI
    y_anchor = float(x_hat.samples[0, -1]) / lead_scale
    traj = integrate_rk4(params_a, y_anchor,
                         PhaseWindow(theta_start=theta_start,
                                     delta_theta=window.delta_theta,
                                     length=window.length))
    return traj, fallback


def project_epk(e_epk: np.ndarray, proj: ProjectionParams) -> np.ndarray:
    """Deterministic resample-then-map into latent space."""
    e = np.asarray(e_epk, dtype=np.float64).reshape(-1)
    return proj.net(proj.resample(e)[None, :])[0]


def epk_energy(z0_hat: np.ndarray, z_epk: np.ndarray) -> float:
    """Squared distance to the anchor; gradient wrt z0_hat is
    2 (z0_hat - z_epk)."""
    a = np.asarray(z0_hat, dtype=np.float64)
    b = np.asarray(z_epk, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    d = a - b
    return float(np.dot(d.ravel(), d.ravel()))


def time_weight(tau: int, schedule: NoiseSchedule, eps_stab: float) -> float:
    """Inverse noise variance weight 1 / ((1 - abar_tau) + eps_stab)."""
    schedule.check_tau(tau)
    if eps_stab <= 0:
        raise ValueError("eps_stab must be positive")
    return 1.0 / ((1.0 - schedule.alpha_bars[tau]) + eps_stab)


# ---------------------------------------------------------------------------
# Transition dataset
# ---------------------------------------------------------------------------


@dataclass
class TransitionDataset:
    """Latent transitions (z_k, z_{k+1}) with the action that drove each."""

    z_k: np.ndarray
    z_next: np.ndarray
    actions: list[Action]
    drug_ids: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (len(self.z_k) == len(self.z_next) == len(self.actions)) or len(self.z_k) == 0:
            raise ValueError("need a non-empty, aligned transition set")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def d(self) -> int:
        return self.z_k.shape[1]

    def save(self, path: str) -> None:
        table = sorted({json.dumps(a.to_dict(), sort_keys=True) for a in self.actions})
        index = {t: i for i, t in enumerate(table)}
        header = json.dumps({
            "n": len(self), "d": self.d, "drug_ids": list(self.drug_ids),
            "actions": [json.loads(t) for t in table], "meta": self.meta,
        }).encode()
        rows = np.empty((len(self), 2 * self.d + 2), dtype="<f4")
        rows[:, :self.d] = self.z_k
        rows[:, self.d:2 * self.d] = self.z_next
        for i, a in enumerate(self.actions):
            rows[i, -2] = index[json.dumps(a.to_dict(), sort_keys=True)]
            rows[i, -1] = a.dose
        with open(path, "wb") as fh:
            fh.write(_TRANS_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(rows.tobytes())

    @classmethod
    def load(cls, path: str) -> "TransitionDataset":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:len(_TRANS_MAGIC)] != _TRANS_MAGIC:
            raise ValueError("not a transition dataset (bad magic)")
        hlen = struct.unpack_from("<I", blob, len(_TRANS_MAGIC))[0]
        ofs = len(_TRANS_MAGIC) + 4
        meta = json.loads(blob[ofs:ofs + hlen].decode())
        n, d = meta["n"], meta["d"]
        rows = np.frombuffer(blob, dtype="<f4", offset=ofs + hlen) \
            .reshape(n, 2 * d + 2).astype(np.float64)
        table = [Action.from_dict(a) for a in meta["actions"]]
        actions = [table[int(rows[i, -2])] for i in range(n)]
        return cls(z_k=rows[:, :d], z_next=rows[:, d:2 * d], actions=actions,
                   drug_ids=tuple(meta["drug_ids"]), meta=meta.get("meta", {}))


# ---------------------------------------------------------------------------
# Joint loss
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    c: float = 0.25                  # energy weight on the anchor term
    lr: float = 5e-4
    batch_size: int = 64
    epochs: int = 200
    eps_stab: float = 1e-5
    seed: int = 0
    n_steps: int = 100
    schedule_kind: str = "linear"
    beta_min: float = 1e-4
    beta_max: float = 0.02
    hidden: tuple[int, ...] = (64, 64)
    emb_dim: int = 8
    proj_input_len: int = 64
    proj_hidden: tuple[int, ...] = (32,)
    omega_clamp: float = 10.0
    horizon: float = TWO_PI          # phase span of one step's EPK window
    epk_length: int = 256
    fallback_phase_zero: bool = False

    def __post_init__(self) -> None:
        if self.c < 0:
            raise ValueError("c must be non-negative")
        if self.eps_stab <= 0:
            raise ValueError("eps_stab must be positive")


def _param_groups(denoiser: DenoiserParams, proj: ProjectionParams) -> dict[str, np.ndarray]:
    groups = {}
    for name, arr in denoiser.net.param_groups().items():
        groups[f"den.{name}"] = arr
    for name, arr in proj.net.param_groups().items():
        groups[f"proj.{name}"] = arr
    return groups


def loss_joint(z_next: np.ndarray, cond: np.ndarray, proj_in: np.ndarray,
               taus: np.ndarray, eps: np.ndarray, denoiser: DenoiserParams,
               proj: ProjectionParams, schedule: NoiseSchedule,
               config: TrainConfig) -> tuple[float, float, float, dict[str, np.ndarray]]:
    """Batch loss ||z_next - z0_hat||^2 + c * omega_tau * ||z0_hat - z_epk||^2
    with analytic gradients for the denoiser and the projection.

    Deterministic given the pre-drawn (taus, eps); omega is the exact
    inverse-variance weight clamped at config.omega_clamp.
    (batch mean of per-sample vector norms; returns (loss, data term,
    energy term, grads)).
    """
    b, d = z_next.shape
    abar = schedule.alpha_bars[taus]
    z_tau = np.sqrt(abar)[:, None] * z_next + np.sqrt(1.0 - abar)[:, None] * eps

    emb = np.stack([tau_embedding(int(t), denoiser.emb_dim, denoiser.n_steps)
                    for t in taus])
    den_in = np.concatenate([z_tau, emb, cond], axis=1)
    z0_hat, den_cache = denoiser.net.forward(den_in)
    z_epk, proj_cache = proj.net.forward(proj_in)

    omega = 1.0 / ((1.0 - abar) + config.eps_stab)
    omega = np.minimum(omega, config.omega_clamp)

    d_data = z_next - z0_hat
    d_epk = z0_hat - z_epk
    data_term = float(np.mean(np.sum(d_data * d_data, axis=1)))
    energy_term = float(np.mean(config.c * omega * np.sum(d_epk * d_epk, axis=1)))
    loss = data_term + energy_term

    dz0 = (-2.0 * d_data + (config.c * omega)[:, None] * 2.0 * d_epk) / b
    den_dw, den_db, _ = denoiser.net.backward(den_cache, dz0)
    dzepk = -(config.c * omega)[:, None] * 2.0 * d_epk / b
    proj_dw, proj_db, _ = proj.net.backward(proj_cache, dzepk)

    grads: dict[str, np.ndarray] = {}
    for i, (dw, db) in enumerate(zip(den_dw, den_db)):
        grads[f"den.layer{i}.W"] = dw
        grads[f"den.layer{i}.b"] = db
    for i, (dw, db) in enumerate(zip(proj_dw, proj_db)):
        grads[f"proj.layer{i}.W"] = dw
        grads[f"proj.layer{i}.b"] = db
    return loss, data_term, energy_term, grads


# ---------------------------------------------------------------------------
# World model bundle, training, prediction
# ---------------------------------------------------------------------------


@dataclass
class WorldModel:
    """Denoiser + projection + the latent standardization they assume.

    The dynamics run in standardized latent space ((z - mean) / scale) so
    the N(0, I) prior of ancestral sampling matches the data; raw latents
    are converted at the public boundaries.
    """

    denoiser: DenoiserParams
    projection: ProjectionParams
    schedule: NoiseSchedule
    config: TrainConfig
    drug_ids: tuple[str, ...]
    z_mean: np.ndarray = None
    z_scale: float = 1.0
    log: list[dict] = field(default_factory=list)
    epoch: int = 0

    def __post_init__(self) -> None:
        if self.z_mean is None:
            self.z_mean = np.zeros(self.denoiser.d)

    def normalize(self, z: np.ndarray) -> np.ndarray:
        return (np.asarray(z, dtype=np.float64) - self.z_mean) / self.z_scale

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.z_scale + self.z_mean

    def save(self, path: str) -> None:
        header = json.dumps({
            "d": self.denoiser.d, "n_steps": self.config.n_steps,
            "schedule": {"kind": self.config.schedule_kind,
                         "beta_min": self.config.beta_min,
                         "beta_max": self.config.beta_max},
            "c": self.config.c, "seed": self.config.seed, "epoch": self.epoch,
            "losses": self.log,
            "z_mean": self.z_mean.tolist(), "z_scale": self.z_scale,
            "config": {
                "lr": self.config.lr, "batch_size": self.config.batch_size,
                "epochs": self.config.epochs, "eps_stab": self.config.eps_stab,
                "hidden": list(self.config.hidden), "emb_dim": self.config.emb_dim,
                "proj_input_len": self.config.proj_input_len,
                "proj_hidden": list(self.config.proj_hidden),
                "omega_clamp": self.config.omega_clamp,
                "horizon": self.config.horizon, "epk_length": self.config.epk_length,
                "fallback_phase_zero": self.config.fallback_phase_zero,
                "c": self.config.c, "seed": self.config.seed,
                "n_steps": self.config.n_steps,
                "schedule_kind": self.config.schedule_kind,
                "beta_min": self.config.beta_min, "beta_max": self.config.beta_max,
            },
            "denoiser": {"sizes": self.denoiser.net.sizes,
                         "activations": self.denoiser.net.activations,
                         "emb_dim": self.denoiser.emb_dim,
                         "cond_dim": self.denoiser.cond_dim},
            "projection": {"sizes": self.projection.net.sizes,
                           "activations": self.projection.net.activations,
                           "input_len": self.projection.input_len},
            "drug_ids": list(self.drug_ids),
        }).encode()
        flat = np.concatenate([self.denoiser.net.get_flat(),
                               self.projection.net.get_flat()])
        with open(path, "wb") as fh:
            fh.write(_WM_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(flat.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str) -> "WorldModel":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:len(_WM_MAGIC)] != _WM_MAGIC:
            raise ValueError("not a world-model checkpoint (bad magic)")
        hlen = struct.unpack_from("<I", blob, len(_WM_MAGIC))[0]
        ofs = len(_WM_MAGIC) + 4
        meta = json.loads(blob[ofs:ofs + hlen].decode())
        cfg_d = dict(meta["config"])
        cfg_d["hidden"] = tuple(cfg_d["hidden"])
        cfg_d["proj_hidden"] = tuple(cfg_d["proj_hidden"])
        config = TrainConfig(**cfg_d)
        den_net = Mlp.create(meta["denoiser"]["sizes"], meta["denoiser"]["activations"], 0)
        proj_net = Mlp.create(meta["projection"]["sizes"], meta["projection"]["activations"], 0)
        flat = np.frombuffer(blob, dtype="<f8", offset=ofs + hlen)
        den_net.set_flat(flat[:den_net.n_params()])
        proj_net.set_flat(flat[den_net.n_params():den_net.n_params() + proj_net.n_params()])
        denoiser = DenoiserParams(net=den_net, d=meta["d"],
                                  emb_dim=meta["denoiser"]["emb_dim"],
                                  cond_dim=meta["denoiser"]["cond_dim"],
                                  n_steps=meta["n_steps"])
        projection = ProjectionParams(net=proj_net,
                                      input_len=meta["projection"]["input_len"],
                                      d=meta["d"])
        schedule = build_schedule(meta["schedule"]["kind"], meta["n_steps"],
                                  meta["schedule"]["beta_min"], meta["schedule"]["beta_max"])
        return cls(denoiser=denoiser, projection=projection, schedule=schedule,
                   config=config, drug_ids=tuple(meta["drug_ids"]),
                   z_mean=np.asarray(meta["z_mean"]), z_scale=meta["z_scale"],
                   log=meta["losses"], epoch=meta["epoch"])


def epk_window(config: TrainConfig) -> PhaseWindow:
    return PhaseWindow(theta_start=0.0, delta_theta=config.horizon
                       * (config.epk_length - 1) / config.epk_length,
                       length=config.epk_length)


def init_world_model(d: int, cond_dim: int, config: TrainConfig,
                     drug_ids: tuple[str, ...]) -> WorldModel:
    den_sizes = [d + config.emb_dim + cond_dim, *config.hidden, d]
    den_acts = ["tanh"] * len(config.hidden) + ["identity"]
    den = DenoiserParams(net=Mlp.create(den_sizes, den_acts, seed=config.seed),
                         d=d, emb_dim=config.emb_dim, cond_dim=cond_dim,
                         n_steps=config.n_steps)
    proj_sizes = [config.proj_input_len, *config.proj_hidden, d]
    proj_acts = ["tanh"] * len(config.proj_hidden) + ["identity"]
    proj = ProjectionParams(net=Mlp.create(proj_sizes, proj_acts, seed=config.seed + 1),
                            input_len=config.proj_input_len, d=d)
    schedule = build_schedule(config.schedule_kind, config.n_steps,
                              config.beta_min, config.beta_max)
    return WorldModel(denoiser=den, projection=proj, schedule=schedule,
                      config=config, drug_ids=drug_ids)


def prepare_epk_inputs(dataset: TransitionDataset, codec: CodecParams,
                       base_params: OdeParams, registry: Registry,
                       config: TrainConfig, lead_scale: float = 1.0,
                       profile: PatientProfile | None = None
                       ) -> tuple[np.ndarray, np.ndarray, int]:
    """Precompute conditioning vectors and resampled anchor trajectories for
    every transition (teacher forcing: the anchor chain sees the true z_k).
    Returns (cond matrix, projection inputs, fallback count)."""
    profile = profile or PatientProfile()
    window = epk_window(config)
    cond_rows, proj_rows, fallbacks = [], [], 0
    proj_probe = ProjectionParams(net=Mlp.identity(config.proj_input_len),
                                  input_len=config.proj_input_len,
                                  d=config.proj_input_len)
    for i in range(len(dataset)):
        action = dataset.actions[i]
        cond_rows.append(conditioning_vector(dataset.z_k[i], action, profile, registry))
        e, fb = build_epk_info(dataset.z_k[i], action, codec, base_params, window,
                               registry, lead_scale=lead_scale,
                               fallback_phase_zero=config.fallback_phase_zero)
        fallbacks += int(fb)
        proj_rows.append(proj_probe.resample(e))
    return np.asarray(cond_rows), np.asarray(proj_rows), fallbacks


def latent_stats(dataset: TransitionDataset) -> tuple[np.ndarray, float]:
    """Per-dimension mean and one scalar scale over all latents in the set."""
    stacked = np.vstack([dataset.z_k, dataset.z_next])
    mean = stacked.mean(axis=0)
    scale = float(np.mean(stacked.std(axis=0)))
    return mean, max(scale, 1e-8)


def train_world_model(dataset: TransitionDataset, codec: CodecParams,
                      base_params: OdeParams, registry: Registry,
                      config: TrainConfig, lead_scale: float = 1.0,
                      profile: PatientProfile | None = None,
                      checkpoint_dir: str | None = None,
                      prepared: tuple[np.ndarray, np.ndarray, int] | None = None
                      ) -> WorldModel:
    """Joint training of denoiser and projection on latent transitions.

    AdamW with cosine-annealed learning rate; the log records the data and
    energy terms separately per epoch. Bitwise deterministic for a fixed
    config and seed. Optionally writes a checkpoint every epoch. `prepared`
    short-circuits the EPK precompute when sweeping configs on a fixed
    dataset.
    """
    if tuple(dataset.drug_ids) != registry.drug_ids():
        raise ValueError("dataset drug table does not match the registry")
    if prepared is None:
        prepared = prepare_epk_inputs(dataset, codec, base_params, registry,
                                      config, lead_scale, profile)
    cond_raw, proj_in, fallbacks = prepared
    d = dataset.d
    z_mean, z_scale = latent_stats(dataset)
    model = init_world_model(d, cond_raw.shape[1], config, registry.drug_ids())
    model.z_mean, model.z_scale = z_mean, z_scale

    # the conditioning's leading d entries are the raw z_k: standardize them
    cond = cond_raw.copy()
    cond[:, :d] = (cond_raw[:, :d] - z_mean) / z_scale
    z_next = (dataset.z_next - z_mean) / z_scale

    names = list(_param_groups(model.denoiser, model.projection))
    groups = _param_groups(model.denoiser, model.projection)
    opt = AdamW([groups[k] for k in names], lr=config.lr, weight_decay=0.0)
    rng = np.random.default_rng(config.seed)
    n = len(dataset)
    for epoch in range(config.epochs):
        lr = cosine_lr(config.lr, epoch, config.epochs)
        order = rng.permutation(n)
        tot = np.zeros(3)
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            taus = rng.integers(1, config.n_steps + 1, size=len(idx))
            eps = rng.standard_normal((len(idx), d))
            loss, data_t, energy_t, grads = loss_joint(
                z_next[idx], cond[idx], proj_in[idx], taus, eps,
                model.denoiser, model.projection, model.schedule, config)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"world-model loss diverged at epoch {epoch} (batch {batches})")
            opt.step([grads[k] for k in names], lr=lr)
            tot += (loss, data_t, energy_t)
            batches += 1
        model.log.append({"epoch": epoch, "loss": tot[0] / batches,
                          "data": tot[1] / batches, "energy": tot[2] / batches,
                          "lr": lr, "epk_fallbacks": fallbacks})
        model.epoch = epoch + 1
        if checkpoint_dir is not None:
            model.save(f"{checkpoint_dir}/wm_epoch{epoch:04d}.ckpt")
    return model


@dataclass(frozen=True)
class PredictionBatch:
    states: list[LatentState]
    seeds: list[int]
    failures: list[dict]

    @property
    def complete(self) -> bool:
        return not self.failures


def predict_next(z_k: LatentState | np.ndarray, action: Action, k_samples: int,
                 model: WorldModel, registry: Registry,
                 profile: PatientProfile | None = None,
                 seeds: list[int] | None = None) -> PredictionBatch:
    """K independent denoised draws of the next latent state.

    Per-sample seeds are recorded in the result; individual sampler
    failures are flagged rather than aborting the batch.
    """
    if k_samples < 1:
        raise ValueError("k_samples must be >= 1")
    profile = profile or PatientProfile()
    vec = z_k.z if isinstance(z_k, LatentState) else np.asarray(z_k, dtype=np.float64)
    cond = conditioning_vector(model.normalize(vec), action, profile, registry)
    if seeds is None:
        seeds = list(range(k_samples))
    if len(seeds) != k_samples:
        raise ValueError("need one seed per sample")
    denoise = lambda z, tau, c: model.denoiser(z, tau, c)
    states, failures = [], []
    for seed in seeds:
        try:
            raw = ancestral_sample(denoise, cond, model.schedule,
                                   seed, model.denoiser.d)
            states.append(LatentState(z=model.denormalize(raw.z)))
        except DivergenceError as exc:
            failures.append({"seed": seed, "error": str(exc)})
    return PredictionBatch(states=states, seeds=list(seeds), failures=failures)
