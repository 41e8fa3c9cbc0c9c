"""Phase-driven ODE generator for synthetic ECG morphology.

The scalar template y(theta) obeys

    dy/dtheta = -sum_i a_i * dtheta_i * exp(-dtheta_i^2 / (2 b_i^2)) - (y - y0)

with one Gaussian bump per wave (P, Q, R, S, T) and a relaxation pull toward
the baseline y0. Integration is classical fixed-step RK4; multi-channel
recordings are the 1D template pushed through a lead-mixing vector plus
optional Gaussian noise.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

WAVE_LABELS = ("P", "Q", "R", "S", "T")

TWO_PI = 2.0 * math.pi

_WAVEFORM_MAGIC = b"CSIMWAVE"
_WAVEFORM_VERSION = 1


@dataclass(frozen=True)
class WaveComponent:
    """One Gaussian bump of the template: amplitude, width, phase center."""

    label: str
    alpha: float
    b: float
    theta: float

    def __post_init__(self) -> None:
        if self.label not in WAVE_LABELS:
            raise ValueError(f"label must be one of {WAVE_LABELS}, got {self.label!r}")
        if not (self.b > 0.0):
            raise ValueError(f"width b must be positive, got {self.b}")
        if not (0.0 <= self.theta < TWO_PI):
            raise ValueError(f"theta must lie in [0, 2*pi), got {self.theta}")
        if not (math.isfinite(self.alpha) and math.isfinite(self.b) and math.isfinite(self.theta)):
            raise ValueError("wave parameters must be finite")


@dataclass(frozen=True)
class OdeParams:
    """Full template parameter set: five labelled waves plus baseline."""

    components: tuple[WaveComponent, ...]
    y0: float = 0.0

    def __post_init__(self) -> None:
        labels = tuple(c.label for c in self.components)
        if sorted(labels) != sorted(WAVE_LABELS):
            raise ValueError(f"need exactly one component per label {WAVE_LABELS}, got {labels}")
        if not math.isfinite(self.y0):
            raise ValueError("y0 must be finite")

    def component(self, label: str) -> WaveComponent:
        for c in self.components:
            if c.label == label:
                return c
        raise KeyError(label)

    def replace_component(self, comp: WaveComponent) -> "OdeParams":
        comps = tuple(comp if c.label == comp.label else c for c in self.components)
        return OdeParams(components=comps, y0=self.y0)

    def with_y0(self, y0: float) -> "OdeParams":
        return OdeParams(components=self.components, y0=y0)

    def to_json(self) -> str:
        return json.dumps({
            "waves": [{"label": c.label, "alpha": c.alpha, "b": c.b, "theta": c.theta}
                      for c in self.components],
            "y0": self.y0,
        })

    @classmethod
    def from_json(cls, text: str) -> "OdeParams":
        obj = json.loads(text)
        comps = tuple(WaveComponent(label=w["label"], alpha=w["alpha"], b=w["b"], theta=w["theta"])
                      for w in obj["waves"])
        return cls(components=comps, y0=obj["y0"])


def healthy_params() -> OdeParams:
    """Canonical healthy morphology preset (artifact constant)."""
    thetas = (-math.pi / 3.0, -math.pi / 12.0, 0.0, math.pi / 12.0, math.pi / 2.0)
    alphas = (1.2, -5.0, 30.0, -7.5, 0.75)
    widths = (0.25, 0.1, 0.1, 0.1, 0.4)
    comps = tuple(
        WaveComponent(label=lab, alpha=a, b=b, theta=t % TWO_PI)
        for lab, a, b, t in zip(WAVE_LABELS, alphas, widths, thetas)
    )
    return OdeParams(components=comps, y0=0.0)


PRESETS = {"healthy": healthy_params}


@dataclass(frozen=True)
class PhaseWindow:
    """L uniformly spaced phase samples spanning [theta_start, theta_start + delta_theta]."""

    theta_start: float
    delta_theta: float
    length: int

    def __post_init__(self) -> None:
        if not (self.delta_theta > 0.0) or not math.isfinite(self.delta_theta):
            raise ValueError(f"delta_theta must be positive, got {self.delta_theta}")
        if self.length < 2:
            raise ValueError(f"window length must be >= 2, got {self.length}")
        if not math.isfinite(self.theta_start):
            raise ValueError("theta_start must be finite")

    @property
    def step(self) -> float:
        return self.delta_theta / (self.length - 1)

    def phases(self) -> np.ndarray:
        return self.theta_start + self.step * np.arange(self.length)


@dataclass(frozen=True)
class Waveform:
    """C x T sample matrix with a sample rate and channel names."""

    samples: np.ndarray
    sample_rate: float
    channel_labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        arr = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"samples must be a C x T matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples must be finite")
        if not (self.sample_rate > 0):
            raise ValueError("sample_rate must be positive")
        labels = self.channel_labels or tuple(f"ch{i}" for i in range(arr.shape[0]))
        if len(labels) != arr.shape[0]:
            raise ValueError("channel_labels length must match channel count")
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "channel_labels", tuple(labels))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate

    def to_bytes(self) -> bytes:
        """Binary layout: 16-byte magic+version header, u32 C, u32 T,
        f64 sample_rate, then C*T little-endian f32 samples row-major."""
        header = _WAVEFORM_MAGIC + struct.pack("<I", _WAVEFORM_VERSION) + b"\x00" * 4
        meta = struct.pack("<IId", self.n_channels, self.n_samples, self.sample_rate)
        body = self.samples.astype("<f4").tobytes(order="C")
        return header + meta + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Waveform":
        if blob[:8] != _WAVEFORM_MAGIC:
            raise ValueError("not a waveform blob (bad magic)")
        version = struct.unpack_from("<I", blob, 8)[0]
        if version != _WAVEFORM_VERSION:
            raise ValueError(f"unsupported waveform version {version}")
        c, t, rate = struct.unpack_from("<IId", blob, 16)
        body = np.frombuffer(blob, dtype="<f4", count=c * t, offset=16 + 16)
        return cls(samples=body.reshape(c, t).astype(np.float64), sample_rate=rate)

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path: str) -> "Waveform":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["time_s", *self.channel_labels])
        for i in range(self.n_samples):
            writer.writerow([i / self.sample_rate, *(self.samples[:, i].tolist())])
        return buf.getvalue()


def wrapped_phase_shift(theta: float, theta_i: float, signed: bool = True) -> float:
    """Phase shift (theta - theta_i) mod 2*pi.

    With signed=True (default) the shift is re-centered to (-pi, pi] so each
    wave is a symmetric bump around its center; signed=False keeps the raw
    [0, 2*pi) residue.
    """
    d = math.fmod(theta - theta_i, TWO_PI)
    if d < 0.0:
        d += TWO_PI
    if signed and d > math.pi:
        d -= TWO_PI
    return d


def ode_rhs(y: float, theta: float, params: OdeParams, signed_wrap: bool = True) -> float:
    """dy/dtheta at (y, theta) under the given template parameters."""
    total = 0.0
    for c in params.components:
        d = wrapped_phase_shift(theta, c.theta, signed=signed_wrap)
        total -= c.alpha * d * math.exp(-(d * d) / (2.0 * c.b * c.b))
    return total - (y - params.y0)


def integrate_rk4(params: OdeParams, y_init: float, window: PhaseWindow,
                  signed_wrap: bool = True) -> np.ndarray:
    """Classical RK4 over the window; element 0 is the initial condition."""
    if not math.isfinite(y_init):
        raise ValueError("y_init must be finite")
    h = window.step
    out = np.empty(window.length)
    out[0] = y = y_init
    theta = window.theta_start
    for i in range(1, window.length):
        k1 = ode_rhs(y, theta, params, signed_wrap)
        k2 = ode_rhs(y + 0.5 * h * k1, theta + 0.5 * h, params, signed_wrap)
        k3 = ode_rhs(y + 0.5 * h * k2, theta + 0.5 * h, params, signed_wrap)
        k4 = ode_rhs(y + h * k3, theta + h, params, signed_wrap)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        theta = window.theta_start + i * h
        out[i] = y
    return out


def _default_start_phase(params: OdeParams) -> float:
    # Diastole, opposite pole of the cycle from the R bump, so generated
    # recordings never begin or end on an R peak.
    return (params.component("R").theta + math.pi) % TWO_PI


def synth_ecg(params: OdeParams, beats: int, sample_rate: float, heart_rate: float,
              lead_mix, noise_std: float = 0.0, seed: int = 0,
              start_phase: float | None = None) -> Waveform:
    """Generate a multi-channel recording of `beats` full cycles.

    The template is integrated at constant phase velocity 2*pi*heart_rate/60
    directly on the output sample grid, projected through lead_mix (length-C
    vector), and i.i.d. Gaussian noise with the given seed is added.
    Deterministic for fixed inputs.
    """
    if beats < 1:
        raise ValueError("beats must be >= 1")
    if sample_rate <= 0 or heart_rate <= 0:
        raise ValueError("sample_rate and heart_rate must be positive")
    mix = np.asarray(lead_mix, dtype=np.float64).reshape(-1)
    if mix.size < 1 or not np.all(np.isfinite(mix)):
        raise ValueError("lead_mix must be a finite, non-empty vector")

    if start_phase is None:
        start_phase = _default_start_phase(params)
    n = int(round(beats * sample_rate * 60.0 / heart_rate))
    dtheta = TWO_PI * heart_rate / (60.0 * sample_rate)
    window = PhaseWindow(theta_start=start_phase, delta_theta=dtheta * (n - 1), length=n)
    template = integrate_rk4(params, params.y0, window)

    samples = mix[:, None] * template[None, :]
    if noise_std > 0.0:
        rng = np.random.default_rng(seed)
        samples = samples + rng.normal(0.0, noise_std, size=samples.shape)
    return Waveform(samples=samples, sample_rate=sample_rate)


def true_r_peak_indices(params: OdeParams, beats: int, sample_rate: float,
                        heart_rate: float, start_phase: float | None = None) -> np.ndarray:
    """Ground-truth R-peak sample indices for a synth_ecg call with the same
    arguments (nearest sample to each phase crossing of the R center)."""
    if start_phase is None:
        start_phase = _default_start_phase(params)
    theta_r = params.component("R").theta
    n = int(round(beats * sample_rate * 60.0 / heart_rate))
    dtheta = TWO_PI * heart_rate / (60.0 * sample_rate)
    first = (theta_r - start_phase) % TWO_PI
    out = []
    k = 0
    while True:
        pos = (first + k * TWO_PI) / dtheta
        if pos > n - 1 + 0.5:
            break
        out.append(int(round(pos)))
        k += 1
    return np.asarray([i for i in out if 0 <= i <= n - 1], dtype=np.int64)
