"""The forecasting network: instance norm, frequency mixing, prediction.

Data flow for one instance (N channels, lookback L, horizon tau):

1. reversible per-channel standardization over the lookback window
2. global branch: per-channel spectrum of the full window, linear
   embedding L -> D_f, a convolution along the channel axis mixing the
   N series at every embedded position, inverse transform over D_f
3. local branch, per channel and per window scale w: split into L/w
   patches, per-patch spectrum, convolution across frequency bins,
   inverse transform, residual add of the raw patch, embedding w -> D_p;
   scales are concatenated along the patch axis
4. the local branch is mixed by a depthwise (per-feature, along the
   patch axis) plus pointwise convolution, then projected per channel to
   D_f so both branches can be summed
5. a shared linear head maps D_f -> tau per channel, and the instance
   statistics from step 1 are restored

All entry points accept an optional leading batch dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import diffarray as da
from . import spectral
from .diffarray import DiffArray
from .errors import ConfigError, ContractError, DimensionError

ABLATIONS = ("full", "no_fcc", "no_wfc", "no_freq_loss", "no_time_loss")


@dataclass(frozen=True)
class ModelConfig:
    lookback: int
    horizon: int
    channels: int
    fcc_embed_dim: int = 128
    patch_scales: tuple[int, ...] = (24, 48)
    patch_embed_dim: int = 64
    fcc_kernel_size: int | None = None  # None -> channel count (full cross-channel view)
    wfc_kernel_size: int = 3
    ds_dw_kernel_size: int = 3
    revin_epsilon: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "patch_scales", tuple(int(w) for w in self.patch_scales))
        for name in ("lookback", "horizon", "channels", "fcc_embed_dim", "patch_embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lookback < 2:
            raise ConfigError("lookback must be >= 2 for instance statistics")
        if not self.patch_scales:
            raise ConfigError("patch_scales must not be empty")
        for w in self.patch_scales:
            if w < 1 or self.lookback % w:
                raise ConfigError(
                    f"patch scale {w} must divide lookback {self.lookback}"
                )
        if len(set(self.patch_scales)) != len(self.patch_scales):
            raise ConfigError(f"duplicate patch scales: {self.patch_scales}")
        for name in ("wfc_kernel_size", "ds_dw_kernel_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.fcc_kernel_size is not None and self.fcc_kernel_size < 1:
            raise ConfigError(f"fcc_kernel_size must be >= 1, got {self.fcc_kernel_size}")
        if self.revin_epsilon <= 0:
            raise ConfigError(f"revin_epsilon must be > 0, got {self.revin_epsilon}")

    @property
    def fcc_kernel(self) -> int:
        return self.fcc_kernel_size if self.fcc_kernel_size is not None else self.channels

    @property
    def total_patches(self) -> int:
        return sum(self.lookback // w for w in self.patch_scales)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["patch_scales"] = list(self.patch_scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["patch_scales"] = tuple(d["patch_scales"])
        return cls(**d)


def default_patch_scales(lookback: int) -> tuple[int, ...]:
    """Two largest candidate scales dividing the lookback with >= 4 patches each."""
    chosen = []
    for w in (48, 24, 12, 8, 6, 4, 3, 2):
        if lookback % w == 0 and lookback // w >= 4:
            chosen.append(w)
        if len(chosen) == 2:
            break
    if not chosen:
        return (1,)
    return tuple(sorted(chosen))


# ---------------------------------------------------------------------------
# parameters


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[tuple[int, ...], int]]:
    """Ordered name -> (shape, fan_in) map; the single source of truth for
    initialization, counting, and checkpoint validation."""
    L, tau, N = config.lookback, config.horizon, config.channels
    df, dp = config.fcc_embed_dim, config.patch_embed_dim
    spec: dict[str, tuple[tuple[int, ...], int]] = {
        "fcc_embed_w": ((L, df), L),
        "fcc_embed_b": ((df,), L),
        "fcc_conv_k": ((1, 1, config.fcc_kernel), config.fcc_kernel),
    }
    for w in config.patch_scales:
        spec[f"wfc_conv_k_{w}"] = ((1, 1, config.wfc_kernel_size), config.wfc_kernel_size)
        spec[f"wfc_embed_w_{w}"] = ((w, dp), w)
        spec[f"wfc_embed_b_{w}"] = ((dp,), w)
    flat = config.total_patches * dp
    spec["ds_dw_k"] = ((dp, 1, config.ds_dw_kernel_size), config.ds_dw_kernel_size)
    spec["ds_pw_k"] = ((dp, dp, 1), dp)
    spec["ds_proj_w"] = ((flat, df), flat)
    spec["ds_proj_b"] = ((df,), flat)
    spec["pred_w"] = ((df, tau), df)
    spec["pred_b"] = ((tau,), df)
    return spec


def param_count(config: ModelConfig) -> int:
    """Closed-form learnable-parameter count for a configuration."""
    L, tau = config.lookback, config.horizon
    df, dp = config.fcc_embed_dim, config.patch_embed_dim
    n_tot = config.total_patches
    count = L * df + df                       # global-branch embedding
    count += config.fcc_kernel                # channel-axis kernel
    for w in config.patch_scales:             # per-scale kernel + embedding
        count += config.wfc_kernel_size + w * dp + dp
    count += dp * config.ds_dw_kernel_size    # depthwise kernels
    count += dp * dp                          # pointwise kernel
    count += n_tot * dp * df + df             # per-channel projection
    count += df * tau + tau                   # prediction head
    return count


class FtMixerParams:
    """The complete learnable parameter set, addressable by name."""

    def __init__(self, config: ModelConfig, entries: dict[str, DiffArray]):
        spec = parameter_shapes(config)
        if set(entries) != set(spec):
            missing = sorted(set(spec) - set(entries))
            extra = sorted(set(entries) - set(spec))
            raise ContractError(f"parameter names mismatch: missing={missing} extra={extra}")
        for name, (shape, _) in spec.items():
            if entries[name].shape != shape:
                raise ContractError(
                    f"parameter {name}: expected shape {shape}, got {entries[name].shape}"
                )
        self.config = config
        self._order = list(spec)
        self._entries = entries

    @classmethod
    def initialize(cls, config: ModelConfig) -> "FtMixerParams":
        """Seeded uniform init in +-1/sqrt(fan_in) per layer."""
        rng = np.random.default_rng(config.seed)
        entries = {}
        for name, (shape, fan_in) in parameter_shapes(config).items():
            bound = 1.0 / np.sqrt(fan_in)
            entries[name] = da.parameter(rng.uniform(-bound, bound, size=shape))
        return cls(config, entries)

    def __getitem__(self, name: str) -> DiffArray:
        return self._entries[name]

    def names(self) -> list[str]:
        return list(self._order)

    def all(self) -> list[DiffArray]:
        return [self._entries[name] for name in self._order]

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: self._entries[name].values.copy() for name in self._order}

    def load_values(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self._order:
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != self._entries[name].shape:
                raise ContractError(
                    f"parameter {name}: expected shape {self._entries[name].shape}, "
                    f"got {src.shape}"
                )
            self._entries[name].values = src.copy()


def save_checkpoint(path, params: FtMixerParams, extra_metadata: dict | None = None) -> None:
    meta = {"model_config": params.config.to_dict()}
    if extra_metadata:
        meta.update(extra_metadata)
    da.save_arrays(path, {n: params[n].values for n in params.names()}, meta)


def load_checkpoint(path) -> tuple[FtMixerParams, dict]:
    arrays, meta = da.load_arrays(path)
    config = ModelConfig.from_dict(meta["model_config"])
    entries = {name: da.parameter(arr) for name, arr in arrays.items()}
    return FtMixerParams(config, entries), meta


# ---------------------------------------------------------------------------
# reversible instance normalization


@dataclass
class RevinState:
    """Per-instance, per-channel lookback statistics, shape [..., N, 1]."""

    mean: DiffArray
    std: DiffArray

    @property
    def channels(self) -> int:
        return self.mean.shape[-2]


def revin_normalize(x, epsilon: float) -> tuple[DiffArray, RevinState]:
    """Standardize each channel by its own lookback mean and std.

    The std is floored at ``epsilon`` (the variance is clamped before the
    square root so zero-variance channels keep finite gradients).
    """
    x = da._lift(x)
    if x.values.ndim < 2 or x.shape[-1] < 2:
        raise ContractError(f"revin_normalize: need [..., N, L>=2], got {x.shape}")
    mean = da.reduce_mean(x, axis=-1, keepdims=True)
    centered = da.sub(x, mean)
    var = da.reduce_mean(da.mul(centered, centered), axis=-1, keepdims=True)
    std = da.sqrt(da.clamp_min(var, epsilon * epsilon))
    return da.div(centered, std), RevinState(mean=mean, std=std)


def revin_denormalize(y, state: RevinState) -> DiffArray:
    """Invert :func:`revin_normalize` on a horizon window."""
    y = da._lift(y)
    if y.values.ndim < 2 or y.shape[-2] != state.channels:
        raise ContractError(
            f"revin_denormalize: prediction has {y.shape} but state has "
            f"{state.channels} channels"
        )
    return da.add(da.mul(y, state.std), state.mean)


# ---------------------------------------------------------------------------
# network blocks


def fcc_forward(x, params: FtMixerParams, config: ModelConfig) -> DiffArray:
    """Global branch: [..., N, L] -> [..., N, D_f].

    Per-channel spectrum over the full window, shared linear embedding
    L -> D_f, then a same-padded convolution along the channel axis at
    every embedded position, and an inverse transform over D_f.
    """
    x = da._lift(x)
    if x.shape[-2:] != (config.channels, config.lookback):
        raise DimensionError(
            f"fcc_forward: expected [..., {config.channels}, {config.lookback}], "
            f"got {x.shape}"
        )
    spec_x = spectral.dct(x)
    embedded = da.add(da.matmul(spec_x, params["fcc_embed_w"]), params["fcc_embed_b"])
    # [..., N, D_f] -> [..., D_f, 1, N]: the channel axis becomes the conv length
    lanes = da.swapaxes(embedded, -1, -2)
    lanes = da.reshape(lanes, lanes.shape[:-1] + (1, config.channels))
    mixed = da.conv1d(lanes, params["fcc_conv_k"], padding="same")
    mixed = da.reshape(mixed, mixed.shape[:-2] + (config.channels,))
    mixed = da.swapaxes(mixed, -1, -2)
    return spectral.idct(mixed)


def wfc_forward(x, params: FtMixerParams, scale: int) -> DiffArray:
    """Local branch for one channel and one scale: [..., L] -> [..., L/w, D_p].

    Non-overlapping patches are transformed, convolved across frequency
    bins, inverted, residually combined with the raw patch, and embedded.
    """
    x = da._lift(x)
    length = x.shape[-1]
    if scale < 1 or scale > length:
        raise ConfigError(f"wfc_forward: scale {scale} invalid for length {length}")
    if length % scale:
        raise ConfigError(f"wfc_forward: scale {scale} does not divide length {length}")
    try:
        kernel = params[f"wfc_conv_k_{scale}"]
        embed_w = params[f"wfc_embed_w_{scale}"]
        embed_b = params[f"wfc_embed_b_{scale}"]
    except KeyError:
        raise ConfigError(f"wfc_forward: no parameters for scale {scale}") from None
    n = length // scale
    patches = da.reshape(x, x.shape[:-1] + (n, scale))
    spec_p = spectral.dct(patches)
    spec_p = da.reshape(spec_p, spec_p.shape[:-1] + (1, scale))
    mixed = da.conv1d(spec_p, kernel, padding="same")
    mixed = da.reshape(mixed, mixed.shape[:-2] + (scale,))
    branch = da.add(spectral.idct(mixed), patches)
    return da.add(da.matmul(branch, embed_w), embed_b)


def depthwise_pointwise(z, params: FtMixerParams, config: ModelConfig) -> DiffArray:
    """Linear mixing stage of the separable convolution.

    Input [..., N, n_tot, D_p]: channels are concatenated along the patch
    axis, a depthwise (groups = D_p) convolution runs along it, then a
    1x1 pointwise convolution mixes the D_p features.  Shape-preserving.
    """
    z = da._lift(z)
    n_tot, dp = config.total_patches, config.patch_embed_dim
    if z.values.ndim < 3 or z.shape[-2:] != (n_tot, dp) or z.shape[-3] != config.channels:
        raise DimensionError(
            f"depthwise_pointwise: expected [..., {config.channels}, {n_tot}, {dp}], "
            f"got {z.shape}"
        )
    joined = da.reshape(z, z.shape[:-3] + (config.channels * n_tot, dp))
    lanes = da.swapaxes(joined, -1, -2)  # [..., D_p, N * n_tot]
    deep = da.conv1d(lanes, params["ds_dw_k"], padding="same", groups=dp)
    point = da.conv1d(deep, params["ds_pw_k"], padding="same")
    out = da.swapaxes(point, -1, -2)
    return da.reshape(out, z.shape)


def ds_conv(z, params: FtMixerParams, config: ModelConfig) -> DiffArray:
    """Separable-convolution mixer: [..., N, n_tot, D_p] -> [..., N, D_f].

    Applies :func:`depthwise_pointwise`, a smooth ramp activation, then a
    learned per-channel projection of the flattened patch features so the
    output aligns with the global branch.
    """
    mixed = da.silu(depthwise_pointwise(z, params, config))
    flat_dim = config.total_patches * config.patch_embed_dim
    flat = da.reshape(mixed, mixed.shape[:-2] + (flat_dim,))
    return da.add(da.matmul(flat, params["ds_proj_w"]), params["ds_proj_b"])


def ftmixer_forward(x, params: FtMixerParams, config: ModelConfig,
                    ablation: str = "full") -> DiffArray:
    """Full forward pass: [..., N, L] -> [..., N, tau].

    ``ablation`` may disable one branch ("no_fcc" keeps only the local
    branch, "no_wfc" only the global one); loss-side ablation values
    leave the forward untouched.
    """
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")
    x = da._lift(x)
    if x.shape[-2:] != (config.channels, config.lookback):
        raise DimensionError(
            f"ftmixer_forward: expected [..., {config.channels}, {config.lookback}], "
            f"got {x.shape}"
        )
    normalized, state = revin_normalize(x, config.revin_epsilon)

    z = None
    if ablation != "no_fcc":
        z = fcc_forward(normalized, params, config)
    if ablation != "no_wfc":
        per_scale = [wfc_forward(normalized, params, w) for w in config.patch_scales]
        local = per_scale[0] if len(per_scale) == 1 else da.concat(per_scale, axis=-2)
        z_ds = ds_conv(local, params, config)
        z = z_ds if z is None else da.add(z, z_ds)

    predicted = da.add(da.matmul(z, params["pred_w"]), params["pred_b"])
    return revin_denormalize(predicted, state)
