"""Co-evolving controlled-dynamics classifier for anomaly and precursor detection.

Two hidden states evolve over one window's control path: the anomaly state
feeds a sigmoid head that scores the window itself, the precursor state
feeds a head that scores whether trouble follows.  Each state has its own
vector-field branch plus a branch built from parameters shared by both, so
the tasks co-adapt; the shared branch can be dropped for ablations.

Vector-field branches are MLPs with ReLU hidden layers and a tanh output
layer (both 1-Lipschitz, keeping the controlled dynamics well-posed), whose
output is reshaped to a (hidden x channels) matrix multiplying dX/dt.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .solver import DivergenceError, SolverConfig, build_grid, integrate_controlled
from .spline import InputError, TimeSeriesWindow, fit_natural_cubic_spline

CHECKPOINT_VERSION = 1

FIELD_GROUPS = ("field_anomaly", "field_poa", "field_shared")
AFFINE_GROUPS = ("init_anomaly", "init_poa", "head_anomaly", "head_poa")


@dataclass(frozen=True)
class ModelConfig:
    """Layer sizes; vector-field outputs are always hidden_dim x n_channels."""

    n_channels: int
    hidden_dim: int
    width_f: int
    width_g: int
    width_c: int
    n_hidden_layers_f: int = 4
    n_hidden_layers_g: int = 4
    n_hidden_layers_c: int = 1
    shared_branch: bool = True

    def __post_init__(self):
        for name in ("n_channels", "hidden_dim", "width_f", "width_g", "width_c",
                     "n_hidden_layers_f", "n_hidden_layers_g", "n_hidden_layers_c"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def branch_dims(self, group: str) -> list[int]:
        width, depth = {
            "field_anomaly": (self.width_f, self.n_hidden_layers_f),
            "field_poa": (self.width_g, self.n_hidden_layers_g),
            "field_shared": (self.width_c, self.n_hidden_layers_c),
        }[group]
        return [self.hidden_dim] + [width] * depth + [self.hidden_dim * self.n_channels]


class ModelParameters:
    """All trainable tensors, keyed by group.

    The shared group is physically one set of tensors used inside both
    vector fields, so an update through either task moves the same values.
    """

    def __init__(self, config: ModelConfig, groups: dict[str, list[Tensor]]):
        self.config = config
        self.groups = groups

    def tensors(self, group: str) -> list[Tensor]:
        return self.groups[group]

    def named_tensors(self):
        for group in self.group_names():
            for i, t in enumerate(self.groups[group]):
                kind = "W" if i % 2 == 0 else "b"
                yield f"{group}.{i // 2}.{kind}", t

    def group_names(self) -> tuple[str, ...]:
        names = [g for g in FIELD_GROUPS if g in self.groups]
        return tuple(names) + AFFINE_GROUPS

    def n_parameters(self) -> int:
        return sum(t.data.size for _, t in self.named_tensors())

    def group_digest(self, group: str) -> str:
        """Hex digest of a group's raw bytes; cheap change detector."""
        h = hashlib.sha256()
        for t in self.groups[group]:
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def copy(self) -> "ModelParameters":
        groups = {g: [ad.parameter(t.data.copy()) for t in ts] for g, ts in self.groups.items()}
        return ModelParameters(self.config, groups)


def _init_affine(rng: np.random.Generator, n_in: int, n_out: int) -> list[Tensor]:
    bound = 1.0 / np.sqrt(n_in)
    w = ad.parameter(rng.uniform(-bound, bound, size=(n_in, n_out)))
    b = ad.parameter(rng.uniform(-bound, bound, size=(n_out,)))
    return [w, b]


def init_parameters(config: ModelConfig, seed: int) -> ModelParameters:
    """Uniform +-1/sqrt(fan_in) initialization, deterministic per seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    groups: dict[str, list[Tensor]] = {}
    field_groups = FIELD_GROUPS if config.shared_branch else ("field_anomaly", "field_poa")
    for group in field_groups:
        dims = config.branch_dims(group)
        layers: list[Tensor] = []
        for n_in, n_out in zip(dims[:-1], dims[1:]):
            layers += _init_affine(rng, n_in, n_out)
        groups[group] = layers
    groups["init_anomaly"] = _init_affine(rng, config.n_channels, config.hidden_dim)
    groups["init_poa"] = _init_affine(rng, config.n_channels, config.hidden_dim)
    groups["head_anomaly"] = _init_affine(rng, config.hidden_dim, 1)
    groups["head_poa"] = _init_affine(rng, config.hidden_dim, 1)
    return ModelParameters(config, groups)


def ablated_config(config: ModelConfig) -> ModelConfig:
    """Drop the shared branch, widening the task branches to keep the
    total parameter count as close as possible to the original."""

    def branch_params(dims):
        return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))

    # the shared branch is one set of tensors serving both fields, so each
    # widened task branch absorbs half of its capacity
    half_shared = branch_params(config.branch_dims("field_shared")) / 2.0
    target_f = branch_params(config.branch_dims("field_anomaly")) + half_shared
    target_g = branch_params(config.branch_dims("field_poa")) + half_shared

    def best_width(target, depth):
        def count(w):
            dims = [config.hidden_dim] + [w] * depth + [config.hidden_dim * config.n_channels]
            return branch_params(dims)

        w = 1
        while count(w) < target:
            w += 1
        return w if abs(count(w) - target) <= abs(count(w - 1) - target) or w == 1 else w - 1

    return replace(
        config,
        shared_branch=False,
        width_f=best_width(target_f, config.n_hidden_layers_f),
        width_g=best_width(target_g, config.n_hidden_layers_g),
    )


# ---------------------------------------------------------------------------
# network pieces


def _branch_mlp(x: Tensor, layers: list[Tensor]) -> Tensor:
    """ReLU stack with a tanh output layer; accepts (H,) or (B, H)."""
    out = x
    n_affine = len(layers) // 2
    for i in range(n_affine):
        out = ad.affine(out, layers[2 * i], layers[2 * i + 1])
        out = ad.tanh(out) if i == n_affine - 1 else ad.relu(out)
    return out


def _field_matrix(state: Tensor, own: list[Tensor], shared: list[Tensor] | None,
                  config: ModelConfig) -> Tensor:
    out = _branch_mlp(state, own)
    if shared is not None:
        out = ad.add(out, _branch_mlp(state, shared))
    if state.data.ndim == 1:
        return ad.reshape(out, (config.hidden_dim, config.n_channels))
    return ad.reshape(out, (state.data.shape[0], config.hidden_dim, config.n_channels))


def vector_field_f(h: Tensor, params: ModelParameters) -> Tensor:
    """Anomaly-state field: own branch plus shared branch, (.., hidden, channels)."""
    shared = params.groups.get("field_shared")
    return _field_matrix(h, params.tensors("field_anomaly"), shared, params.config)


def vector_field_g(z: Tensor, params: ModelParameters) -> Tensor:
    """Precursor-state field: own branch plus the same shared branch."""
    shared = params.groups.get("field_shared")
    return _field_matrix(z, params.tensors("field_poa"), shared, params.config)


def init_states(x0: Tensor, params: ModelParameters) -> tuple[Tensor, Tensor]:
    """Affine maps from the first path value to the two initial states."""
    h0 = ad.affine(x0, *params.tensors("init_anomaly"))
    z0 = ad.affine(x0, *params.tensors("init_poa"))
    return h0, z0


def _head(state: Tensor, layers: list[Tensor]) -> Tensor:
    out = ad.sigmoid(ad.affine(state, layers[0], layers[1]))
    return ad.reshape(out, out.data.shape[:-1])


# ---------------------------------------------------------------------------
# control preprocessing: spline data evaluated at every solver stage


def control_stages(
    windows: list[TimeSeriesWindow], solver_cfg: SolverConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Precompute (stages, dt, x0) driving a batch of windows in lockstep.

    stages: (B, n_steps, n_stage_points, C) control derivatives; dt:
    (B, n_steps) step sizes on each window's own clock; x0: (B, C) first
    observations.  Windows must share an observation count so the step
    grids line up.
    """
    counts = {w.n_obs for w in windows}
    if len(counts) != 1:
        raise InputError(f"batched windows must share n_obs, got {sorted(counts)}")
    stage_list, dt_list, x0_list = [], [], []
    for w in windows:
        path = fit_natural_cubic_spline(w)
        grid = build_grid(w.times[0], w.times[-1], solver_cfg, knots=w.times)
        ta, tb = grid[:-1], grid[1:]
        if solver_cfg.scheme == "euler":
            pts = ta[:, None]
        else:
            pts = np.stack([ta, 0.5 * (ta + tb), tb], axis=1)
        deriv = path.eval_derivative_many(pts.ravel())
        stage_list.append(deriv.reshape(pts.shape + (w.n_channels,)))
        dt_list.append(tb - ta)
        x0_list.append(w.values[0])
    return np.stack(stage_list), np.stack(dt_list), np.stack(x0_list)


# ---------------------------------------------------------------------------
# forward passes


class ForwardResult:
    """Batch outputs; entries are None for branches that were not run."""

    __slots__ = ("p_anomaly", "p_poa", "h_final", "z_final")

    def __init__(self, p_anomaly=None, p_poa=None, h_final=None, z_final=None):
        self.p_anomaly = p_anomaly
        self.p_poa = p_poa
        self.h_final = h_final
        self.z_final = z_final


def forward_batch(
    windows: list[TimeSeriesWindow],
    params: ModelParameters,
    solver_cfg: SolverConfig,
    branch: str = "both",
) -> ForwardResult:
    """Run a batch of windows through the requested branch(es).

    ``branch="both"`` integrates the stacked state [h; z] jointly;
    ``"anomaly"`` / ``"poa"`` integrate a single state, which is exactly the
    corresponding half of the joint system since the states only interact
    through shared parameters, never through each other.
    """
    cfg = params.config
    hidden = cfg.hidden_dim
    if any(w.n_channels != cfg.n_channels for w in windows):
        raise InputError("window channel count does not match the model")
    stages, dt, x0_data = control_stages(windows, solver_cfg)
    x0 = Tensor(x0_data)
    shared = params.groups.get("field_shared")

    def field_h(h, ctrl):
        return ad.channel_matvec(_field_matrix(h, params.tensors("field_anomaly"), shared, cfg), ctrl)

    def field_z(z, ctrl):
        return ad.channel_matvec(_field_matrix(z, params.tensors("field_poa"), shared, cfg), ctrl)

    try:
        if branch == "anomaly":
            h0 = ad.affine(x0, *params.tensors("init_anomaly"))
            h_final = integrate_controlled(field_h, h0, stages, dt, solver_cfg.scheme)
            return ForwardResult(p_anomaly=_head(h_final, params.tensors("head_anomaly")),
                                 h_final=h_final)
        if branch == "poa":
            z0 = ad.affine(x0, *params.tensors("init_poa"))
            z_final = integrate_controlled(field_z, z0, stages, dt, solver_cfg.scheme)
            return ForwardResult(p_poa=_head(z_final, params.tensors("head_poa")),
                                 z_final=z_final)
        if branch != "both":
            raise ValueError(f"unknown branch {branch!r}")

        def field_joint(state, ctrl):
            h = ad.take_cols(state, 0, hidden)
            z = ad.take_cols(state, hidden, 2 * hidden)
            return ad.concat_cols([field_h(h, ctrl), field_z(z, ctrl)])

        h0, z0 = init_states(x0, params)
        state = integrate_controlled(field_joint, ad.concat_cols([h0, z0]), stages, dt,
                                     solver_cfg.scheme)
        h_final = ad.take_cols(state, 0, hidden)
        z_final = ad.take_cols(state, hidden, 2 * hidden)
        return ForwardResult(
            p_anomaly=_head(h_final, params.tensors("head_anomaly")),
            p_poa=_head(z_final, params.tensors("head_poa")),
            h_final=h_final,
            z_final=z_final,
        )
    except DivergenceError as err:
        indices = [w.window_index for w in windows]
        raise DivergenceError(err.step, f" (windows {indices})") from err


def forward(
    window: TimeSeriesWindow,
    params: ModelParameters,
    solver_cfg: SolverConfig,
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Single-window forward: (p_anomaly, p_poa, h_final, z_final)."""
    res = forward_batch([window], params, solver_cfg, branch="both")
    return (
        ad.reshape(res.p_anomaly, ()),
        ad.reshape(res.p_poa, ()),
        ad.reshape(res.h_final, (params.config.hidden_dim,)),
        ad.reshape(res.z_final, (params.config.hidden_dim,)),
    )


# ---------------------------------------------------------------------------
# checkpoints: JSON, bit-exact round trip


def checkpoint_payload(params: ModelParameters, extra: dict | None = None) -> dict:
    cfg = params.config
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model": {
            "n_channels": cfg.n_channels,
            "hidden_dim": cfg.hidden_dim,
            "width_f": cfg.width_f,
            "width_g": cfg.width_g,
            "width_c": cfg.width_c,
            "n_hidden_layers_f": cfg.n_hidden_layers_f,
            "n_hidden_layers_g": cfg.n_hidden_layers_g,
            "n_hidden_layers_c": cfg.n_hidden_layers_c,
            "shared_branch": cfg.shared_branch,
        },
        "groups": {
            group: [
                {"shape": list(t.data.shape), "data": t.data.ravel().tolist()}
                for t in tensors
            ]
            for group, tensors in params.groups.items()
        },
    }
    if extra:
        payload.update(extra)
    return payload


def save_checkpoint(path, params: ModelParameters, extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_payload(params, extra), fh)


def load_checkpoint(path) -> tuple[ModelParameters, dict]:
    """Returns the parameters plus any extra payload entries (e.g. stats)."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('format_version')!r}")
    config = ModelConfig(**payload["model"])
    groups = {
        group: [
            ad.parameter(np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"]))
            for entry in entries
        ]
        for group, entries in payload["groups"].items()
    }
    extras = {k: v for k, v in payload.items() if k not in ("format_version", "model", "groups")}
    return ModelParameters(config, groups), extras
