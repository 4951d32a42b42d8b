"""Forecasting model: graph-convolutional GRU with FFT-based selection.

A forward pass runs the selector once per window, builds per-step spatial and
cross graphs, iterates a GRU whose gate transforms are the decomposed graph
convolutions, and maps the final hidden state to all horizon steps with one
shared linear readout (no autoregressive loop).

All computation is batched over windows; selection and temporal graphs are
per-sample, spatial graphs and generated weights are shared across the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gconv, graphs, selector, tensor as tt
from .errors import ConfigError, ContractError, ShapeError
from .gconv import DecompKernels
from .graphs import EmbeddingSet
from .selector import SelectorParams
from .tensor import Tensor

Array = np.ndarray

GATES = ("z", "r", "c")
MAPE_THRESHOLD = 1e-3


@dataclass
class HyperParams:
    """Model-size knobs (presets live in the config module)."""

    d_e: int = 4
    d_h: int = 8
    d_f: int | None = None     # None -> all modes of a length-d_h signal
    tau: int = 2
    d_hid: int = 16
    layers: int = 1
    t_in: int = 12
    horizon: int = 12

    def modes(self) -> int:
        from . import spectral
        return self.d_f if self.d_f is not None else spectral.max_modes(self.d_h)


@dataclass
class Ablation:
    """Switches that reproduce the reduced model variants."""

    selector: str = "fft"          # 'fft' | 'random' | 'latest'
    temporal_norm: bool = True     # off: score raw features only
    dynamic_spatial: bool = True   # off: one static spatial graph for all steps
    dynamic_temporal: bool = True  # off: identity temporal-connection graphs
    cross_graphs: bool = True      # off: spatial branch only

    def __post_init__(self):
        if self.selector not in selector.SELECT_MODES:
            raise ConfigError(f"selector must be one of {selector.SELECT_MODES}")


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> Array:
    fan_in = int(np.prod(shape[:-1])) or 1
    fan_out = shape[-1]
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class ModelParams:
    """The complete learnable set, registered once each in creation order."""

    def __init__(self, n_nodes: int, n_channels: int, out_channels: int,
                 hyper: HyperParams, ablation: Ablation | None = None,
                 weight_mode: str = "softmax", seed: int = 0):
        if weight_mode not in selector.WEIGHT_MODES:
            raise ConfigError(f"weight_mode must be one of {selector.WEIGHT_MODES}")
        self.n_nodes = n_nodes
        self.n_channels = n_channels
        self.out_channels = out_channels
        self.hyper = hyper
        self.ablation = ablation or Ablation()
        self.weight_mode = weight_mode
        self.seed = seed
        self._registry: dict[str, Tensor] = {}

        rng = np.random.default_rng(seed)
        hp = hyper
        self.embeddings = graphs.init_embeddings(n_nodes, hp.t_in, hp.d_e, rng)
        self._register("embeddings.e_n", self.embeddings.e_n)
        self._register("embeddings.e_t", self.embeddings.e_t)

        self.selector_params: SelectorParams | None = None
        if self.uses_selector_scores():
            in_dim = 2 * n_channels if self.ablation.temporal_norm else n_channels
            self.selector_params = SelectorParams(
                w_q=self._new(rng, "selector.w_q", (in_dim, hp.d_h)),
                b_q=self._zeros("selector.b_q", (hp.d_h,)),
                w_k=self._new(rng, "selector.w_k", (in_dim, hp.d_h)),
                b_k=self._zeros("selector.b_k", (hp.d_h,)),
                d_F=hp.modes(), tau=hp.tau)

        self.kernels: dict[tuple[str, str, int], DecompKernels] = {}
        d_in0 = n_channels + hp.d_hid
        kernel_scale = 2.0 * np.sqrt(3.0)
        for gate in GATES:
            for branch in self.branches():
                for layer in range(hp.layers):
                    d_i = d_in0 if layer == 0 else hp.d_hid
                    name = f"gconv.{gate}.{branch}.{layer}"
                    a = kernel_scale / np.sqrt(d_i)
                    kw = tt.parameter(rng.uniform(-a, a, size=(hp.d_e, d_i, hp.d_hid)),
                                      name=f"{name}.k_weights")
                    kb = self._zeros(f"{name}.k_bias", (hp.d_e, hp.d_hid))
                    self._register(f"{name}.k_weights", kw)
                    self.kernels[(gate, branch, layer)] = DecompKernels(kw, kb)

        self.fusion: dict[str, tuple[Tensor, Tensor]] = {}
        if self.ablation.cross_graphs:
            for gate in GATES:
                w = self._new(rng, f"fusion.{gate}.w", (2 * hp.d_hid, hp.d_hid))
                b = self._zeros(f"fusion.{gate}.b", (hp.d_hid,))
                self.fusion[gate] = (w, b)

        self.readout_w = self._new(rng, "readout.w",
                                   (hp.d_hid, hp.horizon * out_channels))
        self.readout_b = self._zeros("readout.b", (hp.horizon * out_channels,))

        expected = expected_parameter_count(
            n_nodes, n_channels, out_channels, hyper, self.ablation)
        if self.parameter_count() != expected:
            raise ContractError(
                f"registered {self.parameter_count()} parameters, "
                f"closed form expects {expected}")

    # registry helpers -----------------------------------------------------
    def _register(self, name: str, t: Tensor) -> Tensor:
        if name in self._registry:
            raise ContractError(f"parameter {name} registered twice")
        t.name = name
        self._registry[name] = t
        return t

    def _new(self, rng, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._register(name, tt.parameter(_glorot(rng, shape)))

    def _zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._register(name, tt.parameter(np.zeros(shape)))

    def uses_selector_scores(self) -> bool:
        return self.ablation.cross_graphs and self.ablation.selector == "fft"

    def branches(self) -> tuple[str, ...]:
        return ("spatial", "cross") if self.ablation.cross_graphs else ("spatial",)

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._registry)

    def parameter_count(self) -> int:
        return sum(t.size for t in self._registry.values())

    def zero_grads(self) -> None:
        for t in self._registry.values():
            t.zero_grad()

    def set_values(self, values: dict[str, Array]) -> None:
        """Overwrite parameter data in place (checkpoint restore)."""
        for name, arr in values.items():
            if name not in self._registry:
                raise ContractError(f"unknown parameter {name}")
            t = self._registry[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = np.ascontiguousarray(arr)
            t.zero_grad()

    def bind_tensors(self, mapping: dict[str, Tensor]) -> None:
        """Rebind registered parameters to externally built tensors.

        Lets verification code express the whole model as a function of one
        flat vector: slice views bound here keep their gradient history.
        """
        for name, t in mapping.items():
            if name not in self._registry:
                raise ContractError(f"unknown parameter {name}")
            if t.shape != self._registry[name].shape:
                raise ShapeError(
                    f"{name}: shape {t.shape} != {self._registry[name].shape}")
            self._registry[name] = t
            parts = name.split(".")
            if parts[0] == "embeddings":
                setattr(self.embeddings, parts[1], t)
            elif parts[0] == "selector":
                setattr(self.selector_params, parts[1], t)
            elif parts[0] == "gconv":
                gate, branch, layer, leaf = parts[1], parts[2], int(parts[3]), parts[4]
                kern = self.kernels[(gate, branch, layer)]
                if leaf == "k_weights":
                    kern.k_weights = t
                else:
                    kern.k_bias = t
            elif parts[0] == "fusion":
                w, b = self.fusion[parts[1]]
                self.fusion[parts[1]] = (t, b) if parts[2] == "w" else (w, t)
            elif parts[0] == "readout":
                if parts[1] == "w":
                    self.readout_w = t
                else:
                    self.readout_b = t
            else:
                raise ContractError(f"unknown parameter group in {name}")

    def from_flat_vector(self, vec: Tensor) -> "ModelParams":
        """New ModelParams whose tensors are differentiable slices of ``vec``."""
        clone = ModelParams(self.n_nodes, self.n_channels, self.out_channels,
                            self.hyper, self.ablation, self.weight_mode, self.seed)
        mapping = {}
        offset = 0
        for name, t in self._registry.items():
            view = tt.reshape(tt.slice_axis(vec, 0, offset, offset + t.size), t.shape)
            mapping[name] = view
            offset += t.size
        if offset != vec.size:
            raise ShapeError(f"vector has {vec.size} entries, model needs {offset}")
        clone.bind_tensors(mapping)
        return clone

    def flat_values(self) -> Array:
        return np.concatenate(
            [t.data.reshape(-1) for t in self._registry.values()]) if self._registry \
            else np.zeros(0)


def expected_parameter_count(n_nodes: int, n_channels: int, out_channels: int,
                             hp: HyperParams, ab: Ablation) -> int:
    """Closed-form total; graph-conv kernels contribute independently of N."""
    total = n_nodes * hp.d_e + hp.t_in * hp.d_e
    if ab.cross_graphs and ab.selector == "fft":
        in_dim = 2 * n_channels if ab.temporal_norm else n_channels
        total += 2 * (in_dim * hp.d_h + hp.d_h)
    n_branches = 2 if ab.cross_graphs else 1
    for layer in range(hp.layers):
        d_i = (n_channels + hp.d_hid) if layer == 0 else hp.d_hid
        total += 3 * n_branches * gconv.kernel_parameter_count(hp.d_e, d_i, hp.d_hid)
    if ab.cross_graphs:
        total += 3 * (2 * hp.d_hid * hp.d_hid + hp.d_hid)
    total += hp.d_hid * hp.horizon * out_channels + hp.horizon * out_channels
    return total


@dataclass
class StepGraphs:
    """Graphs and embeddings prepared for one GRU step."""

    e_emb: Tensor               # N x d_e, combined embedding for step t
    a_s: Tensor                 # N x N spatial graph
    a_c: Tensor | None          # (B, tau*N, tau*N) cross graph, None w/o cross
    sel_indices: Array | None
    a_s_hat: Tensor = None      # A_S + I, shared across gates within the step
    a_c_hat: Tensor = None

    def __post_init__(self):
        if self.a_s_hat is None:
            self.a_s_hat = gconv.with_self_loop(self.a_s)
        if self.a_c_hat is None and self.a_c is not None:
            self.a_c_hat = gconv.with_self_loop(self.a_c)


def _branch_inputs(params: ModelParams, x_t: Tensor, x_sel_t: Tensor | None,
                   h: Tensor, step: StepGraphs) -> tuple[Tensor, Tensor | None]:
    """Propagated layer-1 inputs for both branches (gate-independent)."""
    spatial_in = tt.concat([x_t, h], axis=-1)
    prop_s = gconv.spatial_propagate(step.a_s_hat, spatial_in)
    prop_c = None
    if params.ablation.cross_graphs:
        h_tiled = tt.tile_axis(h, -3, params.hyper.tau)
        cross_in = tt.concat([x_sel_t, h_tiled], axis=-1)
        prop_c = gconv.cross_propagate(step.a_c_hat, cross_in)
    return prop_s, prop_c


def _branch_stack(params: ModelParams, gate: str, branch: str, step: StepGraphs,
                  prop1: Tensor) -> Tensor:
    hp = params.hyper
    out = prop1
    for layer in range(hp.layers):
        w, b = gconv.generate_params(step.e_emb, params.kernels[(gate, branch, layer)])
        act = "relu" if layer < hp.layers - 1 else "identity"
        if layer == 0:
            out = gconv.node_affine(out, w, b, act)
        elif branch == "spatial":
            out = gconv.spatial_conv_propagated(step.a_s_hat, out, w, b, act)
        else:
            out = gconv.cross_conv_propagated(step.a_c_hat, out, w, b, act)
    return out


def _gate_from_props(params: ModelParams, gate: str, prop_s: Tensor,
                     prop_c: Tensor | None, step: StepGraphs) -> Tensor:
    h_s = _branch_stack(params, gate, "spatial", step, prop_s)
    if not params.ablation.cross_graphs:
        return h_s
    h_c = _branch_stack(params, gate, "cross", step, prop_c)
    w, b = params.fusion[gate]
    return gconv.fuse_outputs(h_c, h_s, w, b)


def gate_preactivation(params: ModelParams, gate: str, x_t: Tensor,
                       x_sel_t: Tensor | None, h_prev: Tensor,
                       step: StepGraphs) -> Tensor:
    """Fused pre-activation of one gate: both branches convolved, then mixed."""
    prop_s, prop_c = _branch_inputs(params, x_t, x_sel_t, h_prev, step)
    return _gate_from_props(params, gate, prop_s, prop_c, step)


def gate_combine(z: Tensor, c: Tensor, h_prev: Tensor) -> Tensor:
    """h_t = z * h_prev + (1 - z) * c, elementwise."""
    if z.shape != c.shape or z.shape != h_prev.shape:
        raise ShapeError(
            f"gate shapes differ: {z.shape}, {c.shape}, {h_prev.shape}")
    return tt.add(tt.mul(z, h_prev), tt.mul(tt.sub(1.0, z), c))


def gru_step(params: ModelParams, x_t: Tensor, x_sel_t: Tensor | None,
             h_prev: Tensor, step: StepGraphs) -> Tensor:
    """One recurrence: update/reset gates, candidate state, convex mix.

    The z and r gates read the same inputs, so their layer-1 propagation is
    computed once and shared; the candidate gate propagates r * h_prev.
    """
    prop_s, prop_c = _branch_inputs(params, x_t, x_sel_t, h_prev, step)
    z = tt.sigmoid(_gate_from_props(params, "z", prop_s, prop_c, step))
    r = tt.sigmoid(_gate_from_props(params, "r", prop_s, prop_c, step))
    c_prop_s, c_prop_c = _branch_inputs(params, x_t, x_sel_t,
                                        tt.mul(r, h_prev), step)
    c = tt.tanh(_gate_from_props(params, "c", c_prop_s, c_prop_c, step))
    return gate_combine(z, c, h_prev)


def _prepare_steps(params: ModelParams, sel_out: selector.SelectorOutput | None,
                   batch_size: int) -> list[StepGraphs]:
    hp = params.hyper
    ab = params.ablation
    static_a_s = None
    if not ab.dynamic_spatial:
        static_a_s = graphs.static_spatial_graph(params.embeddings)
    steps = []
    for t in range(hp.t_in):
        e_emb = graphs.embed_time_step(params.embeddings, t)
        a_s = static_a_s if static_a_s is not None else graphs.spatial_graph(e_emb)
        a_c = None
        sel_idx = None
        if ab.cross_graphs:
            sel_idx = sel_out.i_sel[..., t, :]
            if ab.dynamic_temporal:
                w_sel_t = tt.index_axis(sel_out.w_sel, -2, t)
                a_t = graphs.temporal_connection_graphs(a_s, w_sel_t, sel_idx)
            else:
                lead = sel_idx.shape[:-1]
                a_t = graphs.identity_temporal_graphs(lead, hp.tau, params.n_nodes)
            a_c = graphs.fuse_cross_graph(a_s, a_t, sel_idx)
        steps.append(StepGraphs(e_emb=e_emb, a_s=a_s, a_c=a_c, sel_indices=sel_idx))
    return steps


def selector_pass(params: ModelParams, inputs: Array,
                  rng: np.random.Generator | None = None) -> selector.SelectorOutput:
    """Run selection on a batch of windows given as B x T x N x C."""
    x = np.transpose(np.asarray(inputs, dtype=np.float64), (0, 2, 1, 3))
    return selector.run_selector(
        x, params.selector_params or _indexing_only_params(params),
        mode=params.ablation.selector, use_tn=params.ablation.temporal_norm,
        weight_mode=params.weight_mode, rng=rng)


def _indexing_only_params(params: ModelParams) -> SelectorParams:
    # random/latest modes need only tau; give them inert projections
    hp = params.hyper
    eye = tt.constant(np.zeros((1, 2)))
    return SelectorParams(w_q=eye, b_q=tt.constant(np.zeros(2)),
                          w_k=eye, b_k=tt.constant(np.zeros(2)),
                          d_F=1, tau=hp.tau)


def forward(params: ModelParams, inputs: Array,
            rng: np.random.Generator | None = None) -> Tensor:
    """Predict B x H x N x F from windows B x T x N x C."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 4:
        raise ShapeError(f"inputs must be B x T x N x C, got {inputs.shape}")
    b, t_in, n, c = inputs.shape
    hp = params.hyper
    if t_in != hp.t_in or n != params.n_nodes or c != params.n_channels:
        raise ShapeError(
            f"window shape {inputs.shape[1:]} does not match model "
            f"({hp.t_in}, {params.n_nodes}, {params.n_channels})")

    sel_out = None
    x_sel = None
    if params.ablation.cross_graphs:
        sel_out = selector_pass(params, inputs, rng)
        x_sel = sel_out.x_sel  # (B, N, T, tau, C)
    steps = _prepare_steps(params, sel_out, b)

    h = tt.constant(np.zeros((b, n, hp.d_hid)))
    for t in range(t_in):
        x_t = tt.constant(inputs[:, t])
        x_sel_t = None
        if x_sel is not None:
            x_sel_t = tt.constant(np.transpose(x_sel[:, :, t], (0, 2, 1, 3)))
        h = gru_step(params, x_t, x_sel_t, h, steps[t])

    out = tt.linear(h, params.readout_w, params.readout_b)
    out = tt.reshape(out, (b, n, hp.horizon, params.out_channels))
    return tt.transpose(out, (0, 2, 1, 3))


def l1_loss(pred: Tensor, truth) -> Tensor:
    """Mean absolute error over all elements (sign subgradient, 0 at ties)."""
    truth_t = truth if isinstance(truth, Tensor) else tt.constant(truth)
    if pred.shape != truth_t.shape:
        raise ShapeError(f"loss shapes differ: {pred.shape} vs {truth_t.shape}")
    return tt.mean(tt.tabs(tt.sub(pred, truth_t)))


@dataclass
class MetricsReport:
    """De-normalized evaluation metrics; mape is None when fully masked."""

    mae: float
    rmse: float
    mape: float | None


def metrics(pred: Array, truth: Array,
            mape_threshold: float = MAPE_THRESHOLD) -> MetricsReport:
    """Element-mean MAE/RMSE and masked MAPE (percent) on de-normalized data."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"metric shapes differ: {pred.shape} vs {truth.shape}")
    err = pred - truth
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err * err).mean()))
    mask = np.abs(truth) > mape_threshold
    if mask.any():
        mape = float((np.abs(err[mask] / truth[mask])).mean() * 100.0)
    else:
        mape = None
    return MetricsReport(mae=mae, rmse=rmse, mape=mape)


def metrics_per_horizon(pred: Array, truth: Array,
                        mape_threshold: float = MAPE_THRESHOLD) -> list[MetricsReport]:
    """One report per horizon step of B x H x N x F arrays."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"metric shapes differ: {pred.shape} vs {truth.shape}")
    return [metrics(pred[:, h], truth[:, h], mape_threshold)
            for h in range(pred.shape[1])]
