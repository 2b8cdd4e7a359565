"""Penalized dual solver for vectorial martingale transport.

The super-hedge is parametrized by small ReLU networks and trained by
minimizing

    sum_i E_mu_i[phi_i] + E_nu_i[psi_i] + E_theta[b_gamma(c - hedge)],

with ``b_gamma(t) = (gamma / 2) (t^+)^2`` and ``theta`` the independent
coupling of the marginals.  Two parametrizations are available:

``full``
    ``hedge(x, y) = sum_i phi_i(x_i) + psi_i(y_i) + h_i(x) (y_i - x_i)``,
    sampled on ``R^{2d}``.
``reduced``
    The first-period coupling is fixed to the comonotone one, ``x = F^{-1}(u)``
    for a single uniform ``u``, and
    ``hedge(u, v) = phi(u) + sum_i psi_i(v_i) + h_i(u) (G_i^{-1}(v_i) - F_i^{-1}(u))``,
    sampled on ``(0, 1)^{d+1}``.

Minimization problems are solved as maximization of ``-c`` and the sign of
reported values is flipped back.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special

from .coupling import CostSpec
from .distributions import Discrete, DomainError, Marginal1D, Normal, convex_order, open_uniforms
from .mlp import Adam, MlpStack
from .modularity import GridFn

__all__ = [
    "FULL",
    "REDUCED",
    "VmotInstance",
    "TrainConfig",
    "DualState",
    "TrainReport",
    "TrainingError",
    "Batch",
    "init_state",
    "sample_batch",
    "dual_payoff",
    "loss",
    "train",
    "dual_value",
    "exact_dual_value",
    "cost_rms",
    "primal_density",
    "save_state",
    "load_state",
]

log = logging.getLogger(__name__)

FULL = "full"
REDUCED = "reduced"


class TrainingError(RuntimeError):
    """Training diverged (non-finite dual value)."""


@dataclass(frozen=True, eq=False)
class VmotInstance:
    mus: Sequence[Marginal1D]
    nus: Sequence[Marginal1D]
    cost: CostSpec
    direction: str = "max"
    formulation: str = REDUCED
    first_period: str = "auto"  # reduced only: "monotone", "antimonotone" or "auto"

    def __post_init__(self):
        if len(self.mus) != len(self.nus) or len(self.mus) < 1:
            raise DomainError("need one first- and one second-period marginal per asset")
        if self.direction not in ("max", "min"):
            raise DomainError("direction must be 'max' or 'min'")
        if self.formulation not in (FULL, REDUCED):
            raise DomainError("formulation must be 'full' or 'reduced'")
        if self.first_period not in ("auto", "monotone", "antimonotone"):
            raise DomainError("first_period must be 'auto', 'monotone' or 'antimonotone'")
        if self.first_period == "antimonotone" and self.d != 2:
            raise DomainError("the anti-monotone coupling is defined for two assets")

    @property
    def d(self) -> int:
        return len(self.mus)

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "max" else -1.0

    @property
    def flips(self) -> np.ndarray:
        """Which assets read the common level as ``1 - u`` in the reduced formulation.

        ``auto`` picks the comonotone coupling for upper bounds and, with two
        assets, the anti-monotone one for lower bounds.
        """
        mode = self.first_period
        if mode == "auto":
            mode = "antimonotone" if (self.direction == "min" and self.d == 2) else "monotone"
        out = np.zeros(self.d, dtype=bool)
        if mode == "antimonotone":
            out[1] = True
        return out

    @property
    def sample_dim(self) -> int:
        return 2 * self.d if self.formulation == FULL else self.d + 1

    def with_(self, **kw) -> "VmotInstance":
        args = dict(mus=self.mus, nus=self.nus, cost=self.cost, direction=self.direction,
                    formulation=self.formulation, first_period=self.first_period)
        args.update(kw)
        return VmotInstance(**args)


@dataclass
class TrainConfig:
    gamma: float = 1000.0
    n_batches: int = 3
    points_per_batch: int = 100_000
    epochs_per_batch: int = 10
    minibatch: int = 256
    lr: float = 1e-2
    lr_final: float | None = 1e-4
    hidden: tuple[int, ...] = (64, 64)
    output_scale: float | str = 1.0  # a number, or "auto": RMS of the cost, with gamma read on the normalized payoff
    n_eval: int = 32_768
    report_window: int = 100
    seed: int = 0

    @classmethod
    def desk(cls, **kw) -> "TrainConfig":
        return cls(**kw)

    @classmethod
    def paper(cls, **kw) -> "TrainConfig":
        kw.setdefault("n_batches", 30)
        kw.setdefault("points_per_batch", 1_000_000)
        kw.setdefault("minibatch", 8192)
        return cls(**kw)

    @property
    def n_epochs(self) -> int:
        return self.n_batches * self.epochs_per_batch


def _layout(d: int, formulation: str) -> tuple[int, int]:
    """Number of stacked networks and their input width."""
    if formulation == FULL:
        return 3 * d, d
    if formulation == REDUCED:
        return 2 * d + 1, 1
    raise DomainError(f"unknown formulation {formulation!r}")


@dataclass
class DualState:
    """All potentials of one hedge, stacked as ``[phi..., psi_1..psi_d, h_1..h_d]``.

    Full: ``d`` first-period potentials with inputs zero-padded to width
    ``d``.  Reduced: a single first-period potential of the common level.
    """

    formulation: str
    d: int
    gamma: float
    net: MlpStack
    optimizer: Adam = field(default_factory=Adam)
    output_scale: float = 1.0  # potentials are output_scale * network output

    def __post_init__(self):
        if not self.gamma > 0:
            raise DomainError("gamma must be positive")
        if not self.output_scale > 0:
            raise DomainError("output scale must be positive")
        if (self.net.n_nets, self.net.input_dim) != _layout(self.d, self.formulation):
            raise DomainError("networks do not match the formulation")

    @property
    def groups(self) -> dict[str, slice]:
        n_phi = self.d if self.formulation == FULL else 1
        return {"phi": slice(0, n_phi), "psi": slice(n_phi, n_phi + self.d),
                "h": slice(n_phi + self.d, n_phi + 2 * self.d)}


@dataclass
class TrainReport:
    epoch_values: list[float]
    final_mean: float
    final_std: float
    window: int
    config: TrainConfig
    seed: int
    seconds: float = 0.0
    sample_dim: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,dual_value\n")
            for k, v in enumerate(self.epoch_values, 1):
                fh.write(f"{k},{float(v)!r}\n")


def init_state(d: int, formulation: str, gamma: float, hidden=(64, 64), rng=None, zero: bool = False,
               output_scale: float = 1.0) -> DualState:
    k, width = _layout(d, formulation)
    net = MlpStack.zeros(k, width, hidden) if zero else MlpStack.init(k, width, hidden, rng)
    return DualState(formulation, d, float(gamma), net, output_scale=float(output_scale))


# --------------------------------------------------------------------------
# sampling


@dataclass
class Batch:
    """Points of the reference measure together with their price coordinates."""

    x: np.ndarray  # (N, d) first-period prices
    y: np.ndarray  # (N, d) second-period prices
    u: np.ndarray | None = None  # (N,) common first-period level (reduced only)
    v: np.ndarray | None = None  # (N, d) second-period levels (reduced only)

    def __len__(self) -> int:
        return self.x.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.x[idx], self.y[idx], None if self.u is None else self.u[idx],
                     None if self.v is None else self.v[idx])


def _quantiles(m: Marginal1D, u):
    if isinstance(m, Normal):
        return m.loc + m.scale * special.ndtri(u)
    return m.quantile(u)


def _first_period(inst: VmotInstance, u: np.ndarray) -> np.ndarray:
    flips = inst.flips
    return np.column_stack([_quantiles(m, 1.0 - u if f else u) for m, f in zip(inst.mus, flips)])


def sample_batch(inst: VmotInstance, n: int, rng: np.random.Generator) -> Batch:
    """``n`` draws from the independent reference coupling of the formulation."""
    d = inst.d
    if inst.formulation == FULL:
        x = np.column_stack([m.sample(n, rng) for m in inst.mus])
        y = np.column_stack([m.sample(n, rng) for m in inst.nus])
        return Batch(x, y)
    u = open_uniforms(rng, n)
    v = open_uniforms(rng, (n, d))
    x = _first_period(inst, u)
    y = np.column_stack([_quantiles(m, v[:, i]) for i, m in enumerate(inst.nus)])
    return Batch(x, y, u, v)


def _scales(marginals):
    return np.array([m.mean() for m in marginals]), np.array([max(m.std(), 1e-12) for m in marginals])


def _features(inst: VmotInstance, batch: Batch) -> np.ndarray:
    """Stacked network inputs ``(K, N, width)``.

    Prices are standardized by their marginal mean and deviation; the common
    level of the reduced formulation enters through its normal score.
    """
    d, n = inst.d, len(batch)
    ym, ys = _scales(inst.nus)
    yz = (batch.y - ym) / ys
    if inst.formulation == FULL:
        xm, xs = _scales(inst.mus)
        xz = (batch.x - xm) / xs
        X = np.zeros((3 * d, n, d))
        for i in range(d):
            X[i, :, 0] = xz[:, i]
            X[d + i, :, 0] = yz[:, i]
        X[2 * d:] = xz
        return X
    X = np.empty((2 * d + 1, n, 1))
    uz = special.ndtri(batch.u)
    X[0, :, 0] = uz
    X[1:d + 1, :, 0] = yz.T
    X[d + 1:, :, 0] = uz
    return X


# --------------------------------------------------------------------------
# payoff, loss and gradients


def _evaluate(state: DualState, inst: VmotInstance, batch: Batch, keep: bool):
    """Stacked outputs split by group, plus activations when ``keep``."""
    if state.formulation != inst.formulation or state.d != inst.d:
        raise DomainError("state and instance disagree on formulation or dimension")
    res = state.net.forward(_features(inst, batch), keep=keep)
    out, acts = res if keep else (res, None)
    if state.output_scale != 1.0:
        out = out * state.output_scale
    return {k: out[sl] for k, sl in state.groups.items()}, acts


def dual_payoff(state: DualState, inst: VmotInstance, batch: Batch) -> np.ndarray:
    """Hedge value at each point of ``batch``.

    Full: ``sum_i phi_i(x_i) + psi_i(y_i) + h_i(x)(y_i - x_i)``.
    Reduced: ``phi(u) + sum_i psi_i(v_i) + h_i(u)(G_i^{-1}(v_i) - F_i^{-1}(u))``.
    """
    out, _ = _evaluate(state, inst, batch, keep=False)
    return _payoff_from(out, batch)


def _payoff_from(out, batch: Batch) -> np.ndarray:
    inc = (batch.y - batch.x).T  # (d, N)
    return out["phi"].sum(axis=0) + out["psi"].sum(axis=0) + (out["h"] * inc).sum(axis=0)


def _pointwise(state, inst, batch, out):
    # Per-point contribution to the objective and the penalty slope b_gamma'.
    hedge = _payoff_from(out, batch)
    c = inst.sign * np.asarray(inst.cost(batch.x, batch.y), dtype=float)
    t = np.maximum(c - hedge, 0.0)
    linear = out["phi"].sum(axis=0) + out["psi"].sum(axis=0)
    contrib = linear + 0.5 * state.gamma * t * t
    return contrib, state.gamma * t


def loss(state: DualState, inst: VmotInstance, batch: Batch, grad: bool = True):
    """Mean penalized objective on ``batch`` and, optionally, its gradients.

    The ``h`` terms drop out of the linear part because they integrate to
    zero against any martingale coupling.  The gradient is a flat array
    aligned with ``state.net.flat``.
    """
    if not state.gamma > 0:
        raise DomainError("gamma must be positive")
    out, acts = _evaluate(state, inst, batch, keep=grad)
    contrib, slope = _pointwise(state, inst, batch, out)
    value = float(contrib.mean())
    if not grad:
        return value
    n = len(batch)
    g = np.empty((state.net.n_nets, n))
    gr = state.groups
    g[gr["phi"]] = (1.0 - slope) / n  # d loss / d phi, d psi at each point
    g[gr["psi"]] = (1.0 - slope) / n
    g[gr["h"]] = -slope / n * (batch.y - batch.x).T
    if state.output_scale != 1.0:
        g *= state.output_scale
    return value, state.net.backward(acts, g)


def dual_value(state: DualState, inst: VmotInstance, n_eval_points: int = 100_000, seed=None,
               batch: Batch | None = None) -> tuple[float, float]:
    """Monte Carlo estimate ``(value, std_err)`` of the penalized dual objective.

    The value is reported in the instance's own sign convention, i.e. it
    estimates an upper bound for ``max`` and a lower bound for ``min``.
    """
    if batch is None:
        batch = sample_batch(inst, n_eval_points, np.random.default_rng(seed))
    out, _ = _evaluate(state, inst, batch, keep=False)
    contrib, _ = _pointwise(state, inst, batch, out)
    se = float(contrib.std(ddof=1) / np.sqrt(contrib.size)) if contrib.size > 1 else 0.0
    return inst.sign * float(contrib.mean()), se


def exact_dual_value(state: DualState, inst: VmotInstance) -> float:
    """Penalized objective integrated exactly against the product of discrete marginals.

    Full formulation only; every marginal must be :class:`Discrete`.
    """
    if inst.formulation != FULL:
        raise DomainError("exact evaluation needs the full formulation")
    if not all(isinstance(m, Discrete) for m in (*inst.mus, *inst.nus)):
        raise DomainError("exact evaluation needs discrete marginals")
    laws = [*inst.mus, *inst.nus]
    mesh = np.meshgrid(*[m.atoms for m in laws], indexing="ij")
    wmesh = np.meshgrid(*[m.weights for m in laws], indexing="ij")
    pts = np.column_stack([g.ravel() for g in mesh])
    w = np.prod(np.column_stack([g.ravel() for g in wmesh]), axis=1)
    b = Batch(pts[:, :inst.d], pts[:, inst.d:])
    out, _ = _evaluate(state, inst, b, keep=False)
    contrib, _ = _pointwise(state, inst, b, out)
    return inst.sign * float(w @ contrib)


# --------------------------------------------------------------------------
# training


def _check_order(inst: VmotInstance) -> None:
    for i, (m, n) in enumerate(zip(inst.mus, inst.nus)):
        try:
            ok = convex_order(m, n)
        except Exception:  # pragma: no cover - diagnostic only
            ok = True
        if not ok:
            log.warning("marginal pair %d fails the numerical convex-order check", i)


def cost_rms(inst: VmotInstance, n: int = 10_000, seed: int = 0) -> float:
    """Root-mean-square of the payoff under the reference coupling."""
    b = sample_batch(inst, n, np.random.default_rng(seed))
    c = np.asarray(inst.cost(b.x, b.y), dtype=float)
    return float(np.sqrt(np.mean(c * c))) or 1.0


def train(inst: VmotInstance, config: TrainConfig | None = None, state: DualState | None = None,
          callback=None) -> tuple[DualState, TrainReport]:
    """Adam on the penalized objective; deterministic given ``config.seed``.

    After every epoch the dual value is estimated on a held-out batch drawn
    from an independent random stream, and ``callback(epoch, state, value)``
    is invoked if given.
    """
    cfg = TrainConfig() if config is None else config
    _check_order(inst)
    ss = np.random.SeedSequence(cfg.seed)
    init_rng, data_rng, eval_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    if state is None:
        if cfg.output_scale == "auto":
            # train on the payoff normalized to unit RMS; gamma refers to that problem
            scale = cost_rms(inst)
            gamma = cfg.gamma / scale
        else:
            scale, gamma = float(cfg.output_scale), cfg.gamma
        state = init_state(inst.d, inst.formulation, gamma, cfg.hidden, init_rng, output_scale=scale)
    state.optimizer.lr = cfg.lr
    steps_per_epoch = max(1, -(-cfg.points_per_batch // cfg.minibatch))
    total_steps = cfg.n_epochs * steps_per_epoch
    values: list[float] = []
    t0 = time.perf_counter()
    log.info("training %s formulation, sample dimension %d, %d epochs", inst.formulation, inst.sample_dim, cfg.n_epochs)
    step = 0
    for _ in range(cfg.n_batches):
        data = sample_batch(inst, cfg.points_per_batch, data_rng)
        for _ in range(cfg.epochs_per_batch):
            perm = data_rng.permutation(len(data))
            for k in range(steps_per_epoch):
                idx = perm[k * cfg.minibatch:(k + 1) * cfg.minibatch]
                if cfg.lr_final is not None:
                    # geometric decay from lr to lr_final over the whole run
                    state.optimizer.lr = cfg.lr * (cfg.lr_final / cfg.lr) ** (step / max(total_steps - 1, 1))
                _, grads = loss(state, inst, data.take(idx))
                state.optimizer.update(state.net.flat, grads)
                step += 1
            val, _ = dual_value(state, inst, batch=sample_batch(inst, cfg.n_eval, eval_rng))
            if not np.isfinite(val):
                raise TrainingError(f"dual value diverged after {len(values) + 1} epochs (last finite values: {values[-3:]})")
            values.append(val)
            if callback is not None:
                callback(len(values), state, val)
            log.debug("epoch %d dual value %.6f", len(values), val)
    window = max(1, min(cfg.report_window, cfg.n_epochs // 3 if cfg.n_epochs >= 3 else cfg.n_epochs))
    tail = np.array(values[-window:])
    report = TrainReport(values, float(tail.mean()), float(tail.std(ddof=1)) if tail.size > 1 else 0.0,
                         window, cfg, cfg.seed, time.perf_counter() - t0, inst.sample_dim)
    return state, report


# --------------------------------------------------------------------------
# primal recovery


def primal_density(state: DualState, inst: VmotInstance, n_grid: int = 50, n_inner: int = 4096, seed=0) -> GridFn:
    """First-period law in quantile coordinates, recovered from ``b_gamma'(c - hedge)``.

    Returns a density on the cell midpoints of an ``n_grid``-point grid of
    ``(0, 1)^d``, normalized to unit mass.  In the reduced formulation all
    mass lies on the diagonal, or the anti-diagonal for an anti-monotone
    first period.  If the penalty slope vanishes everywhere
    (e.g. an untrained state), a uniform density is returned and
    ``GridFn.meta['degenerate']`` is set.
    """
    d = inst.d
    rng = np.random.default_rng(seed)
    u = (np.arange(n_grid) + 0.5) / n_grid
    cell = 1.0 / n_grid
    if inst.formulation == REDUCED:
        v = open_uniforms(rng, (n_inner, d))
        y = np.column_stack([_quantiles(m, v[:, i]) for i, m in enumerate(inst.nus)])
        line = np.empty(n_grid)
        for k, uk in enumerate(u):
            uu = np.full(n_inner, uk)
            x = _first_period(inst, uu)
            b = Batch(x, y, uu, v)
            _, slope = _pointwise(state, inst, b, _evaluate(state, inst, b, keep=False)[0])
            line[k] = slope.mean()
        values = np.zeros((n_grid,) * d)
        diag = np.arange(n_grid)
        values[tuple(n_grid - 1 - diag if f else diag for f in inst.flips)] = line
    else:
        y = np.column_stack([m.sample(n_inner, rng) for m in inst.nus])
        mesh = np.meshgrid(*([u] * d), indexing="ij")
        flat = np.column_stack([g.ravel() for g in mesh])
        xq = np.column_stack([_quantiles(m, flat[:, i]) for i, m in enumerate(inst.mus)])
        values = np.empty(flat.shape[0])
        for k in range(flat.shape[0]):
            b = Batch(np.broadcast_to(xq[k], y.shape).copy(), y)
            _, slope = _pointwise(state, inst, b, _evaluate(state, inst, b, keep=False)[0])
            values[k] = slope.mean()
        values = values.reshape((n_grid,) * d)
    total = values.sum() * cell**d
    meta = {"degenerate": False}
    if not total > 0:
        meta["degenerate"] = True
        values = np.ones_like(values)
        total = values.sum() * cell**d
    return GridFn([u] * d, values / total, meta=meta)


# --------------------------------------------------------------------------
# persistence
#
# Text format, one record per line:
#   vmot-dualstate 2
#   formulation <full|reduced>
#   d <int>
#   gamma <float>
#   scale <float>
#   step <int>
#   array <name> <dim> <dim> ...
#   <all entries, space separated, C order>
# Arrays: net.W<l>, net.b<l> for each layer of the stacked networks, then the
# flat Adam moments adam.m and adam.v if the optimizer has taken a step.


def save_state(state: DualState, path) -> None:
    lines = ["vmot-dualstate 2", f"formulation {state.formulation}", f"d {state.d}",
             f"gamma {float(state.gamma)!r}", f"scale {float(state.output_scale)!r}", f"step {state.optimizer.step}"]

    def emit(name, arr):
        lines.append(f"array {name} " + " ".join(str(s) for s in arr.shape))
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))

    for l, (W, b) in enumerate(state.net.layers):
        emit(f"net.W{l}", W)
        emit(f"net.b{l}", b)
    if state.optimizer.m is not None:
        emit("adam.m", state.optimizer.m)
        emit("adam.v", state.optimizer.v)
    Path(path).write_text("\n".join(lines) + "\n")


def load_state(path) -> DualState:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split() != ["vmot-dualstate", "2"]:
        raise DomainError("not a dual-state file")
    head = {}
    arrays = {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] == "array":
            shape = tuple(int(s) for s in parts[2:])
            arrays[parts[1]] = np.array([float(s) for s in lines[i + 1].split()]).reshape(shape)
            i += 2
        else:
            head[parts[0]] = parts[1:]
            i += 1
    layers = []
    while f"net.W{len(layers)}" in arrays:
        layers.append((arrays[f"net.W{len(layers)}"], arrays[f"net.b{len(layers)}"]))
    opt = Adam(step=int(head["step"][0]), m=arrays.get("adam.m"), v=arrays.get("adam.v"))
    return DualState(head["formulation"][0], int(head["d"][0]), float(head["gamma"][0]), MlpStack(layers), opt,
                     float(head.get("scale", ["1.0"])[0]))
