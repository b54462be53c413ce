"""Conditional affine-coupling normalizing flow ``x = T(y, z)`` in plain numpy.

Each block permutes its input, keeps the first half ``u1`` fixed and
scale-shifts the second half::

    (s_raw, t) = W2 relu(W1 [u1, y] + b1) + b2
    s = alpha * (2 / pi) * arctan(s_raw / alpha)
    out = [u1, u2 * exp(s) + t]

so ``log|det| = sum(s)``. ``W2`` and ``b2`` start at zero, making the fresh
flow a pure permutation.

Parameter layout: blocks in order, each block flattened as
``W1 (H, m1 + n)``, ``b1 (H,)``, ``W2 (2 m2, H)``, ``b2 (2 m2,)`` (row-major),
where ``m1 = flow_dim // 2`` and ``m2 = flow_dim - m1``. Per block that is
``H (m1 + n) + H + 2 m2 H + 2 m2`` numbers.

One-dimensional data is padded with an independent N(0, 1) nuisance
coordinate: the flow lives in 2D and only the first coordinate is reported.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammainc

from .mixtures import LinearGaussianProblem, as_seed_sequence
from .transport import w1_clouds

FORMAT_VERSION = 1
_LOG_2PI = np.log(2 * np.pi)


class FlowNumericalError(FloatingPointError):
    pass


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, last_good):
        super().__init__(message)
        self.last_good = last_good


@dataclass(frozen=True)
class FlowArchitecture:
    data_dim: int
    cond_dim: int
    num_blocks: int = 3
    hidden_width: int = 64
    clamp_alpha: float = 1.9

    def __post_init__(self):
        if min(self.data_dim, self.cond_dim, self.num_blocks, self.hidden_width) < 1:
            raise ValueError("all architecture sizes must be positive")
        if not self.clamp_alpha > 0:
            raise ValueError("clamp_alpha must be positive")

    @property
    def flow_dim(self) -> int:
        return max(2, self.data_dim)

    @property
    def latent_dim(self) -> int:
        return self.flow_dim

    @property
    def split(self) -> tuple[int, int]:
        m1 = self.flow_dim // 2
        return m1, self.flow_dim - m1

    def block_param_count(self) -> int:
        m1, m2 = self.split
        h, n = self.hidden_width, self.cond_dim
        return h * (m1 + n) + h + 2 * m2 * h + 2 * m2

    def param_count(self) -> int:
        return self.num_blocks * self.block_param_count()


@dataclass(frozen=True, eq=False)
class CondFlow:
    arch: FlowArchitecture
    params: np.ndarray
    perms: tuple
    seed: int = 0
    step: int = 0

    def __post_init__(self):
        p = np.asarray(self.params, dtype=float)
        if p.shape != (self.arch.param_count(),):
            raise ValueError(f"expected {self.arch.param_count()} parameters, got {p.shape}")
        perms = tuple(np.asarray(q, dtype=np.int64) for q in self.perms)
        if len(perms) != self.arch.num_blocks:
            raise ValueError("one permutation per block is required")
        for q in perms:
            if sorted(q.tolist()) != list(range(self.arch.flow_dim)):
                raise ValueError(f"not a permutation: {q}")
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "perms", perms)

    # generator interface shared with the oracles in certify
    @property
    def data_dim(self) -> int:
        return self.arch.data_dim

    @property
    def cond_dim(self) -> int:
        return self.arch.cond_dim

    @property
    def latent_dim(self) -> int:
        return self.arch.latent_dim

    def generate(self, y, z) -> np.ndarray:
        x, _ = flow_forward(self, y, z)
        return x[:, : self.arch.data_dim]

    def blocks(self):
        """Per-block ``(W1, b1, W2, b2)`` views into ``params``."""
        m1, m2 = self.arch.split
        h, n = self.arch.hidden_width, self.arch.cond_dim
        size = self.arch.block_param_count()
        out = []
        for k in range(self.arch.num_blocks):
            chunk = self.params[k * size:(k + 1) * size]
            i = 0
            w1 = chunk[i:i + h * (m1 + n)].reshape(h, m1 + n)
            i += h * (m1 + n)
            b1 = chunk[i:i + h]
            i += h
            w2 = chunk[i:i + 2 * m2 * h].reshape(2 * m2, h)
            i += 2 * m2 * h
            b2 = chunk[i:i + 2 * m2]
            out.append((w1, b1, w2, b2))
        return out

    def with_params(self, params, step=None) -> CondFlow:
        return replace(self, params=np.array(params, dtype=float),
                       step=self.step if step is None else step)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "arch": {
                "data_dim": self.arch.data_dim,
                "cond_dim": self.arch.cond_dim,
                "num_blocks": self.arch.num_blocks,
                "hidden_width": self.arch.hidden_width,
                "clamp_alpha": self.arch.clamp_alpha,
            },
            "params": self.params.tolist(),
            "perms": [q.tolist() for q in self.perms],
            "seed": self.seed,
            "step": self.step,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CondFlow:
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {d.get('format_version')!r}")
        return cls(FlowArchitecture(**d["arch"]), np.array(d["params"]), tuple(d["perms"]),
                   int(d["seed"]), int(d["step"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> CondFlow:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def init_flow(arch: FlowArchitecture, seed: int = 0) -> CondFlow:
    """Random first layers (He-scaled), zero output layers, fixed permutations.

    With two flow dimensions every block swaps the halves; a random
    permutation could leave one coordinate untouched by every block.
    """
    rng = np.random.default_rng(seed)
    m1, m2 = arch.split
    h, n = arch.hidden_width, arch.cond_dim
    chunks, perms = [], []
    for _ in range(arch.num_blocks):
        w1 = rng.standard_normal((h, m1 + n)) * np.sqrt(2.0 / (m1 + n))
        chunks += [w1.ravel(), np.zeros(h), np.zeros(2 * m2 * h), np.zeros(2 * m2)]
        if arch.flow_dim == 2:
            perms.append(np.array([1, 0]))
        else:
            perms.append(rng.permutation(arch.flow_dim))
    return CondFlow(arch, np.concatenate(chunks), tuple(perms), seed=seed, step=0)


def _clamp(s_raw, alpha):
    return alpha * (2 / np.pi) * np.arctan(s_raw / alpha)


def _clamp_grad(s_raw, alpha):
    return (2 / np.pi) / (1 + (s_raw / alpha) ** 2)


def _prep(f: CondFlow, y, v):
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[None, :]
    if v.shape[1] != f.arch.flow_dim:
        raise ValueError(f"expected {f.arch.flow_dim} flow coordinates, got {v.shape[1]}")
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[None, :]
    if y.shape[1] != f.arch.cond_dim:
        raise ValueError(f"expected condition of length {f.arch.cond_dim}, got {y.shape[1]}")
    y = np.broadcast_to(y, (v.shape[0], f.arch.cond_dim))
    return y, v


def _subnet(block, u1, y, alpha):
    w1, b1, w2, b2 = block
    inp = np.concatenate([u1, y], axis=1)
    a = inp @ w1.T + b1
    hid = np.maximum(a, 0.0)
    out = hid @ w2.T + b2
    m2 = out.shape[1] // 2
    s_raw, t = out[:, :m2], out[:, m2:]
    return _clamp(s_raw, alpha), t, (inp, a, hid, s_raw)


def _check(arr, k, what):
    if not np.all(np.isfinite(arr)):
        raise FlowNumericalError(f"non-finite {what} in block {k}")


def flow_forward(f: CondFlow, y, z):
    """Push latent ``z`` through the flow. Returns ``(x, logdet)`` in flow space."""
    y, v = _prep(f, y, z)
    m1 = f.arch.split[0]
    logdet = np.zeros(v.shape[0])
    for k, (block, perm) in enumerate(zip(f.blocks(), f.perms)):
        u = v[:, perm]
        u1, u2 = u[:, :m1], u[:, m1:]
        s, t, _ = _subnet(block, u1, y, f.arch.clamp_alpha)
        v = np.concatenate([u1, u2 * np.exp(s) + t], axis=1)
        logdet = logdet + s.sum(axis=1)
        _check(v, k, "output")
    return v, logdet


def flow_inverse(f: CondFlow, y, x):
    """Invert in the second argument. Returns ``(z, logdet_inverse)``."""
    y, v = _prep(f, y, x)
    m1 = f.arch.split[0]
    logdet = np.zeros(v.shape[0])
    blocks = f.blocks()
    for k in range(f.arch.num_blocks - 1, -1, -1):
        block, perm = blocks[k], f.perms[k]
        u1, o2 = v[:, :m1], v[:, m1:]
        s, t, _ = _subnet(block, u1, y, f.arch.clamp_alpha)
        u = np.concatenate([u1, (o2 - t) * np.exp(-s)], axis=1)
        logdet = logdet - s.sum(axis=1)
        v = np.empty_like(u)
        v[:, perm] = u
        _check(v, k, "latent")
    return v, logdet


def forward_kl_loss(f: CondFlow, x, y) -> float:
    """Batch mean of ``-log p_Z(T^{-1}(y, x)) - log|det D T^{-1}(y, x)|``."""
    return loss_and_gradient(f, x, y, want_grad=False)[0]


def loss_gradient(f: CondFlow, x, y) -> np.ndarray:
    return loss_and_gradient(f, x, y)[1]


def loss_and_gradient(f: CondFlow, x, y, want_grad: bool = True):
    """Forward-KL loss and its exact parameter gradient (reverse mode by hand)."""
    y, v = _prep(f, y, x)
    if v.shape[0] == 0:
        raise ValueError("empty batch")
    batch = v.shape[0]
    alpha = f.arch.clamp_alpha
    m1 = f.arch.split[0]
    blocks = f.blocks()
    tape = []
    s_total = np.zeros(batch)
    for k in range(f.arch.num_blocks - 1, -1, -1):
        u1, o2 = v[:, :m1], v[:, m1:]
        s, t, cache = _subnet(blocks[k], u1, y, alpha)
        u2 = (o2 - t) * np.exp(-s)
        s_total += s.sum(axis=1)
        u = np.concatenate([u1, u2], axis=1)
        v = np.empty_like(u)
        v[:, f.perms[k]] = u
        _check(v, k, "latent")
        tape.append((k, s, u2, cache))
    z = v
    per_sample = 0.5 * np.sum(z**2, axis=1) + 0.5 * f.arch.latent_dim * _LOG_2PI + s_total
    loss = float(per_sample.mean())
    if not np.isfinite(loss):
        raise FlowNumericalError("non-finite loss")
    if not want_grad:
        return loss, None

    grad = np.zeros_like(f.params)
    size = f.arch.block_param_count()
    gv = z / batch
    for k, s, u2, (inp, a, hid, s_raw) in reversed(tape):
        w1, b1, w2, b2 = blocks[k]
        gu = gv[:, f.perms[k]]
        gu1, gu2 = gu[:, :m1], gu[:, m1:]
        es = np.exp(-s)
        go2 = gu2 * es
        gt = -go2
        gs = -gu2 * u2 + 1.0 / batch
        gout = np.concatenate([gs * _clamp_grad(s_raw, alpha), gt], axis=1)
        gw2 = gout.T @ hid
        gb2 = gout.sum(axis=0)
        ga = (gout @ w2) * (a > 0)
        gw1 = ga.T @ inp
        gb1 = ga.sum(axis=0)
        gu1 = gu1 + (ga @ w1)[:, :m1]
        grad[k * size:(k + 1) * size] = np.concatenate(
            [gw1.ravel(), gb1, gw2.ravel(), gb2])
        gv = np.concatenate([gu1, go2], axis=1)
    if not np.all(np.isfinite(grad)):
        raise FlowNumericalError("non-finite gradient")
    return loss, grad


# -- optimiser ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **kw) -> AdamState:
        return cls(np.zeros(size), np.zeros(size), 0, **kw)


def adam_step(state: AdamState, params, grad, lr: float):
    """One bias-corrected Adam update. Inputs are not modified."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if not (params.shape == grad.shape == state.m.shape):
        raise ValueError("params, grad and Adam moments must have the same length")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad**2
    mhat = m / (1 - state.beta1**t)
    vhat = v / (1 - state.beta2**t)
    new = params - lr * mhat / (np.sqrt(vhat) + state.eps_hat)
    return replace(state, m=m, v=v, t=t), new


# -- training --------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch: int = 256
    lr: float = 1e-3
    seed: int = 0
    eval_every: int = 500
    eval_num_obs: int = 30
    eval_samples: int = 500
    val_size: int = 4096

    def __post_init__(self):
        if self.steps < 0 or min(self.batch, self.eval_every, self.eval_num_obs,
                                 self.eval_samples, self.val_size) < 1 or not self.lr > 0:
            raise ValueError(f"invalid training config: {self}")


@dataclass(frozen=True)
class TraceRow:
    step: int
    loss: float
    epsilon_hat: float
    epsilon_hat_stderr: float


@dataclass
class TrainResult:
    flow: CondFlow
    checkpoints: list = field(default_factory=list)
    trace: list = field(default_factory=list)


def pad_data(f_or_arch, x, rng):
    """Append the N(0, 1) nuisance coordinate(s) when data_dim < flow_dim."""
    arch = f_or_arch.arch if isinstance(f_or_arch, CondFlow) else f_or_arch
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    extra = arch.flow_dim - x.shape[1]
    if extra == 0:
        return x
    return np.concatenate([x, rng.standard_normal((x.shape[0], extra))], axis=1)


def train(problem: LinearGaussianProblem, arch: FlowArchitecture, cfg: TrainConfig,
          init: CondFlow | None = None, evaluate: bool = True, progress=None) -> TrainResult:
    """Minimise the forward-KL loss with Adam on freshly simulated batches.

    Batch ``i`` is drawn from a seed derived from ``(cfg.seed, i)``, so a run
    resumed from a checkpoint sees the same data as an uninterrupted one.
    Every ``eval_every`` steps (and at the start and end) a checkpoint is kept
    and a trace row records the loss on a fixed validation batch together with
    the Monte-Carlo estimate of ``E_y W1(posterior, pushforward)``.
    """
    from .certify import estimate_epsilon

    if arch.data_dim != problem.data_dim or arch.cond_dim != problem.obs_dim:
        raise ValueError("architecture does not match the problem dimensions")
    flow = init if init is not None else init_flow(arch, cfg.seed)
    state = AdamState.zeros(arch.param_count())
    val_rng = np.random.default_rng([cfg.seed, 2])
    xv, yv = problem.simulate(cfg.val_size, val_rng)
    xv = pad_data(arch, xv, val_rng)
    result = TrainResult(flow)

    def record(fl):
        loss = forward_kl_loss(fl, xv, yv)
        if evaluate:
            eps, se = estimate_epsilon(fl, problem, cfg.eval_num_obs, cfg.eval_samples,
                                       seed=[cfg.seed, 3])
        else:
            eps, se = float("nan"), float("nan")
        result.checkpoints.append(fl)
        result.trace.append(TraceRow(fl.step, loss, eps, se))
        if progress:
            progress(result.trace[-1])

    record(flow)
    start = flow.step
    params = flow.params
    for i in range(start, start + cfg.steps):
        rng = np.random.default_rng([cfg.seed, 1, i])
        x, y = problem.simulate(cfg.batch, rng)
        x = pad_data(arch, x, rng)
        try:
            loss, grad = loss_and_gradient(flow, x, y)
        except FlowNumericalError as err:
            raise TrainingDiverged(f"step {i}: {err}", result.checkpoints[-1]) from err
        state, params = adam_step(state, params, grad, cfg.lr)
        if not (np.isfinite(loss) and np.all(np.isfinite(params))):
            raise TrainingDiverged(f"step {i}: non-finite update", result.checkpoints[-1])
        flow = flow.with_params(params, step=i + 1)
        if (i + 1 - start) % cfg.eval_every == 0 or i + 1 == start + cfg.steps:
            try:
                record(flow)
            except FlowNumericalError as err:
                raise TrainingDiverged(f"step {i + 1}: {err}", result.checkpoints[-1]) from err
    result.flow = flow
    return result


def trace_to_csv(trace) -> str:
    lines = ["step,loss,epsilon_hat,epsilon_hat_stderr"]
    for r in trace:
        lines.append(f"{r.step},{r.loss!r},{r.epsilon_hat!r},{r.epsilon_hat_stderr!r}")
    return "\n".join(lines) + "\n"


def trace_from_csv(text: str) -> list:
    rows = []
    for line in text.strip().splitlines()[1:]:
        s, loss, eps, se = line.split(",")
        rows.append(TraceRow(int(s), float(loss), float(eps), float(se)))
    return rows


# -- sampling and derivatives -------------------------------------------------------

def sample_pushforward(gen, y, count: int, seed=None) -> np.ndarray:
    """``count`` draws of ``G(y, Z)`` with ``Z ~ N(0, I)``; returns (count, data_dim)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, gen.latent_dim))
    return gen.generate(np.asarray(y, dtype=float).reshape(-1), z)


def generator_y_jacobian(gen, y, z, h: float = 1e-4) -> np.ndarray:
    """Central-difference Jacobian of ``y -> G(y, z)``.

    ``y`` (n,) with ``z`` (d,) gives an (m, n) matrix; batched ``y`` (P, n)
    and ``z`` (P, d) give (P, m, n).
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    z = np.atleast_2d(z)
    y = np.broadcast_to(y, (z.shape[0], y.shape[1]))
    n = y.shape[1]
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        cols.append((gen.generate(y + e, z) - gen.generate(y - e, z)) / (2 * h))
    jac = np.stack(cols, axis=-1)
    if not np.all(np.isfinite(jac)):
        raise FlowNumericalError("non-finite generator output while differentiating")
    return jac[0] if single else jac


def spectral_norm(jac) -> np.ndarray:
    return np.linalg.norm(jac, ord=2, axis=(-2, -1))


# -- truncated latent ----------------------------------------------------------------

def truncation_mass(radius: float, d: int) -> float:
    """``P(|Z| <= radius)`` for ``Z ~ N(0, I_d)``: the chi-square CDF at ``radius^2``."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    return float(gammainc(d / 2.0, radius**2 / 2.0))


def _rejection_stream(rng, radius, d, count, chunk):
    out, got = [], 0
    first = None
    while got < count:
        z = rng.standard_normal((chunk, d))
        if first is None:
            first = z[:count]
        keep = z[np.sum(z**2, axis=1) <= radius**2]
        out.append(keep)
        got += len(keep)
    return np.concatenate(out)[:count], first


def truncated_latent_sample(radius: float, d: int, count: int, seed=None) -> np.ndarray:
    """Standard normal draws conditioned on ``|z| <= radius`` (rejection sampling)."""
    mass = truncation_mass(radius, d)
    if mass < 1e-6:
        raise ValueError(f"acceptance probability {mass:.3g} too small for rejection sampling")
    rng = np.random.default_rng(seed)
    chunk = int(min(max(count / mass * 1.1, count), 10_000_000)) + 16
    return _rejection_stream(rng, radius, d, count, chunk)[0]


def _gap_pair(gen, y, radius, count, seq):
    """One (gap, noise floor) pair with shared randomness.

    Cloud A uses full latents; stream B yields both its first ``count`` full
    latents and its first ``count`` accepted ones, so the gap and the floor
    differ only through the truncation itself.
    """
    ra, rb = (np.random.default_rng(s) for s in as_seed_sequence(seq).spawn(2))
    d = gen.latent_dim
    y = np.asarray(y, dtype=float).reshape(-1)
    za = ra.standard_normal((count, d))
    mass = truncation_mass(radius, d)
    if mass < 1e-6:
        raise ValueError(f"acceptance probability {mass:.3g} too small for rejection sampling")
    chunk = int(max(count / mass * 1.1, count)) + 16
    zt, zb = _rejection_stream(rb, radius, d, count, chunk)
    xa, xb, xt = gen.generate(y, za), gen.generate(y, zb), gen.generate(y, zt)
    return w1_clouds(xa, xt), w1_clouds(xa, xb)


def truncation_gap(gen, y, radius: float, count: int, seed=None) -> float:
    """Empirical W1 between pushforwards of the full and the truncated latent."""
    return _gap_pair(gen, y, radius, count, seed)[0]


def truncation_table(gen, y, radii, count: int, reps: int = 5, seed=None):
    """Rows ``(radius, gap, gap_stderr, noise_floor, truncation_mass)``.

    ``noise_floor`` is the W1 between two independent full-latent clouds of
    the same size, i.e. what the gap converges to as the radius grows.
    """
    rows = []
    root = as_seed_sequence(seed)
    seqs = root.spawn(reps)
    for r in radii:
        pairs = np.array([_gap_pair(gen, y, r, count, s) for s in seqs])
        gaps, floors = pairs[:, 0], pairs[:, 1]
        se = float(gaps.std(ddof=1) / np.sqrt(reps)) if reps > 1 else float("nan")
        rows.append((float(r), float(gaps.mean()), se, float(floors.mean()),
                     truncation_mass(r, gen.latent_dim)))
    return rows
