"""Adversarial training of the hybrid generator against a classical discriminator.

One epoch shuffles the real rows and, for every mini-batch, takes one
discriminator step followed by one generator step.  Stabilizers: bounded
instance noise on discriminator inputs, a smoothed generator target,
feature matching on the discriminator's second hidden layer, batch moment
matching, global gradient-norm clipping of the generator, and a
checkpoint-driven schedule that tightens or relaxes (noise, target,
dropout) according to discriminator accuracy.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import neural as nn
from . import quantum_sim as qs
from .errors import InvalidArgumentError, TrainingError
from .metrics import ks_two_sample, perturb

CHECKPOINT_SCHEMA = "qsynth.checkpoint"
CHECKPOINT_VERSION = 1
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr_g: float = 7e-4
    lr_d: float = 2e-4
    n_layers: int = 8
    hidden: int = 32
    latent_dim: int | None = None
    disc_hidden: tuple = (16, 8)
    leaky_slope: float = 0.2
    disc_zero_head: bool = True
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    fm_weight: float = 0.10
    mm_mean_weight: float = 0.05
    mm_std_weight: float = 0.03
    std_floor: float = 1e-6
    clip_norm: float = 1.0
    gamma0: float = 0.88
    dropout0: float = 0.10
    noise_base: float = 0.014
    noise_end_bonus: float = 0.016
    noise_increment: float = 0.002
    eval_every: int = 10
    n_eval: int = 2000
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "disc_zero_head":
                ok = isinstance(val, bool)
            elif f.name in ("epochs", "seed"):
                ok = val >= 0
            elif f.name == "latent_dim":
                ok = val is None or val > 0
            elif f.name == "disc_hidden":
                object.__setattr__(self, "disc_hidden", tuple(int(v) for v in val))
                ok = len(self.disc_hidden) == 2 and min(self.disc_hidden) > 0
            else:
                ok = val > 0
            if not ok:
                raise InvalidArgumentError(f"invalid TrainConfig.{f.name}={val!r}")


@dataclass(frozen=True)
class ScheduleState:
    """Current regularization controls plus the rules for moving them."""

    sigma: float = 0.016
    gamma: float = 0.88
    p: float = 0.10
    gamma_bounds: tuple = (0.80, 0.94)
    p_bounds: tuple = (0.10, 0.16)
    noise_step: float = 0.004
    gamma_step: float = 0.02
    p_step: float = 0.03
    high_accuracy: float = 0.85
    low_accuracy: float = 0.55

    @classmethod
    def initial(cls, config: TrainConfig) -> "ScheduleState":
        return cls(sigma=config.noise_base + config.noise_increment, gamma=config.gamma0, p=config.dropout0)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        for key in ("gamma_bounds", "p_bounds"):
            doc[key] = tuple(doc[key])
        return cls(**doc)


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    loss_d: float
    loss_g: float
    loss_g_adv: float
    loss_g_fm: float
    loss_g_mm: float


def adapt_regularization(schedule: ScheduleState, disc_accuracy: float) -> ScheduleState:
    """Raise regularization when the discriminator wins too easily, relax it when it is near chance."""
    s = schedule
    sigma, gamma, p = s.sigma, s.gamma, s.p
    if disc_accuracy > s.high_accuracy:
        sigma = sigma + s.noise_step
        p = p + s.p_step
        gamma = gamma - s.gamma_step
    elif disc_accuracy < s.low_accuracy:
        sigma = max(sigma - s.noise_step, 0.0)
        p = p - s.p_step
        gamma = gamma + s.gamma_step
    gamma = min(max(gamma, s.gamma_bounds[0]), s.gamma_bounds[1])
    p = min(max(p, s.p_bounds[0]), s.p_bounds[1])
    return replace(s, sigma=max(sigma, 0.0), gamma=gamma, p=p)


def instance_noise(schedule: ScheduleState, epoch: int, config: TrainConfig) -> float:
    """Noise scale used during ``epoch``: scheduled level plus a linear end-of-run ramp."""
    frac = epoch / max(config.epochs - 1, 1)
    return schedule.sigma + config.noise_end_bonus * frac


def perturb_instance(u, sigma: float, rng) -> np.ndarray:
    if sigma < 0:
        raise InvalidArgumentError("noise scale must be non-negative")
    return perturb(u, sigma, rng)


def bce(u, y):
    """Binary cross-entropy with the probability clamped to ``[1e-7, 1 - 1e-7]``."""
    u = np.clip(np.asarray(u, dtype=float), BCE_CLAMP, 1.0 - BCE_CLAMP)
    return -y * np.log(u) - (1.0 - y) * np.log(1.0 - u)


def _bce_dlogit(prob, y):
    """d bce(sigmoid(s), y)/ds; zero where the clamp is active."""
    inside = (prob > BCE_CLAMP) & (prob < 1.0 - BCE_CLAMP)
    return np.where(inside, prob - y, 0.0)


def clip_grad_norm(grads: dict, max_norm: float):
    """Scale all gradients together so their joint 2-norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        factor = max_norm / norm
        grads = {k: g * factor for k, g in grads.items()}
    return grads, norm


# ---------------------------------------------------------------------------
# generators


class HybridGenerator:
    """Front-end MLP producing circuit angles, followed by the quantum circuit."""

    kind = "hybrid"

    def __init__(self, params: nn.GeneratorParams, embed: nn.LatentEmbed, n_layers: int):
        if embed.P.shape != (params.num_qubits, params.latent_dim):
            raise InvalidArgumentError("embedding shape does not match the front-end")
        self.params = params
        self.embed = embed
        self.n_layers = int(n_layers)

    @classmethod
    def init(cls, out_dim: int, config: TrainConfig, rng):
        m = config.latent_dim or out_dim
        params = nn.GeneratorParams.init(m, config.hidden, out_dim, rng)
        return cls(params, nn.LatentEmbed.default(out_dim, m), config.n_layers)

    @property
    def latent_dim(self):
        return self.params.latent_dim

    @property
    def out_dim(self):
        return self.params.num_qubits

    def n_trainable(self):
        return self.params.n_trainable()

    def trainable(self):
        return self.params.as_dict()

    def updated(self, arrays):
        return HybridGenerator(self.params.with_arrays(arrays), self.embed, self.n_layers)

    def forward(self, z):
        z = np.atleast_2d(z)
        theta = nn.generator_frontend(self.params, z)
        return qs.generator_forward(self.out_dim, self.n_layers, nn.latent_embed(self.embed, z), theta)

    def backward(self, z, grad_out):
        z = np.atleast_2d(z)
        theta = nn.generator_frontend(self.params, z)
        _, dtheta = qs.generator_vjp(self.out_dim, self.n_layers, nn.latent_embed(self.embed, z),
                                     theta, grad_out)
        return nn.frontend_backward(self.params, z, dtheta)

    def to_json(self):
        return {"kind": self.kind, "n_layers": self.n_layers,
                "params": nn.params_to_json(self.params), "embed": nn.params_to_json(self.embed)}


class MLPGenerator:
    """Classical generator: dense net with a tanh head."""

    kind = "mlp"

    def __init__(self, params: nn.MLPParams):
        if params.output != "tanh":
            raise InvalidArgumentError("classical generator needs a tanh output")
        self.params = params

    @property
    def latent_dim(self):
        return self.params.sizes[0]

    @property
    def out_dim(self):
        return self.params.sizes[-1]

    def n_trainable(self):
        return self.params.n_trainable()

    def trainable(self):
        return self.params.as_dict()

    def updated(self, arrays):
        return MLPGenerator(self.params.with_arrays(arrays))

    def forward(self, z):
        return nn.mlp_forward(self.params, z)[0]

    def backward(self, z, grad_out):
        _, cache = nn.mlp_forward(self.params, z)
        return nn.mlp_backward(self.params, cache, grad_out)[0]

    def to_json(self):
        return {"kind": self.kind, "params": nn.params_to_json(self.params)}


def generator_from_json(doc):
    if doc["kind"] == "hybrid":
        return HybridGenerator(nn.params_from_json(doc["params"]), nn.params_from_json(doc["embed"]),
                               doc["n_layers"])
    if doc["kind"] == "mlp":
        return MLPGenerator(nn.params_from_json(doc["params"]))
    raise InvalidArgumentError(f"unknown generator kind {doc['kind']!r}")


def sample_latent(rng, n, m):
    return rng.uniform(-1.0, 1.0, (n, m))


def generate_samples(generator, n: int, seed: int = 0, chunk: int = 4096) -> np.ndarray:
    """``n`` i.i.d. draws from the uniform latent prior pushed through ``generator``."""
    rng = np.random.default_rng(seed)
    z = sample_latent(rng, n, generator.latent_dim)
    if n == 0:
        return np.zeros((0, generator.out_dim))
    return np.vstack([generator.forward(z[i:i + chunk]) for i in range(0, n, chunk)])


# ---------------------------------------------------------------------------
# losses and gradients with all randomness supplied by the caller


def discriminator_loss_and_grad(disc, real, fake, sigma, eps_real, eps_fake, scale_real, scale_fake):
    noisy_r = np.clip(real + sigma * eps_real, -1.0, 1.0)
    noisy_f = np.clip(fake + sigma * eps_fake, -1.0, 1.0)
    c_r = nn.disc_forward(disc, noisy_r, scale_real)
    c_f = nn.disc_forward(disc, noisy_f, scale_fake)
    loss = float(np.mean(bce(c_r.prob, 1.0)) + np.mean(bce(c_f.prob, 0.0)))
    g_r, _ = nn.disc_backward(disc, c_r, _bce_dlogit(c_r.prob, 1.0) / len(real))
    g_f, _ = nn.disc_backward(disc, c_f, _bce_dlogit(c_f.prob, 0.0) / len(fake))
    return loss, {k: g_r[k] + g_f[k] for k in g_r}


def generator_loss_and_grad(generator, disc, real, z, config: TrainConfig, gamma, sigma,
                            eps_fake, scale_fake, fake=None):
    """Generator loss components and parameter gradients for fixed noise and dropout draws.

    Returns ``((adv, fm, mm), grads)``.
    """
    if fake is None:
        fake = generator.forward(z)
    b = fake.shape[0]

    # adversarial term on noisy fakes with a smoothed target
    shifted = fake + sigma * eps_fake
    inside = (shifted > -1.0) & (shifted < 1.0)
    c_adv = nn.disc_forward(disc, np.clip(shifted, -1.0, 1.0), scale_fake)
    adv = float(np.mean(bce(c_adv.prob, gamma)))
    _, dx_adv = nn.disc_backward(disc, c_adv, _bce_dlogit(c_adv.prob, gamma) / b)
    dfake = dx_adv * inside

    # feature matching on clean samples, dropout off
    f_real = nn.disc_forward(disc, real).h
    c_fake = nn.disc_forward(disc, fake)
    gap = f_real.mean(axis=0) - c_fake.h.mean(axis=0)
    fm = config.fm_weight * float(np.sum(np.abs(gap)))
    dfeat = np.tile(-config.fm_weight * np.sign(gap) / b, (b, 1))
    _, dx_fm = nn.disc_backward(disc, c_fake, np.zeros(b), dfeat)
    dfake = dfake + dx_fm

    # moment matching
    mu_r, mu_f = real.mean(axis=0), fake.mean(axis=0)
    s_r = np.sqrt(real.var(axis=0) + config.std_floor)
    s_f = np.sqrt(fake.var(axis=0) + config.std_floor)
    mm = config.mm_mean_weight * float(np.sum(np.abs(mu_r - mu_f))) + \
        config.mm_std_weight * float(np.sum(np.abs(s_r - s_f)))
    dfake = dfake - config.mm_mean_weight * np.sign(mu_r - mu_f) / b
    dfake = dfake - config.mm_std_weight * np.sign(s_r - s_f) * (fake - mu_f) / (b * s_f)

    return (adv, fm, mm), generator.backward(z, dfake)


# ---------------------------------------------------------------------------
# steps


def discriminator_step(disc, adam, real, fake, schedule: ScheduleState, sigma, rng):
    """One Adam step on the discriminator; returns ``(loss, new_params)``."""
    k2 = disc.W2.shape[0]
    eps_r = rng.standard_normal(real.shape)
    eps_f = rng.standard_normal(fake.shape)
    scale_r = nn.dropout_mask(rng, (len(real), k2), schedule.p)
    scale_f = nn.dropout_mask(rng, (len(fake), k2), schedule.p)
    loss, grads = discriminator_loss_and_grad(disc, real, fake, sigma, eps_r, eps_f, scale_r, scale_f)
    if not math.isfinite(loss):
        raise TrainingError("non-finite discriminator loss")
    return loss, disc.with_arrays(nn.adam_step(adam, disc.as_dict(), grads))


def generator_step(generator, disc, adam, real, z, config, schedule, sigma, rng, fake=None):
    """One clipped Adam step on the generator; returns ``(components, new_generator, grad_norm)``."""
    eps = rng.standard_normal((len(z), generator.out_dim))
    scale = nn.dropout_mask(rng, (len(z), disc.W2.shape[0]), schedule.p)
    parts, grads = generator_loss_and_grad(generator, disc, real, z, config, schedule.gamma, sigma,
                                           eps, scale, fake)
    if not all(math.isfinite(v) for v in parts):
        raise TrainingError("non-finite generator loss")
    grads, norm = clip_grad_norm(grads, config.clip_norm)
    return parts, generator.updated(nn.adam_step(adam, generator.trainable(), grads)), norm


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    generator: object
    discriminator: nn.DiscriminatorParams
    schedule: ScheduleState
    history: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    final_sigma: float = 0.0
    adam_g: nn.AdamState | None = None
    adam_d: nn.AdamState | None = None
    rng_state: dict | None = None
    config: TrainConfig | None = None
    seed: int = 0


def _checkpoint(generator, disc, data, schedule, sigma, config, eval_rng, epoch):
    n = config.n_eval
    real = perturb(data[eval_rng.integers(0, len(data), n)], sigma, eval_rng)
    z = sample_latent(eval_rng, n, generator.latent_dim)
    fake = perturb(generator.forward(z), sigma, eval_rng)
    p_real = nn.disc_forward(disc, real).prob
    p_fake = nn.disc_forward(disc, fake).prob
    accuracy = float((np.sum(p_real >= 0.5) + np.sum(p_fake < 0.5)) / (2 * n))
    ks = [ks_two_sample(real[:, j], fake[:, j])[0] for j in range(data.shape[1])]
    return {"epoch": epoch, "sigma": sigma, "gamma": schedule.gamma, "dropout": schedule.p,
            "disc_accuracy": accuracy, "ks_median": float(np.median(ks))}


def fit_adversarial(generator, data, config: TrainConfig, rng, disc=None, log=None) -> TrainResult:
    """Alternating D/G training of any generator exposing forward/backward/trainable/updated."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != generator.out_dim:
        raise InvalidArgumentError(f"data must be an (N, {generator.out_dim}) matrix")
    if len(data) < config.batch_size:
        raise InvalidArgumentError(f"need at least batch_size={config.batch_size} rows, got {len(data)}")
    if not np.all(np.isfinite(data)) or np.max(np.abs(data)) > 1.0:
        raise InvalidArgumentError("training data must be finite and inside [-1, 1]")
    schedule = ScheduleState.initial(config)
    if disc is None:
        disc = nn.DiscriminatorParams.init(data.shape[1], rng, config.disc_hidden,
                                           config.leaky_slope, schedule.p)
        if config.disc_zero_head:
            # start at D = 1/2 everywhere; hidden layers keep their random features
            disc = disc.with_arrays({"w": np.zeros_like(disc.w), "b": np.zeros_like(disc.b)})
    adam_g = nn.AdamState(config.lr_g, config.beta1, config.beta2, config.adam_eps)
    adam_d = nn.AdamState(config.lr_d, config.beta1, config.beta2, config.adam_eps)
    eval_rng = np.random.default_rng([config.seed, 0xE7A1])
    history, checkpoints = [], []
    sigma = instance_noise(schedule, 0, config)
    n_batches = math.ceil(len(data) / config.batch_size)
    for epoch in range(config.epochs):
        sigma = instance_noise(schedule, epoch, config)
        disc = replace(disc, dropout_rate=schedule.p)
        order = rng.permutation(len(data))
        sums = np.zeros(4)
        for bi in range(n_batches):
            real = data[order[bi * config.batch_size:(bi + 1) * config.batch_size]]
            z = sample_latent(rng, len(real), generator.latent_dim)
            fake = generator.forward(z)
            try:
                loss_d, disc = discriminator_step(disc, adam_d, real, fake, schedule, sigma, rng)
                parts, generator, _ = generator_step(generator, disc, adam_g, real, z, config,
                                                     schedule, sigma, rng, fake)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, batch {bi}: {exc}") from exc
            sums += (loss_d, *parts)
        mean = sums / n_batches
        history.append(LossRecord(epoch, float(mean[0]), float(mean[1] + mean[2] + mean[3]),
                                  float(mean[1]), float(mean[2]), float(mean[3])))
        if (epoch + 1) % config.eval_every == 0:
            ck = _checkpoint(generator, disc, data, schedule, sigma, config, eval_rng, epoch)
            schedule = adapt_regularization(schedule, ck["disc_accuracy"])
            checkpoints.append(ck)
        if log is not None:
            log(history[-1])
    return TrainResult(generator, replace(disc, dropout_rate=schedule.p), schedule, history,
                       checkpoints, sigma, adam_g, adam_d, rng.bit_generator.state, config, config.seed)


def train(data, config: TrainConfig = TrainConfig(), seed: int | None = None, log=None) -> TrainResult:
    """Train the hybrid quantum generator on bounded rows ``data`` (N x d)."""
    if seed is not None:
        config = replace(config, seed=seed)
    data = np.asarray(data, dtype=float)
    rng = np.random.default_rng(config.seed)
    generator = HybridGenerator.init(data.shape[1], config, rng)
    return fit_adversarial(generator, data, config, rng, log=log)


# ---------------------------------------------------------------------------
# persistence


def _config_to_dict(config: TrainConfig):
    doc = asdict(config)
    doc["disc_hidden"] = list(config.disc_hidden)
    return doc


def config_from_dict(doc) -> TrainConfig:
    return TrainConfig(**doc)


def checkpoint_to_dict(result: TrainResult) -> dict:
    return {
        "schema": CHECKPOINT_SCHEMA,
        "version": CHECKPOINT_VERSION,
        "seed": result.seed,
        "config": _config_to_dict(result.config),
        "generator": result.generator.to_json(),
        "discriminator": nn.params_to_json(result.discriminator),
        "schedule": result.schedule.to_dict(),
        "final_sigma": result.final_sigma,
        "adam_g": result.adam_g.to_dict() if result.adam_g else None,
        "adam_d": result.adam_d.to_dict() if result.adam_d else None,
        "rng_state": result.rng_state,
        "checkpoints": result.checkpoints,
        "history": [asdict(r) for r in result.history],
    }


def checkpoint_from_dict(doc: dict) -> TrainResult:
    if doc.get("schema") != CHECKPOINT_SCHEMA or doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidArgumentError(f"not a {CHECKPOINT_SCHEMA} v{CHECKPOINT_VERSION} document")
    return TrainResult(
        generator=generator_from_json(doc["generator"]),
        discriminator=nn.params_from_json(doc["discriminator"]),
        schedule=ScheduleState.from_dict(doc["schedule"]),
        history=[LossRecord(**r) for r in doc["history"]],
        checkpoints=doc["checkpoints"],
        final_sigma=doc["final_sigma"],
        adam_g=nn.AdamState.from_dict(doc["adam_g"]) if doc["adam_g"] else None,
        adam_d=nn.AdamState.from_dict(doc["adam_d"]) if doc["adam_d"] else None,
        rng_state=doc["rng_state"],
        config=config_from_dict(doc["config"]),
        seed=doc["seed"],
    )


def save_checkpoint(result: TrainResult, path):
    Path(path).write_text(json.dumps(checkpoint_to_dict(result), sort_keys=True))


def load_checkpoint(path) -> TrainResult:
    return checkpoint_from_dict(json.loads(Path(path).read_text()))


HISTORY_COLUMNS = ["epoch", "loss_d", "loss_g", "loss_g_adv", "loss_g_fm", "loss_g_mm"]


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            writer.writerow([getattr(rec, c) for c in HISTORY_COLUMNS])
