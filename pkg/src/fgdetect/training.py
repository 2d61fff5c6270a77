"""End-to-end optimization of the clustering weights (and NBP weights)."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .channel import (
    ChannelSpec,
    make_rng,
    noise_variance_from_esn0,
    sample_symbol_batch,
    transmit_batch,
)
from .model import ClusterModel, save_model, load_model
from .program import CCProgram

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def soft_ber(marginals: np.ndarray, symbols: np.ndarray) -> float:
    """Sum of per-symbol error probabilities given marginals P(x=+1).

    The term is 1-m for a transmitted +1 and m for a transmitted -1, i.e.
    m^((1-x)/2) * (1-m)^((1+x)/2) on the BPSK alphabet.
    """
    m = np.asarray(marginals, dtype=float)
    x = np.asarray(symbols)
    if m.shape != x.shape:
        raise ValueError("marginals and symbols must have equal shape")
    if (m < 0).any() or (m > 1).any():
        raise ValueError("marginals must lie in [0, 1]")
    return float(np.where(x == 1, 1.0 - m, m).sum())


@dataclass
class TrainConfig:
    k: int = 64
    minibatch_size: int = 100  # sequences per step
    steps: int = 2000
    learning_rate: float = 1e-4
    # structure weights may use a faster schedule than the NBP weights
    beta_learning_rate: float | None = None
    # inverse softmax temperature ramps geometrically from 1 to this value,
    # annealing the continuous clustering toward a discrete one
    softmax_scale_end: float = 1.0
    train_esn0_db: float = 10.0
    n_train_iterations: int = 10
    nbp: bool = False
    # share parameters across cyclic shifts (one beta per FN type and
    # relative container pattern); the saved model is expanded to full size
    tied: bool = False
    seed: int = 0
    loss: str = "soft_ber"

    def __post_init__(self):
        if self.minibatch_size < 1 or self.steps < 1:
            raise ValueError("minibatch size and step count must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")
        if self.beta_learning_rate is not None and self.beta_learning_rate <= 0:
            raise ValueError("beta learning rate must be > 0")
        if self.softmax_scale_end < 1.0:
            raise ValueError("softmax scale end must be >= 1")
        if self.loss not in ("soft_ber", "soft_ber_multi", "cross_entropy"):
            raise ValueError(
                "loss must be 'soft_ber', 'soft_ber_multi' or 'cross_entropy'"
            )


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape))


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    step: int,
    learning_rate: float,
) -> np.ndarray:
    """One bias-corrected Adam update; ``step`` counts from 1."""
    if step < 1:
        raise ValueError("step counts from 1")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"non-finite gradient at optimizer step {step}")
    state.m = ADAM_BETA1 * state.m + (1 - ADAM_BETA1) * grad
    state.v = ADAM_BETA2 * state.v + (1 - ADAM_BETA2) * grad**2
    m_hat = state.m / (1 - ADAM_BETA1**step)
    v_hat = state.v / (1 - ADAM_BETA2**step)
    return param - learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


@dataclass
class TrainState:
    model: ClusterModel
    beta_adam: AdamState
    nbp_adam: AdamState | None
    step: int
    loss_history: list[float] = field(default_factory=list)


def train(
    spec: ChannelSpec,
    d_max: int,
    config: TrainConfig,
    span_limit: int | None = None,
    progress=None,
) -> TrainState:
    """Optimize beta (and NBP weights if enabled) with minibatch Adam.

    Fully reproducible from config.seed: symbol, noise and init draws come
    from separate streams of one counter-based RNG family.
    """
    program = CCProgram(spec, config.k, d_max, span_limit)
    sigma2 = noise_variance_from_esn0(config.train_esn0_db)

    weights = program.init_weights(make_rng(config.seed, stream=0))
    beta, active = program.pad_beta(weights)
    rng_sym = make_rng(config.seed, stream=1)
    rng_noise = make_rng(config.seed, stream=2)

    ties = program.tie_maps(config.n_train_iterations) if config.tied else None
    if config.tied:
        beta = make_rng(config.seed, stream=0).standard_normal(ties.n_beta)
        nbp = np.ones(ties.n_nbp) if config.nbp else None
    else:
        nbp = (
            np.ones((config.n_train_iterations, program.n_edges))
            if config.nbp
            else None
        )
    beta_adam = AdamState.zeros(beta.shape)
    nbp_adam = AdamState.zeros(nbp.shape) if config.nbp else None

    def expand_beta(b):
        full = b[ties.beta_map].reshape(program.n_fns, program.max_options)
        return np.where(active, full, 0.0)

    loss_history = []
    for step in range(1, config.steps + 1):
        x = sample_symbol_batch(config.minibatch_size, config.k, rng_sym)
        y = transmit_batch(x, spec, sigma2, rng_noise)
        e_const = program.component_tables(y, sigma2)
        if config.softmax_scale_end > 1.0:
            scale = config.softmax_scale_end ** ((step - 1) / max(config.steps - 1, 1))
        else:
            scale = 1.0
        computation = program.make_loss_computation(
            e_const, x, active, config.n_train_iterations, config.nbp,
            config.loss, softmax_scale=scale,
        )
        if config.tied:
            inner = computation

            def computation(params, inner=inner):
                full = [
                    ad.reshape(
                        ad.take_last(params[0], ties.beta_map),
                        (program.n_fns, program.max_options),
                    )
                ]
                if config.nbp:
                    full.append(
                        ad.reshape(
                            ad.take_last(params[1], ties.nbp_map),
                            (config.n_train_iterations, program.n_edges),
                        )
                    )
                return inner(full)

        params = [ad.parameter(beta)]
        if config.nbp:
            params.append(ad.parameter(nbp))
        loss, grads = ad.record_and_backprop(computation, params)
        loss_history.append(loss)
        beta_lr = config.beta_learning_rate or config.learning_rate
        beta = adam_step(beta, grads[0], beta_adam, step, beta_lr)
        if not config.tied:
            beta[~active] = 0.0  # padded/masked slots carry no information
        if config.nbp:
            nbp = adam_step(nbp, grads[1], nbp_adam, step, config.learning_rate)
        if progress is not None:
            progress(step, loss)

    if config.tied:
        beta = expand_beta(beta)
        if config.nbp:
            nbp = nbp[ties.nbp_map].reshape(
                config.n_train_iterations, program.n_edges
            )
    # bake the final softmax scale into the stored weights so that the saved
    # model reproduces the annealed clustering without extra state
    model = ClusterModel(
        spec,
        config.k,
        d_max,
        program.span_limit,
        program.cs,
        program.options,
        program.unpad_beta(beta * config.softmax_scale_end, active),
        nbp,
    )
    return TrainState(model, beta_adam, nbp_adam, config.steps, loss_history)


def validation_soft_ber(
    model: ClusterModel,
    n_iterations: int,
    n_blocks: int,
    esn0_db: float,
    seed: int,
) -> float:
    """Average soft BER per block on a freshly drawn validation batch."""
    from .program import CCRuntime

    sigma2 = noise_variance_from_esn0(esn0_db)
    x = sample_symbol_batch(n_blocks, model.k, make_rng(seed, stream=11))
    y = transmit_batch(x, model.spec, sigma2, make_rng(seed, stream=12))
    m = CCRuntime(model).marginals(y, sigma2, n_iterations)
    return soft_ber(m, x) / n_blocks


# -- persistence ---------------------------------------------------------------


def write_loss_history(loss_history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "soft_ber"])
        for i, v in enumerate(loss_history, start=1):
            w.writerow([i, repr(float(v))])


def save_checkpoint(state: TrainState, path) -> None:
    doc = {
        "step": state.step,
        "beta_adam_m": state.beta_adam.m.tolist(),
        "beta_adam_v": state.beta_adam.v.tolist(),
        "nbp_adam_m": None if state.nbp_adam is None else state.nbp_adam.m.tolist(),
        "nbp_adam_v": None if state.nbp_adam is None else state.nbp_adam.v.tolist(),
        "loss_history": [float(v) for v in state.loss_history],
    }
    model_path = Path(path).with_suffix(".model.json")
    save_model(state.model, model_path)
    doc["model_file"] = model_path.name
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> TrainState:
    doc = json.loads(Path(path).read_text())
    model = load_model(Path(path).parent / doc["model_file"])
    nbp_adam = None
    if doc["nbp_adam_m"] is not None:
        nbp_adam = AdamState(
            np.array(doc["nbp_adam_m"]), np.array(doc["nbp_adam_v"])
        )
    return TrainState(
        model,
        AdamState(np.array(doc["beta_adam_m"]), np.array(doc["beta_adam_v"])),
        nbp_adam,
        int(doc["step"]),
        list(doc["loss_history"]),
    )
