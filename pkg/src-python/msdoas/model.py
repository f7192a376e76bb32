# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

"""The multi-shot degree of appearance similarity (MS-DoAS) network.

An LSTM cell consumes the T history features of an agent, most recent first, and summarizes them in its
final hidden state ``F(a)``. The detection feature ``F(d)`` and ``F(a)`` are concatenated and fed to a
fully connected layer producing the logits ``(Z_0, Z_1)``; their softmax ``(NZ_0, NZ_1)`` gives the
probabilities of mismatch and match. ``NZ_1`` is the MS-DoAS.

With ``inputs='difference'`` the LSTM reads the squared element-wise differences ``(F(d) - x_t) ** 2``
instead of the history features themselves. ``F(a)`` then summarizes how far the detection lies from each
remembered appearance, which does not depend on who the identities are, so a model trained on one set of
people scores people it never saw. The parameter shapes are the same in both modes.

All arrays are float64. Gates are stacked in the order input, forget, output, candidate.
"""

from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.special import expit, softmax

from msdoas.core import DEFAULT_DIMENSION
from msdoas.exceptions import (ConfigValidationError, DimensionMismatchError, EmptyBatchError,
                               EmptyHistoryError, ModelFormatError, NumericalError)
from msdoas.serialization import decode_tensor, dump_ion, encode_tensor, load_ion, to_plain

MODEL_FORMAT = 'msdoas-model'
MODEL_FORMAT_VERSION = 1
PROBABILITY_CLAMP = 1e-12

TENSOR_NAMES = ('lstm_input_weights', 'lstm_hidden_weights', 'lstm_bias', 'fc_weights', 'fc_bias')

INPUTS_HISTORY = 'history'
INPUTS_DIFFERENCE = 'difference'
INPUT_MODES = (INPUTS_HISTORY, INPUTS_DIFFERENCE)


class ModelConfig(NamedTuple):
    """Dimensions of an MS-DoAS network.

    Args:
        n (int): The feature dimension.
        H (int): The LSTM hidden size.
        T (int): The memory length.
        K (int): The number of output classes, always 2.
        inputs (str): What the LSTM reads at each step. ``history`` feeds the history feature ``x_t``;
            ``difference`` feeds ``(F(d) - x_t) ** 2``.
    """
    n: int = DEFAULT_DIMENSION
    H: int = 128
    T: int = 5
    K: int = 2
    inputs: str = INPUTS_HISTORY

    def validate(self):
        checks = ((self.n >= 1, 'n >= 1'), (self.H >= 1, 'H >= 1'), (self.T >= 1, 'T >= 1'), (self.K == 2, 'K == 2'),
                  (self.inputs in INPUT_MODES, f'inputs in {INPUT_MODES}'))
        for ok, constraint in checks:
            if not ok:
                raise ConfigValidationError(f'model parameter must satisfy {constraint}')
        return self

    def tensor_shapes(self):
        n, H = self.n, self.H
        return (4 * H, n), (4 * H, H), (4 * H,), (self.K, n + H), (self.K,)


class LstmParams(NamedTuple):
    """LSTM weights, gates stacked as [input, forget, output, candidate]."""
    input_weights: np.ndarray   # (4H, n)
    hidden_weights: np.ndarray  # (4H, H)
    bias: np.ndarray            # (4H,)

    @property
    def hidden_size(self):
        return self.hidden_weights.shape[1]


class FcParams(NamedTuple):
    """Weights of the fully connected head over ``concat(F(d), F(a))``."""
    weights: np.ndarray  # (2, n + H)
    bias: np.ndarray     # (2,)


class MsdoasModel(NamedTuple):
    config: ModelConfig
    lstm: LstmParams
    fc: FcParams

    def parameters(self) -> Tuple[np.ndarray, ...]:
        """The five parameter tensors in declared order."""
        return (*self.lstm, *self.fc)

    def with_parameters(self, tensors: Sequence[np.ndarray]) -> 'MsdoasModel':
        return MsdoasModel(self.config, LstmParams(*tensors[:3]), FcParams(*tensors[3:]))

    def score(self, detection, history) -> float:
        return msdoas(self, detection, history)

    def score_tracklets(self, tracklets) -> np.ndarray:
        return score_tracklets(self, tracklets)

    def score_pairs(self, detections, histories) -> np.ndarray:
        return score_pairs(self, detections, histories)


class ModelGradients(NamedTuple):
    """Gradients shaped like the model parameters."""
    lstm: LstmParams
    fc: FcParams

    def tensors(self) -> Tuple[np.ndarray, ...]:
        return (*self.lstm, *self.fc)


class LstmCache(NamedTuple):
    inputs: np.ndarray        # (L, B, n)
    hidden: np.ndarray        # (L + 1, B, H), hidden[0] is the zero initial state
    cells: np.ndarray         # (L + 1, B, H)
    gates: np.ndarray         # (L, B, 4H), post-activation
    cell_activations: np.ndarray  # (L, B, H), tanh of cells[1:]


class ForwardCache(NamedTuple):
    lstm: LstmCache
    joint: np.ndarray  # (B, n + H)


class ForwardResult(NamedTuple):
    z0: np.ndarray
    z1: np.ndarray
    nz0: np.ndarray
    nz1: np.ndarray
    cache: ForwardCache


class TrackletBatch(NamedTuple):
    """Dense arrays of a tracklet batch: ``x_0`` as detections and ``x_1 .. x_T`` as histories."""
    detections: np.ndarray  # (B, n)
    histories: np.ndarray   # (B, T, n), most recent first
    labels: np.ndarray      # (B,)

    @classmethod
    def from_tracklets(cls, tracklets: Sequence) -> 'TrackletBatch':
        if not len(tracklets):
            raise EmptyBatchError('A batch needs at least one tracklet')
        detections = np.stack([t.detection for t in tracklets])
        histories = np.stack([np.stack(t.history) for t in tracklets])
        labels = np.array([t.label for t in tracklets], dtype=np.int64)
        return cls(detections, histories, labels)

    def subset(self, indices) -> 'TrackletBatch':
        return TrackletBatch(self.detections[indices], self.histories[indices], self.labels[indices])

    @property
    def size(self):
        return self.labels.shape[0]


def _as_batch(batch) -> TrackletBatch:
    if isinstance(batch, TrackletBatch):
        if not batch.size:
            raise EmptyBatchError('A batch needs at least one tracklet')
        return batch
    return TrackletBatch.from_tracklets(batch)


def init_model(config: ModelConfig, seed: int = 0, init_scale: Optional[float] = None) -> MsdoasModel:
    """A freshly initialized model.

    Weights are uniform in ``[-s, s]`` with ``s = 1 / sqrt(n + H)`` unless ``init_scale`` is given; biases
    are zero except the forget gate bias, which is one.
    """
    config = config.validate()
    n, H = config.n, config.H
    scale = init_scale if init_scale is not None else 1.0 / np.sqrt(n + H)
    rng = np.random.default_rng(seed)
    bias = np.zeros(4 * H)
    bias[H:2 * H] = 1.0
    lstm = LstmParams(rng.uniform(-scale, scale, (4 * H, n)), rng.uniform(-scale, scale, (4 * H, H)), bias)
    fc = FcParams(rng.uniform(-scale, scale, (config.K, n + H)), np.zeros(config.K))
    return MsdoasModel(config, lstm, fc)


def _lstm_forward_batch(params: LstmParams, histories: np.ndarray):
    """Runs the recurrence over ``histories`` of shape (B, L, n)."""
    batch, length, n = histories.shape
    if params.input_weights.shape[1] != n:
        raise DimensionMismatchError(f'LSTM expects features of dimension {params.input_weights.shape[1]}, got {n}')
    H = params.hidden_size
    inputs = np.swapaxes(histories, 0, 1)
    hidden = np.zeros((length + 1, batch, H))
    cells = np.zeros((length + 1, batch, H))
    gates = np.empty((length, batch, 4 * H))
    cell_activations = np.empty((length, batch, H))
    for t in range(length):
        a = inputs[t] @ params.input_weights.T + hidden[t] @ params.hidden_weights.T + params.bias
        gates[t, :, :3 * H] = expit(a[:, :3 * H])
        gates[t, :, 3 * H:] = np.tanh(a[:, 3 * H:])
        i, f, o, g = np.split(gates[t], 4, axis=1)
        cells[t + 1] = f * cells[t] + i * g
        cell_activations[t] = np.tanh(cells[t + 1])
        hidden[t + 1] = o * cell_activations[t]
    return hidden[-1], LstmCache(inputs, hidden, cells, gates, cell_activations)


def _lstm_backward_batch(params: LstmParams, cache: LstmCache, d_hidden: np.ndarray) -> LstmParams:
    """Backpropagation through time from the gradient of the final hidden state."""
    d_input_weights = np.zeros_like(params.input_weights)
    d_hidden_weights = np.zeros_like(params.hidden_weights)
    d_bias = np.zeros_like(params.bias)
    d_cell = np.zeros_like(d_hidden)
    for t in reversed(range(cache.inputs.shape[0])):
        i, f, o, g = np.split(cache.gates[t], 4, axis=1)
        tanh_c = cache.cell_activations[t]
        d_o = d_hidden * tanh_c
        d_cell = d_cell + d_hidden * o * (1.0 - tanh_c ** 2)
        d_i = d_cell * g
        d_g = d_cell * i
        d_f = d_cell * cache.cells[t]
        d_cell = d_cell * f
        d_a = np.concatenate((d_i * i * (1.0 - i), d_f * f * (1.0 - f), d_o * o * (1.0 - o), d_g * (1.0 - g ** 2)),
                             axis=1)
        d_input_weights += d_a.T @ cache.inputs[t]
        d_hidden_weights += d_a.T @ cache.hidden[t]
        d_bias += d_a.sum(axis=0)
        d_hidden = d_a @ params.hidden_weights
    return LstmParams(d_input_weights, d_hidden_weights, d_bias)


def _history_array(history) -> Tuple[np.ndarray, bool]:
    """Returns (B, L, n) histories and whether the input was a single history."""
    if isinstance(history, np.ndarray) and history.ndim == 3:
        array, single = history, False
    else:
        if not len(history):
            raise EmptyHistoryError('An agent needs at least one history feature')
        array, single = np.asarray(history, dtype=np.float64)[np.newaxis], True
        if array.ndim != 3:
            raise DimensionMismatchError(f'History features must be one dimensional, got shape {array.shape[1:]}')
    if array.shape[1] == 0:
        raise EmptyHistoryError('An agent needs at least one history feature')
    return array.astype(np.float64, copy=False), single


def lstm_forward(params: LstmParams, history):
    """Summarizes a history, most recent feature first, as the final LSTM hidden state.

    Args:
        params (LstmParams): The cell weights.
        history (Sequence[numpy.ndarray] | numpy.ndarray): One history as a list of features or an (L, n)
            array, or a batch as a (B, L, n) array.

    Returns:
        Tuple[numpy.ndarray, LstmCache]: ``F(a)`` of shape (H,), or (B, H) for a batch, and the cache for
        backpropagation.

    Raises:
        EmptyHistoryError: If the history is empty.
        DimensionMismatchError: If the feature dimension differs from the weights'.
    """
    histories, single = _history_array(history)
    agent, cache = _lstm_forward_batch(params, histories)
    return (agent[0] if single else agent), cache


def _lstm_inputs(model: MsdoasModel, detections: np.ndarray, histories: np.ndarray) -> np.ndarray:
    if model.config.inputs == INPUTS_DIFFERENCE:
        return (histories - detections[:, np.newaxis, :]) ** 2
    return histories


def _forward_batch(model: MsdoasModel, detections: np.ndarray, histories: np.ndarray) -> ForwardResult:
    n = model.config.n
    if detections.shape[-1] != n:
        raise DimensionMismatchError(f'Model expects detections of dimension {n}, got {detections.shape[-1]}')
    if histories.shape[1] > model.config.T:
        raise DimensionMismatchError(f'History length {histories.shape[1]} exceeds the memory T={model.config.T}')
    if histories.shape[-1] != n:
        raise DimensionMismatchError(f'Model expects history features of dimension {n}, got {histories.shape[-1]}')
    agents, lstm_cache = _lstm_forward_batch(model.lstm, _lstm_inputs(model, detections, histories))
    joint = np.concatenate((detections, agents), axis=1)
    z = joint @ model.fc.weights.T + model.fc.bias
    nz = softmax(z, axis=1)
    return ForwardResult(z[:, 0], z[:, 1], nz[:, 0], nz[:, 1], ForwardCache(lstm_cache, joint))


def forward(model: MsdoasModel, detection, history) -> ForwardResult:
    """Computes the logits ``(Z_0, Z_1)`` and their softmax ``(NZ_0, NZ_1)``.

    A single detection (n,) with a single history yields scalar fields; a (B, n) detection array with a
    (B, L, n) history array yields (B,) fields. Histories shorter than T are accepted.
    """
    histories, single = _history_array(history)
    detections = np.atleast_2d(np.asarray(detection, dtype=np.float64))
    if detections.shape[0] != histories.shape[0]:
        raise DimensionMismatchError(f'{detections.shape[0]} detections for {histories.shape[0]} histories')
    result = _forward_batch(model, detections, histories)
    if single:
        return result._replace(z0=float(result.z0[0]), z1=float(result.z1[0]),
                               nz0=float(result.nz0[0]), nz1=float(result.nz1[0]))
    return result


def msdoas(model: MsdoasModel, detection, history) -> float:
    """The probability that ``detection`` continues the agent described by ``history``."""
    return forward(model, detection, history).nz1


def score_tracklets(model: MsdoasModel, tracklets, chunk_size: int = 1024) -> np.ndarray:
    """``NZ_1`` of every tracklet, using ``x_0`` as the detection and the rest as the history."""
    batch = _as_batch(tracklets)
    scores = [_forward_batch(model, batch.detections[start:start + chunk_size],
                             batch.histories[start:start + chunk_size]).nz1
              for start in range(0, batch.size, chunk_size)]
    return np.concatenate(scores)


def _by_length(model: MsdoasModel, histories: Sequence[Sequence[np.ndarray]]):
    """Yields (rows, stacked histories) for each group of equally long histories."""
    groups = {}
    for i, history in enumerate(histories):
        if not len(history):
            raise EmptyHistoryError(f'History {i} is empty')
        groups.setdefault(len(history), []).append(i)
    for length, rows in sorted(groups.items()):
        if length > model.config.T:
            raise DimensionMismatchError(f'History length {length} exceeds the memory T={model.config.T}')
        yield rows, np.stack([np.stack(histories[i]) for i in rows]).astype(np.float64, copy=False)


def agent_features(model: MsdoasModel, histories: Sequence[Sequence[np.ndarray]]) -> np.ndarray:
    """``F(a)`` for each history; histories may have different lengths up to T.

    Only defined for models reading the history itself, since a difference model's summary depends on the
    detection.
    """
    if model.config.inputs != INPUTS_HISTORY:
        raise ConfigValidationError(f'agent features need inputs={INPUTS_HISTORY!r}, got {model.config.inputs!r}')
    agents = np.empty((len(histories), model.config.H))
    for rows, stacked in _by_length(model, histories):
        agents[rows], _ = _lstm_forward_batch(model.lstm, stacked)
    return agents


def _score_every_pair(model: MsdoasModel, detections: np.ndarray, histories) -> np.ndarray:
    count = detections.shape[0]
    scores = np.empty((len(histories), count))
    for rows, stacked in _by_length(model, histories):
        paired = np.repeat(stacked, count, axis=0)
        tiled = np.tile(detections, (len(rows), 1))
        scores[rows] = _forward_batch(model, tiled, paired).nz1.reshape(len(rows), count)
    return scores


def score_pairs(model: MsdoasModel, detections: np.ndarray, histories: Sequence[Sequence[np.ndarray]]) -> np.ndarray:
    """The (len(histories), len(detections)) matrix of MS-DoAS scores.

    When the LSTM reads the history itself the agent summary does not depend on the detection, so each
    history runs through the LSTM once. Difference models run once per pair.
    """
    detections = np.asarray(detections, dtype=np.float64).reshape(-1, model.config.n)
    if not len(histories) or not detections.shape[0]:
        return np.zeros((len(histories), detections.shape[0]))
    if model.config.inputs == INPUTS_DIFFERENCE:
        return _score_every_pair(model, detections, histories)
    agents = agent_features(model, histories)
    n = model.config.n
    detection_logits = detections @ model.fc.weights[:, :n].T
    agent_logits = agents @ model.fc.weights[:, n:].T
    z = agent_logits[:, np.newaxis, :] + detection_logits[np.newaxis, :, :] + model.fc.bias
    return softmax(z, axis=2)[:, :, 1]


def cross_entropy(nz0, y):
    """Cross entropy over the mismatch class, whose indicator is ``1 - y``.

    ``nz0`` is clamped to ``[1e-12, 1 - 1e-12]`` before the logarithm. Works element-wise on arrays.
    """
    p = np.clip(nz0, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    y0 = 1 - np.asarray(y)
    loss = -y0 * np.log(p) - (1 - y0) * np.log1p(-p)
    return float(loss) if np.ndim(loss) == 0 else loss


def batch_loss(model: MsdoasModel, batch) -> float:
    """The mean cross entropy of a non-empty batch of tracklets."""
    batch = _as_batch(batch)
    result = _forward_batch(model, batch.detections, batch.histories)
    return float(np.mean(cross_entropy(result.nz0, batch.labels)))


def _loss_and_gradients(model: MsdoasModel, batch: TrackletBatch) -> Tuple[float, ModelGradients]:
    result = _forward_batch(model, batch.detections, batch.histories)
    loss = float(np.mean(cross_entropy(result.nz0, batch.labels)))
    targets = np.zeros((batch.size, model.config.K))
    targets[np.arange(batch.size), batch.labels] = 1.0
    # Fused softmax cross-entropy derivative, averaged over the batch.
    d_z = (np.stack((result.nz0, result.nz1), axis=1) - targets) / batch.size
    fc = FcParams(d_z.T @ result.cache.joint, d_z.sum(axis=0))
    d_agents = (d_z @ model.fc.weights)[:, model.config.n:]
    lstm = _lstm_backward_batch(model.lstm, result.cache.lstm, d_agents)
    return loss, ModelGradients(lstm, fc)


def backward(model: MsdoasModel, batch) -> ModelGradients:
    """Exact gradients of :func:`batch_loss` with respect to every parameter tensor."""
    return _loss_and_gradients(model, _as_batch(batch))[1]


class AdagradState(NamedTuple):
    """Accumulated squared gradients, one array per parameter tensor."""
    accumulators: Tuple[np.ndarray, ...]
    learning_rate: float = 0.01
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, tensors: Iterable[np.ndarray], learning_rate=0.01, epsilon=1e-8) -> 'AdagradState':
        return cls(tuple(np.zeros_like(t) for t in tensors), learning_rate, epsilon)


def adagrad_update(params: Sequence[np.ndarray], state: AdagradState,
                   grads: Sequence[np.ndarray]) -> Tuple[List[np.ndarray], AdagradState]:
    """One Adagrad step: ``G += g * g`` then ``w -= lr * g / (sqrt(G) + eps)``.

    Entries whose step denominator is zero are left unchanged.
    """
    if len(params) != len(grads) or len(params) != len(state.accumulators):
        raise DimensionMismatchError('Parameters, gradients and accumulators must align')
    updated, accumulators = [], []
    for w, g, acc in zip(params, grads, state.accumulators):
        if w.shape != g.shape or w.shape != acc.shape:
            raise DimensionMismatchError(f'Shape mismatch: {w.shape}, {g.shape}, {acc.shape}')
        acc = acc + g * g
        denominator = np.sqrt(acc) + state.epsilon
        step = np.divide(g, denominator, out=np.zeros_like(g, dtype=np.float64), where=denominator > 0)
        updated.append(w - state.learning_rate * step)
        accumulators.append(acc)
    return updated, state._replace(accumulators=tuple(accumulators))


class TrainConfig(NamedTuple):
    """Mini-batch training parameters.

    Args:
        batch_size (int): Tracklets per batch.
        iterations (int): Number of updates.
        learning_rate (float): The Adagrad learning rate.
        seed (int): Seed of the initialization and the batch order.
        init_scale (Optional[float]): Half-width of the uniform weight initialization.
        epsilon (float): The Adagrad damping term.
        log_every (int): Iterations between progress log lines.
    """
    batch_size: int = 32
    iterations: int = 2000
    learning_rate: float = 0.01
    seed: int = 0
    init_scale: Optional[float] = None
    epsilon: float = 1e-8
    log_every: int = 100

    def validate(self):
        checks = ((self.batch_size >= 1, 'B >= 1'), (self.iterations >= 0, 'IT >= 0'),
                  (self.learning_rate > 0, 'lr > 0'), (self.epsilon >= 0, 'epsilon >= 0'),
                  (self.init_scale is None or self.init_scale > 0, 'init_scale > 0'))
        for ok, constraint in checks:
            if not ok:
                raise ConfigValidationError(f'training parameter must satisfy {constraint}')
        return self


class TrainResult(NamedTuple):
    model: MsdoasModel
    losses: List[float]


def _batches(size: int, batch_size: int, rng: np.random.Generator):
    """Yields (batch id, indices) over reshuffled epochs forever.

    Each epoch is a fresh permutation cut into batches of exactly ``batch_size``; the trailing
    ``size % batch_size`` tracklets of the permutation are left out of that epoch. A corpus smaller than
    ``batch_size`` is one batch per epoch.
    """
    batch_size = min(batch_size, size)
    epoch = 0
    while True:
        order = rng.permutation(size)
        for position, start in enumerate(range(0, size - batch_size + 1, batch_size)):
            yield f'{epoch}.{position}', order[start:start + batch_size]
        epoch += 1


def train(model: MsdoasModel, tracklets, cfg: TrainConfig) -> TrainResult:
    """Mini-batch Adagrad training on labelled tracklets.

    Every iteration runs the forward pass, the batch loss, backpropagation and one Adagrad update. The
    returned trace holds the loss of each iteration's batch before its update. Batches are always full, so
    when the corpus size is not a multiple of the batch size an epoch leaves its last few shuffled
    tracklets out; the next epoch reshuffles, so none are skipped for good.

    Raises:
        NumericalError: If a batch loss is not finite.
    """
    cfg = cfg.validate()
    if not cfg.iterations:
        return TrainResult(model, [])
    corpus = _as_batch(tracklets)
    if corpus.detections.shape[1] != model.config.n or corpus.histories.shape[1] != model.config.T:
        raise DimensionMismatchError(f'Tracklets of T={corpus.histories.shape[1]}, n={corpus.detections.shape[1]} '
                                     f'do not fit a model with {model.config}')
    rng = np.random.default_rng(cfg.seed)
    state = AdagradState.zeros_like(model.parameters(), cfg.learning_rate, cfg.epsilon)
    losses = []
    batches = _batches(corpus.size, cfg.batch_size, rng)
    for iteration in range(cfg.iterations):
        batch_id, indices = next(batches)
        loss, grads = _loss_and_gradients(model, corpus.subset(indices))
        if not np.isfinite(loss):
            raise NumericalError('Non-finite training loss', iteration, batch_id)
        tensors, state = adagrad_update(model.parameters(), state, grads.tensors())
        model = model.with_parameters(tensors)
        losses.append(loss)
        if cfg.log_every and (iteration + 1) % cfg.log_every == 0:
            recent = losses[-cfg.log_every:]
            logger.info('iteration {}/{}: loss={:.6f} mean={:.6f}', iteration + 1, cfg.iterations, loss,
                        sum(recent) / len(recent))
    return TrainResult(model, losses)


def save_model(model: MsdoasModel, path):
    """Writes the model as a self-describing Ion binary container."""
    config = model.config
    document = {
        'format': MODEL_FORMAT,
        'version': MODEL_FORMAT_VERSION,
        'config': {'n': config.n, 'H': config.H, 'T': config.T, 'K': config.K, 'inputs': config.inputs},
        'tensors': [encode_tensor(name, tensor) for name, tensor in zip(TENSOR_NAMES, model.parameters())],
    }
    dump_ion(document, path, binary=True)


def load_model(path, config: Optional[ModelConfig] = None) -> MsdoasModel:
    """Reads a model written by :func:`save_model`.

    Args:
        path: The model file.
        config (Optional[ModelConfig]): If given, the stored configuration must equal it.

    Raises:
        ModelFormatError: On a foreign format, an unsupported version, or a shape or configuration mismatch.
        OSError: If the file cannot be read.
    """
    document = load_ion(path)
    header = to_plain({k: document[k] for k in ('format', 'version', 'config') if k in document})
    if header.get('format') != MODEL_FORMAT:
        raise ModelFormatError(f'{path} is not an msdoas model')
    if header.get('version') != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f'{path} has model format version {header.get("version")}, '
                               f'expected {MODEL_FORMAT_VERSION}')
    try:
        stored = ModelConfig(**header['config']).validate()
    except (TypeError, KeyError, ConfigValidationError) as e:
        raise ModelFormatError(f'{path} has an invalid model configuration: {e}')
    if config is not None and stored != config:
        raise ModelFormatError(f'{path} holds a model with {stored}, expected {config}')
    shapes = stored.tensor_shapes()
    entries = list(document['tensors'])
    if len(entries) != len(shapes):
        raise ModelFormatError(f'{path} holds {len(entries)} tensors, expected {len(shapes)}')
    tensors = [decode_tensor(entry, name, shape)
               for entry, name, shape in zip(entries, TENSOR_NAMES, shapes)]
    return MsdoasModel(stored, LstmParams(*tensors[:3]), FcParams(*tensors[3:]))
