"""Graph-convolutional encoder with an adversarial embedding prior.

The model has three parts:

* encoder: two graph convolutions over the symmetrically normalised
  adjacency A~, with additive gaussian noise on the hidden layer and no
  biases:  Z = A~ . noise(relu(A~ X W0)) . W1  (linear output by
  default; configurable).
* decoder: an MLP head on Z (ReLU hidden layers with dropout, biases
  initialised to zero, softmax output) producing per-node histograms
  or class probabilities.
* discriminator: an MLP on embedding rows that scores whether a row
  came from the encoder or from the N(0, 1) prior. It is trained on
  logits with the numerically stable BCE; sigmoid is only applied when
  scores are requested.

Each training epoch is one full-batch pass with three updates:

1. task update: sample the prior Q, run encoder+decoder, take the task
   loss on masked rows, update encoder and decoder weights;
2. discriminator update: score Q (real) and the *detached* embeddings
   from phase 1 (fake), minimise BCE(real, 1) + BCE(fake, 0), update
   only the discriminator;
3. generator update: re-encode from scratch (fresh noise), score the
   new embeddings with the discriminator held constant, minimise
   BCE(scores, 1), update only the encoder.

Three separate Adam optimisers carry the moment state for (encoder +
decoder), the discriminator, and the encoder-as-generator.

With ``adversarial=False`` the prior is never sampled and phases 2-3
are skipped entirely, so the random stream matches a plain two-layer
GCN epoch for epoch. Random draws per epoch, in order: [Q if
adversarial], encoder noise, decoder dropouts, then for the
adversarial phases: discriminator dropouts (real, then fake), encoder
noise again, discriminator dropouts (generator pass).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import nn
from .errors import ConfigurationError, TrainingError
from .graphs import LineGraph, normalize_adjacency


@dataclass
class StepLosses:
    task: float
    discriminator: float = None
    generator: float = None


class AdversarialGcnCore:
    """Weights plus the three-phase optimisation step.

    Seeding: the given SeedSequence is split into four children used
    for encoder init, decoder init, discriminator init and the
    training stream. A reference implementation without the
    discriminator can therefore reproduce a non-adversarial run
    bit-for-bit by spawning the same children and skipping the third.
    """

    def __init__(self, n_features, output_dim, *, task="regression",
                 embedding_dim=16, encoder_hidden=32,
                 encoder_output_activation="linear",
                 decoder_hidden=(256, 256), decoder_dropout=0.3,
                 discriminator_hidden=(64, 32), discriminator_dropout=0.3,
                 noise_std=0.1, learning_rate=1e-3,
                 discriminator_learning_rate=1e-4, adversarial=True,
                 seed=None):
        if task not in ("regression", "classification"):
            raise ConfigurationError(f"unknown task {task!r}")
        if encoder_output_activation not in ("linear", "relu"):
            raise ConfigurationError(
                f"encoder_output_activation must be linear or relu, "
                f"got {encoder_output_activation!r}"
            )
        self.task = task
        self.embedding_dim = embedding_dim
        self.encoder_output_activation = encoder_output_activation
        self.decoder_dropout = decoder_dropout
        self.discriminator_dropout = discriminator_dropout
        self.noise_std = noise_std
        self.adversarial = adversarial

        root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        enc_ss, dec_ss, disc_ss, train_ss = root.spawn(4)
        enc_rng = np.random.default_rng(enc_ss)
        self.enc_w0 = nn.glorot_uniform(enc_rng, n_features, encoder_hidden)
        self.enc_w1 = nn.glorot_uniform(enc_rng, encoder_hidden, embedding_dim)
        self.decoder = _init_mlp(np.random.default_rng(dec_ss), embedding_dim,
                                 decoder_hidden, output_dim)
        self.discriminator = _init_mlp(np.random.default_rng(disc_ss), embedding_dim,
                                       discriminator_hidden, 1)
        self.rng = np.random.default_rng(train_ss)

        self.encoder_params = [self.enc_w0, self.enc_w1]
        self.decoder_params = [p for layer in self.decoder for p in layer]
        self.discriminator_params = [p for layer in self.discriminator for p in layer]
        self.opt_model = nn.Adam(self.encoder_params + self.decoder_params,
                                 lr=learning_rate)
        self.opt_discriminator = nn.Adam(self.discriminator_params,
                                         lr=discriminator_learning_rate)
        self.opt_generator = nn.Adam(self.encoder_params, lr=learning_rate)

    # -- forward passes ----------------------------------------------------

    def encode(self, ax, anorm, training=False):
        h = nn.relu(nn.matmul(ax, self.enc_w0))
        h = nn.gaussian_noise(h, self.noise_std, self.rng, training)
        z = nn.matmul(nn.matmul(anorm, h), self.enc_w1)
        if self.encoder_output_activation == "relu":
            z = nn.relu(z)
        return z

    def decode(self, z, training=False):
        x = z
        for w, b in self.decoder[:-1]:
            x = nn.relu(nn.add(nn.matmul(x, w), b))
            x = nn.dropout(x, self.decoder_dropout, self.rng, training)
        w, b = self.decoder[-1]
        return nn.softmax_rows(nn.add(nn.matmul(x, w), b))

    def discriminate(self, x, training=False, trainable=True):
        """Logit column for a batch of embedding rows. With
        ``trainable=False`` the weights enter as constants so no
        gradient can reach the discriminator."""
        for w, b in self.discriminator[:-1]:
            wv, bv = (w, b) if trainable else (w.value, b.value)
            x = nn.relu(nn.add(nn.matmul(x, wv), bv))
            x = nn.dropout(x, self.discriminator_dropout, self.rng, training)
        w, b = self.discriminator[-1]
        wv, bv = (w, b) if trainable else (w.value, b.value)
        return nn.add(nn.matmul(x, wv), bv)

    def discriminator_scores(self, x) -> np.ndarray:
        from scipy.special import expit

        return expit(self.discriminate(x, training=False).value)

    def _task_loss(self, probs, targets, mask):
        if self.task == "regression":
            return nn.intersection_loss(probs, targets, mask)
        return nn.cross_entropy_loss(probs, targets, mask)

    # -- training ----------------------------------------------------------

    def task_update(self, ax, anorm, targets, mask=None):
        """Phase 1: fit encoder + decoder to the task loss. Returns
        (loss value, detached embedding matrix for phase 2)."""
        z = self.encode(ax, anorm, training=True)
        probs = self.decode(z, training=True)
        task_loss = self._task_loss(probs, targets, mask)
        nn.zero_grads(self.opt_model.params)
        task_loss.backward()
        self.opt_model.step()
        return task_loss.item(), z.value

    def discriminator_update(self, embeddings, prior) -> float:
        """Phase 2: push discriminator scores toward 1 on prior rows
        and 0 on (detached) encoder rows. Touches only its weights."""
        real_logits = self.discriminate(prior, training=True)
        fake_logits = self.discriminate(np.asarray(embeddings), training=True)
        real_loss = nn.bce_with_logits(real_logits, 1.0)
        fake_loss = nn.bce_with_logits(fake_logits, 0.0)
        nn.zero_grads(self.discriminator_params)
        real_loss.backward()
        fake_loss.backward()
        self.opt_discriminator.step()
        return real_loss.item() + fake_loss.item()

    def generator_update(self, ax, anorm) -> float:
        """Phase 3: re-encode from scratch and push the (frozen)
        discriminator's scores on the new embeddings toward 1.
        Touches only the encoder weights."""
        z = self.encode(ax, anorm, training=True)
        gen_logits = self.discriminate(z, training=True, trainable=False)
        gen_loss = nn.bce_with_logits(gen_logits, 1.0)
        nn.zero_grads(self.encoder_params)
        gen_loss.backward()
        self.opt_generator.step()
        return gen_loss.item()

    def step(self, ax, anorm, targets, mask=None) -> StepLosses:
        """One epoch: task update, then (if adversarial) discriminator
        and generator updates. The prior is only sampled when the
        adversarial phases run."""
        prior = None
        if self.adversarial:
            n = anorm.shape[0]
            prior = self.rng.normal(0.0, 1.0, size=(n, self.embedding_dim))
        task_loss, embeddings = self.task_update(ax, anorm, targets, mask)
        if not self.adversarial:
            return StepLosses(task=task_loss)
        disc_loss = self.discriminator_update(embeddings, prior)
        gen_loss = self.generator_update(ax, anorm)
        return StepLosses(task=task_loss, discriminator=disc_loss,
                          generator=gen_loss)

    def predict_probs(self, ax, anorm) -> np.ndarray:
        return self.decode(self.encode(ax, anorm, training=False), training=False).value

    def weight_arrays(self) -> dict:
        out = {"enc_0": self.enc_w0.value, "enc_1": self.enc_w1.value}
        for tag, layers in (("dec", self.decoder), ("disc", self.discriminator)):
            for i, (w, b) in enumerate(layers):
                out[f"{tag}_w{i}"] = w.value
                out[f"{tag}_b{i}"] = b.value
        return out

    def load_weight_arrays(self, arrays: dict):
        for key, tensor in self._tensor_map().items():
            tensor.value = np.array(arrays[key], dtype=np.float64)

    def _tensor_map(self) -> dict:
        out = {"enc_0": self.enc_w0, "enc_1": self.enc_w1}
        for tag, layers in (("dec", self.decoder), ("disc", self.discriminator)):
            for i, (w, b) in enumerate(layers):
                out[f"{tag}_w{i}"] = w
                out[f"{tag}_b{i}"] = b
        return out


def _init_mlp(rng, in_dim, hidden, out_dim):
    """Glorot weights, zero biases; returns [(W, b), ...]."""
    sizes = [in_dim, *hidden, out_dim]
    return [
        (nn.glorot_uniform(rng, a, b), nn.zeros_param(1, b))
        for a, b in zip(sizes[:-1], sizes[1:])
    ]


def _graph_parts(graph):
    """(adjacency, features) from a LineGraph, a batch, or a pair."""
    if isinstance(graph, LineGraph):
        return graph.adjacency, graph.features
    if hasattr(graph, "adjacency") and hasattr(graph, "features"):
        return graph.adjacency, graph.features
    adjacency, features = graph
    return sp.csr_matrix(adjacency), features


class _AdversarialGcnEstimator(BaseEstimator):
    """Shared fit/predict machinery for both tasks."""

    _task = "regression"

    def _core_kwargs(self):
        return dict(
            task=self._task,
            embedding_dim=self.embedding_dim,
            encoder_hidden=self.encoder_hidden,
            encoder_output_activation=self.encoder_output_activation,
            decoder_hidden=tuple(self.decoder_hidden),
            decoder_dropout=self.decoder_dropout,
            discriminator_hidden=tuple(self.discriminator_hidden),
            discriminator_dropout=self.discriminator_dropout,
            noise_std=self.noise_std,
            learning_rate=self.learning_rate,
            discriminator_learning_rate=self.discriminator_learning_rate,
            adversarial=self.adversarial,
        )

    def _fit(self, graph, targets, mask):
        adjacency, features = _graph_parts(graph)
        n = adjacency.shape[0]
        if features.shape[0] != n:
            raise ValueError("feature rows do not match the adjacency size")
        if targets.shape[0] != n:
            raise ValueError("label rows do not match the adjacency size")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        anorm = normalize_adjacency(adjacency)
        ax = anorm @ features
        core = AdversarialGcnCore(
            features.shape[1], self._output_dim(targets),
            seed=np.random.SeedSequence(self.random_state),
            **self._core_kwargs(),
        )
        trace = []
        for epoch in range(self.epochs):
            losses = core.step(ax, anorm, targets, mask)
            if not np.isfinite(losses.task):
                raise TrainingError(f"task loss became non-finite at epoch {epoch}")
            trace.append(losses)
        self.core_ = core
        self.loss_trace_ = trace
        self.n_features_in_ = features.shape[1]
        return self

    def _probs(self, graph):
        if not hasattr(self, "core_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted")
        adjacency, features = _graph_parts(graph)
        anorm = normalize_adjacency(adjacency)
        return self.core_.predict_probs(anorm @ features, anorm)

    def embed(self, graph) -> np.ndarray:
        """Deterministic (inference-mode) node embeddings."""
        if not hasattr(self, "core_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted")
        adjacency, features = _graph_parts(graph)
        anorm = normalize_adjacency(adjacency)
        return self.core_.encode(anorm @ features, anorm, training=False).value

    # -- persistence --------------------------------------------------------

    def save(self, path):
        """Write weights plus a JSON config entry to an .npz file."""
        if not hasattr(self, "core_"):
            raise NotFittedError("cannot save an unfitted model")
        meta = {
            "estimator": type(self).__name__,
            "params": self.get_params(),
            "task": self._task,
            "n_features": int(self.n_features_in_),
            "output_dim": int(self.output_dim_),
        }
        if self._task == "classification":
            meta["classes"] = np.asarray(self.classes_).tolist()
        np.savez(path, meta=json.dumps(meta), **self.core_.weight_arrays())

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            arrays = {k: data[k] for k in data.files if k != "meta"}
        klass = _ESTIMATORS[meta["estimator"]]
        # JSON stores tuples (hidden layer sizes) as lists
        params = {k: tuple(v) if isinstance(v, list) else v
                  for k, v in meta["params"].items()}
        est = klass(**params)
        est.n_features_in_ = meta["n_features"]
        est.output_dim_ = meta["output_dim"]
        core = AdversarialGcnCore(
            meta["n_features"], meta["output_dim"],
            seed=np.random.SeedSequence(est.random_state),
            **est._core_kwargs(),
        )
        core.load_weight_arrays(arrays)
        est.core_ = core
        est.loss_trace_ = []
        if meta["task"] == "classification":
            est.classes_ = np.asarray(meta["classes"])
        return est

    def save_loss_trace(self, path):
        """CSV trace: epoch, task loss, discriminator loss, encoder
        adversarial loss (last two blank for non-adversarial runs)."""
        import csv

        if not hasattr(self, "loss_trace_"):
            raise NotFittedError("no loss trace recorded")
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "task_loss", "discriminator_loss",
                        "encoder_adversarial_loss"])
            for i, s in enumerate(self.loss_trace_):
                w.writerow([
                    i, repr(s.task),
                    "" if s.discriminator is None else repr(s.discriminator),
                    "" if s.generator is None else repr(s.generator),
                ])


class AdversarialGcnRegressor(_AdversarialGcnEstimator):
    """Per-node histogram prediction on a (sub)graph.

    ``fit(graph, y, mask)`` trains on the rows selected by ``mask``
    (boolean per node; None trains on every row) against the histogram
    matrix ``y``; rows outside the mask can be all-zero placeholders.
    ``predict`` returns a row-stochastic matrix for every node.

    Defaults follow the road setup: 16-dim embeddings, 32 hidden
    encoder units, (256, 256) decoder with dropout 0.3, (64, 32)
    discriminator with dropout 0.3, learning rates 1e-3 (model) and
    1e-4 (discriminator), 2000 full-batch epochs.
    """

    _task = "regression"

    def __init__(self, embedding_dim=16, encoder_hidden=32,
                 encoder_output_activation="linear",
                 decoder_hidden=(256, 256), decoder_dropout=0.3,
                 discriminator_hidden=(64, 32), discriminator_dropout=0.3,
                 noise_std=0.1, learning_rate=1e-3,
                 discriminator_learning_rate=1e-4, epochs=2000,
                 adversarial=True, random_state=None):
        self.embedding_dim = embedding_dim
        self.encoder_hidden = encoder_hidden
        self.encoder_output_activation = encoder_output_activation
        self.decoder_hidden = decoder_hidden
        self.decoder_dropout = decoder_dropout
        self.discriminator_hidden = discriminator_hidden
        self.discriminator_dropout = discriminator_dropout
        self.noise_std = noise_std
        self.learning_rate = learning_rate
        self.discriminator_learning_rate = discriminator_learning_rate
        self.epochs = epochs
        self.adversarial = adversarial
        self.random_state = random_state

    def _output_dim(self, targets):
        return targets.shape[1]

    def fit(self, graph, y, mask=None):
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2:
            raise ValueError("y must be a (n_nodes, n_buckets) histogram matrix")
        self.output_dim_ = y.shape[1]
        return self._fit(graph, y, mask)

    def predict(self, graph) -> np.ndarray:
        return self._probs(graph)

    def score(self, graph, y, mask=None) -> float:
        """Mean histogram intersection on the masked rows."""
        from .metrics import intersection_rows

        probs = self.predict(graph)
        y = np.asarray(y, dtype=np.float64)
        if mask is not None:
            probs, y = probs[mask], y[mask]
        return float(intersection_rows(probs, y).mean())


class AdversarialGcnClassifier(_AdversarialGcnEstimator):
    """Per-node classification. ``fit(graph, y, mask)`` takes integer
    labels and a boolean training mask (unlabeled rows may hold any
    value, e.g. -1). Defaults follow the citation-network setup."""

    _task = "classification"

    def __init__(self, embedding_dim=32, encoder_hidden=32,
                 encoder_output_activation="linear",
                 decoder_hidden=(16, 16), decoder_dropout=0.2,
                 discriminator_hidden=(64, 32), discriminator_dropout=0.5,
                 noise_std=0.1, learning_rate=1e-4,
                 discriminator_learning_rate=1e-5, epochs=2000,
                 adversarial=True, random_state=None):
        self.embedding_dim = embedding_dim
        self.encoder_hidden = encoder_hidden
        self.encoder_output_activation = encoder_output_activation
        self.decoder_hidden = decoder_hidden
        self.decoder_dropout = decoder_dropout
        self.discriminator_hidden = discriminator_hidden
        self.discriminator_dropout = discriminator_dropout
        self.noise_std = noise_std
        self.learning_rate = learning_rate
        self.discriminator_learning_rate = discriminator_learning_rate
        self.epochs = epochs
        self.adversarial = adversarial
        self.random_state = random_state

    def _output_dim(self, targets):
        return targets.shape[1]

    def fit(self, graph, y, mask=None, classes=None):
        y = np.asarray(y)
        self.classes_ = (np.asarray(classes) if classes is not None
                         else np.unique(y[mask] if mask is not None else y))
        onehot = np.zeros((y.shape[0], self.classes_.size))
        known = np.isin(y, self.classes_)
        onehot[np.flatnonzero(known),
               np.searchsorted(self.classes_, y[known])] = 1.0
        self.output_dim_ = self.classes_.size
        return self._fit(graph, onehot, mask)

    def predict_proba(self, graph) -> np.ndarray:
        return self._probs(graph)

    def predict(self, graph) -> np.ndarray:
        return self.classes_[self._probs(graph).argmax(axis=1)]

    def score(self, graph, y, mask=None) -> float:
        pred = self.predict(graph)
        y = np.asarray(y)
        if mask is not None:
            pred, y = pred[mask], y[mask]
        return float((pred == y).mean())


_ESTIMATORS = {
    "AdversarialGcnRegressor": AdversarialGcnRegressor,
    "AdversarialGcnClassifier": AdversarialGcnClassifier,
}


def load_model(path):
    """Load any saved estimator from its .npz checkpoint."""
    return _AdversarialGcnEstimator.load(path)
