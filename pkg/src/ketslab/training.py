"""Small fully connected classifier with hand-written backprop.

Hidden layers use ReLU, the output layer softmax, and training minimizes the
mean cross-entropy with mini-batch gradient descent (optional heavy-ball
momentum). Parameters flatten layer by layer as ``W`` (row-major,
``fan_in x fan_out``) followed by ``b``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DivergenceError


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DimensionError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise DimensionError(
                f"{self.features.shape[0]} feature rows but labels have shape {self.labels.shape}"
            )

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx])


class Model:
    """Layered parameter container; ``weights[i]`` has shape ``(sizes[i], sizes[i+1])``."""

    def __init__(self, layer_sizes, weights, biases):
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.weights = weights
        self.biases = biases

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flatten(self):
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def unflatten(self, flat):
        """Return a new model of the same architecture holding ``flat``."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise DimensionError(f"expected {self.n_params} parameters, got shape {flat.shape}")
        weights, biases = [], []
        pos = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            weights.append(flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
            pos += fan_in * fan_out
            biases.append(flat[pos:pos + fan_out].copy())
            pos += fan_out
        return Model(self.layer_sizes, weights, biases)

    def copy(self):
        return Model(self.layer_sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x):
        """Return the activations of every layer; the last entry holds class probabilities."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = softmax(z) if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return acts

    def predict_proba(self, x):
        return self.forward(np.asarray(x, dtype=np.float64))[-1]


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def init_model(layer_sizes, seed):
    """Weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases."""
    if len(layer_sizes) < 2:
        raise ValueError("a model needs at least an input and an output layer")
    if any(int(s) < 1 for s in layer_sizes):
        raise ValueError(f"layer sizes must be positive, got {layer_sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Model(layer_sizes, weights, biases)


def cross_entropy(probs, labels):
    p = probs[np.arange(labels.shape[0]), labels]
    return float(-np.mean(np.log(np.clip(p, 1e-300, None))))


def loss_and_grads(model, x, y):
    """Mean cross-entropy on ``(x, y)`` and its gradient per layer."""
    acts = model.forward(x)
    probs = acts[-1]
    n = x.shape[0]
    loss = cross_entropy(probs, y)
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gw = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    return loss, gw, gb


def flat_gradient(model, x, y):
    _, gw, gb = loss_and_grads(model, x, y)
    parts = []
    for w, b in zip(gw, gb):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def local_train(global_model, data, epochs, batch_size, lr, momentum=0.0, seed=0):
    """Fine-tune a copy of ``global_model`` on ``data``; the input model is untouched.

    Each epoch visits a seeded shuffle of the samples in mini-batches; the
    final short batch is kept.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if data.n_features != global_model.layer_sizes[0]:
        raise DimensionError(
            f"data has {data.n_features} features, model expects {global_model.layer_sizes[0]}"
        )
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
    model = global_model.copy()
    if epochs <= 0 or lr == 0:
        return model
    rng = np.random.default_rng(seed)
    vw = [np.zeros_like(w) for w in model.weights]
    vb = [np.zeros_like(b) for b in model.biases]
    n = len(data)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for batch, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            loss, gw, gb = loss_and_grads(model, data.features[idx], data.labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(epoch, batch)
            for i in range(len(model.weights)):
                if momentum:
                    vw[i] = momentum * vw[i] + gw[i]
                    vb[i] = momentum * vb[i] + gb[i]
                    gw[i], gb[i] = vw[i], vb[i]
                model.weights[i] -= lr * gw[i]
                model.biases[i] -= lr * gb[i]
    for w, b in zip(model.weights, model.biases):
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise DivergenceError(epochs - 1, -1, "parameters became non-finite")
    return model


def compute_update(local, global_model):
    if local.layer_sizes != global_model.layer_sizes:
        raise DimensionError(f"shape mismatch: {local.layer_sizes} vs {global_model.layer_sizes}")
    return local.flatten() - global_model.flatten()


def evaluate(model, test):
    """Fraction of argmax-correct predictions (ties go to the lowest class index)."""
    if len(test) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    pred = np.argmax(model.predict_proba(test.features), axis=1)
    return float(np.mean(pred == test.labels))
