"""Training utilities: SGD with momentum, cosine learning-rate decay, a
minibatch loop with per-epoch stats, gradient checking by central
differences, and a small separable synthetic dataset."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .module import Context
from .tensor import no_grad, softmax_cross_entropy


class SGD:
    """Momentum SGD. Weight decay is folded into the gradient:
    v <- momentum * v + g + wd * p, then p <- p - lr * v."""

    def __init__(self, params, lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = []
        seen = set()
        for item in params:
            p = item[1] if isinstance(item, tuple) else item
            if id(p) not in seen:
                seen.add(id(p))
                self.params.append(p)
        if not self.params:
            raise ValueError("no parameters to optimize")
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= self.lr * v


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Half-cosine decay from base_lr at epoch 0 toward zero."""
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * epoch / total_epochs))


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    loss: float
    accuracy: float


def iterate_batches(images, labels, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(labels))
    for start in range(0, len(order), batch_size):
        take = order[start:start + batch_size]
        yield images[take], labels[take]


def train_model(net, images, labels, *, epochs: int, base_lr: float,
                batch_size: int = 16, momentum: float = 0.9,
                weight_decay: float = 0.0, seed: int = 0,
                target_accuracy: float | None = None,
                log=None) -> list[EpochStats]:
    """Minibatch training with a cosine schedule. Stops early once the
    running training accuracy reaches target_accuracy, if given.
    Deterministic for a fixed seed."""
    images = np.asarray(images, dtype=net.dtype)
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    opt = SGD(net.named_params(), lr=base_lr, momentum=momentum,
              weight_decay=weight_decay)
    history = []
    for epoch in range(epochs):
        opt.lr = cosine_lr(base_lr, epoch, epochs)
        total_loss = 0.0
        correct = 0
        for xb, yb in iterate_batches(images, labels, batch_size, rng):
            ctx = Context(training=True, rng=rng)
            logits = net(xb, ctx)
            loss = softmax_cross_entropy(logits, yb)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total_loss += float(loss.data) * len(yb)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
        stats = EpochStats(epoch, opt.lr, total_loss / len(labels),
                           correct / len(labels))
        history.append(stats)
        if log is not None:
            log(stats)
        if target_accuracy is not None and stats.accuracy >= target_accuracy:
            break
    return history


def evaluate(net, images, labels, batch_size: int = 64) -> tuple[float, float]:
    """Mean loss and accuracy without gradient tracking or stat updates."""
    images = np.asarray(images, dtype=net.dtype)
    labels = np.asarray(labels, dtype=np.int64)
    total_loss = 0.0
    correct = 0
    with no_grad():
        for start in range(0, len(labels), batch_size):
            xb = images[start:start + batch_size]
            yb = labels[start:start + batch_size]
            logits = net(xb, Context(training=False))
            loss = softmax_cross_entropy(logits, yb)
            total_loss += float(loss.data) * len(yb)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
    return total_loss / len(labels), correct / len(labels)


# ---------------------------------------------------------------------------
# gradient checking

@dataclass(frozen=True)
class GradProbe:
    param: str
    index: int
    analytic: float
    numeric: float
    ok: bool


def finite_difference_check(loss_fn, named_params, *, probes: int = 20,
                            step: float = 1e-6, rtol: float = 1e-5,
                            atol: float = 1e-8,
                            rng: np.random.Generator | None = None) -> list[GradProbe]:
    """Compare backpropagated gradients against central differences.

    loss_fn must be a deterministic zero-argument callable returning a
    scalar Tensor; parameters should be float64 for the default step."""
    rng = rng or np.random.default_rng(0)
    named_params = list(named_params)
    for _, p in named_params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in named_params}

    results = []
    with no_grad():
        for name, p in named_params:
            flat = p.data.reshape(-1)
            n = flat.size
            picks = rng.choice(n, size=min(probes, n), replace=False)
            for i in picks:
                saved = flat[i]
                flat[i] = saved + step
                up = float(loss_fn().data)
                flat[i] = saved - step
                down = float(loss_fn().data)
                flat[i] = saved
                numeric = (up - down) / (2.0 * step)
                ana = float(analytic[name].reshape(-1)[i])
                ok = abs(numeric - ana) <= atol + rtol * max(abs(numeric), abs(ana))
                results.append(GradProbe(name, int(i), ana, numeric, ok))
    return results


# ---------------------------------------------------------------------------
# synthetic data

def make_synthetic(n: int, *, size: int = 32, noise: float = 0.5,
                   amplitude: float = 1.0, seed: int = 0,
                   dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """Two-class images separable by channel means: class 0 carries a
    constant bump on channel 0, class 1 on channel 2, over Gaussian
    noise. The per-channel spatial mean gives a margin of about
    amplitude against noise of order noise/size, so the classes stay
    linearly separable after any channel-preserving pooling."""
    if n < 2:
        raise ValueError("need at least one image per class")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    images = noise * rng.standard_normal((n, 3, size, size))
    images[labels == 0, 0] += amplitude
    images[labels == 1, 2] += amplitude
    return images.astype(dtype), labels.astype(np.uint32)
