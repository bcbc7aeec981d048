"""Shared test utilities."""

import numpy as np

from micronet.train import finite_difference_check


def assert_grads(loss_fn, named_params, probes=12, rtol=1e-5, atol=1e-8,
                 seed=0, step=1e-6):
    """All sampled analytic gradients must match central differences."""
    results = finite_difference_check(
        loss_fn, named_params, probes=probes, rtol=rtol, atol=atol,
        step=step, rng=np.random.default_rng(seed))
    bad = [r for r in results if not r.ok]
    assert not bad, f"{len(bad)}/{len(results)} probes off, first: {bad[:3]}"


def away_from_zero(x, margin=1e-2):
    """Push values off the origin so kink points (relu, max against 0)
    cannot flip under finite-difference perturbation."""
    return x + np.sign(x) * margin


def fusion_margin(layer, x):
    """Smallest winner-vs-runner-up gap of a DyShiftMax over input x.
    A margin well above the FD step keeps the max branch stable."""
    from micronet.dyshiftmax import reference_eval

    candidates = []
    keep = layer.num_fusions
    for k in range(keep):
        probe = _single_fusion(layer, x, k)
        candidates.append(probe)
    stacked = np.stack(candidates)
    srt = np.sort(stacked, axis=0)
    if keep == 1:
        return np.inf
    return float((srt[-1] - srt[-2]).min())


def _single_fusion(layer, x, k):
    n, c = x.shape[:2]
    stride = c // layer.groups
    z = x.mean(axis=(2, 3))
    hid = np.maximum(z @ layer.fc1_w.data.T + layer.fc1_b.data, 0)
    raw = hid @ layer.fc2_w.data.T + layer.fc2_b.data
    sig = 1.0 / (1.0 + np.exp(-raw))
    a = (2.0 * layer.coeff_scale * sig - layer.coeff_scale).reshape(
        n, c, layer.num_shifts, layer.num_fusions) + layer.init_bias[None, None]
    acc = np.zeros_like(x)
    for j in range(layer.num_shifts):
        shifted = np.roll(x, -(j * stride) % c, axis=1)
        acc += a[:, :, j, k][:, :, None, None] * shifted
    return acc
