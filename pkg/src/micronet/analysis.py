"""Static analysis over built networks: multiply-add and parameter
accounting, structural verification of the factorized layers, and the
connectivity/channel trade-off sweep.

Counting convention (per image): one multiply-add per weight application.
Convolution costs out_h * out_w * c_out * (c_in / groups) * kh * kw, a
linear layer costs d_in * d_out, global pooling costs h * w * c. Bias
adds, normalization, plain activations and residual adds are free. The
coefficient heads of dynamic activations are counted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .microfac import path_count_matrix
from .models import Network, _dysm_params

COST_SCHEMA = "micronet.cost/1"
VERIFY_SCHEMA = "micronet.verify/1"
SWEEP_SCHEMA = "micronet.sweep/1"

# (multiply-adds, parameters) targets per variant at 224x224, with a
# +-10% acceptance band.
BUDGETS = {
    "M0": (4_000_000, 1_000_000),
    "M1": (6_000_000, 1_800_000),
    "M2": (12_000_000, 2_400_000),
    "M3": (21_000_000, 2_600_000),
}
BUDGET_TOLERANCE = 0.10


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    madds: int
    params: int
    out_shape: tuple | None

    def to_json(self) -> dict:
        return {"name": self.name, "kind": self.kind, "madds": self.madds,
                "params": self.params,
                "out_shape": list(self.out_shape) if self.out_shape else None}


@dataclass
class CostReport:
    variant: str
    resolution: int
    records: list

    @property
    def total_madds(self) -> int:
        return sum(r.madds for r in self.records)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.records)

    @property
    def dynamic_madds(self) -> int:
        return sum(r.madds for r in self.records if r.kind == "dysm")

    @property
    def dynamic_params(self) -> int:
        return sum(r.params for r in self.records if r.kind == "dysm")

    def to_json(self) -> dict:
        return {
            "schema": COST_SCHEMA,
            "variant": self.variant,
            "resolution": self.resolution,
            "layers": [r.to_json() for r in self.records],
            "totals": {
                "madds": self.total_madds,
                "params": self.total_params,
                "dynamic_madds": self.dynamic_madds,
                "dynamic_params": self.dynamic_params,
            },
        }

    def format_table(self) -> str:
        rows = [("layer", "kind", "madds", "params", "out")]
        for r in self.records:
            out = "x".join(str(d) for d in r.out_shape) if r.out_shape else "-"
            rows.append((r.name, r.kind, f"{r.madds:,}", f"{r.params:,}", out))
        rows.append(("total", "", f"{self.total_madds:,}",
                     f"{self.total_params:,}", ""))
        widths = [max(len(row[i]) for row in rows) for i in range(5)]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
            if i == 0 or i == len(rows) - 2:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)


def count_costs(net: Network, resolution: int = 224) -> CostReport:
    """Walk the network and produce one record per cost- or
    parameter-bearing unit. Parameter totals match the live arrays."""
    records = []

    def emit(name, kind, madds, params, out_shape):
        records.append(LayerCost(name, kind, int(madds), int(params),
                                 tuple(out_shape) if out_shape else None))

    items, extra, (c, h, w) = net.stem.cost_items(resolution, resolution)
    for name, kind, madds, params, shape in items:
        emit(name, kind, madds, params, shape)
    if extra:
        emit("stem.norm", "norm", 0, extra, None)

    for i, blk in enumerate(net.blocks):
        prefix = f"blocks.{i}"
        items, extra, acts, geom = blk.cost_items(h, w)
        for name, kind, madds, params, shape in items:
            emit(f"{prefix}.{name}", kind, madds, params, shape)
        for slot, act, (ho, wo) in acts:
            emit(f"{prefix}.{slot}", "dysm", act.madds(ho, wo),
                 _dysm_params(act), (act.channels, ho, wo))
        if extra:
            emit(f"{prefix}.norm", "norm", 0, extra, None)
        c, h, w = geom

    for name, kind, madds, params, shape in net.head.cost_items(h, w):
        emit(name, kind, madds, params, shape)

    return CostReport(net.spec.name, resolution, records)


def check_budget(report: CostReport, tolerance: float = BUDGET_TOLERANCE):
    """Compare report totals against the variant budget. Returns a list of
    (metric, value, target, within) rows; empty if no budget is defined."""
    budget = BUDGETS.get(report.variant)
    if budget is None:
        return []
    rows = []
    for metric, value, target in (("madds", report.total_madds, budget[0]),
                                  ("params", report.total_params, budget[1])):
        within = abs(value - target) <= tolerance * target
        rows.append((metric, value, target, within))
    return rows


# ---------------------------------------------------------------------------
# structural verification

@dataclass(frozen=True)
class RankCheck:
    layer: str
    blocks: int
    worst_ratio: float
    ok: bool


def rank_law_holds(layer, tol: float = 1e-8) -> tuple[bool, float]:
    """Check that every (c_out/g2) x (c_in/g1) sub-block of the dense
    equivalent matrix has numerical rank at most one.

    Returns (ok, worst second-to-first singular value ratio)."""
    dense = layer.expand_dense()
    g1, g2 = layer.g1, layer.g2
    rows = layer.out_channels // g2
    cols = layer.in_channels // g1
    worst = 0.0
    for a in range(g2):
        for b in range(g1):
            block = dense[a * rows:(a + 1) * rows, b * cols:(b + 1) * cols]
            if min(block.shape) < 2:
                continue
            s = np.linalg.svd(block, compute_uv=False)
            if s[0] <= 0.0:
                continue
            worst = max(worst, float(s[1] / s[0]))
    return worst <= tol, worst


def verify_rank(net: Network, tol: float = 1e-8) -> list[RankCheck]:
    out = []
    for name, layer in net.pointwise_layers():
        ok, worst = rank_law_holds(layer, tol)
        out.append(RankCheck(name, layer.g1 * layer.g2, worst, ok))
    return out


@dataclass(frozen=True)
class ConnectivityCheck:
    layer: str
    in_channels: int
    min_paths: int
    max_paths: int
    per_output: int
    ok: bool


def verify_connectivity(net: Network) -> list[ConnectivityCheck]:
    """Every output channel of every factorized pointwise layer must be
    reachable from every input channel, with c_in total paths per output."""
    out = []
    for name, layer in net.pointwise_layers():
        paths = path_count_matrix(layer)
        per_output = paths.sum(axis=1)
        ok = paths.min() >= 1 and bool((per_output == layer.in_channels).all())
        out.append(ConnectivityCheck(name, layer.in_channels,
                                     int(paths.min()), int(paths.max()),
                                     int(per_output[0]), ok))
    return out


def verify_factorization(net: Network, rng: np.random.Generator,
                         tol: float | None = None) -> list[tuple[str, float, bool]]:
    """Run random activations through each factorized pointwise layer and
    compare against its dense equivalent."""
    if tol is None:
        tol = 1e-10 if net.dtype == np.float64 else 1e-4
    out = []
    for name, layer in net.pointwise_layers():
        x = rng.standard_normal((2, layer.in_channels, 3, 3)).astype(net.dtype)
        got = layer(x).data
        dense = layer.expand_dense()
        want = np.einsum("oi,nihw->nohw", dense, x)
        err = float(np.abs(got - want).max())
        out.append((name, err, err <= tol))
    return out


def verify_model(net: Network, resolution: int = 224,
                 rng: np.random.Generator | None = None) -> dict:
    """Full structural report: budget, rank law, connectivity, and
    factorization equivalence. JSON-serializable."""
    rng = rng or np.random.default_rng(0)
    report = count_costs(net, resolution)
    budget_rows = check_budget(report)
    ranks = verify_rank(net)
    conn = verify_connectivity(net)
    fact = verify_factorization(net, rng)
    passed = (all(r[3] for r in budget_rows)
              and all(r.ok for r in ranks)
              and all(c.ok for c in conn)
              and all(f[2] for f in fact))
    return {
        "schema": VERIFY_SCHEMA,
        "variant": net.spec.name,
        "resolution": resolution,
        "passed": bool(passed),
        "budget": [
            {"metric": m, "value": v, "target": t, "within": w}
            for m, v, t, w in budget_rows
        ],
        "rank_law": [
            {"layer": r.layer, "blocks": r.blocks,
             "worst_ratio": r.worst_ratio, "ok": r.ok}
            for r in ranks
        ],
        "connectivity": [
            {"layer": c.layer, "in_channels": c.in_channels,
             "min_paths": c.min_paths, "max_paths": c.max_paths,
             "paths_per_output": c.per_output, "ok": c.ok}
            for c in conn
        ],
        "factorization": [
            {"layer": n, "max_error": e, "ok": ok} for n, e, ok in fact
        ],
    }


# ---------------------------------------------------------------------------
# connectivity/channel trade-off sweep

@dataclass(frozen=True)
class SweepRow:
    groups: int
    channels: float
    connectivity: float
    regime: str

    def to_json(self) -> dict:
        return {"groups": self.groups, "channels": self.channels,
                "connectivity": self.connectivity, "regime": self.regime}


def sweep_tradeoff(budget: float, reduction: int,
                   max_groups: int | None = None) -> dict:
    """Sweep group counts under a fixed pointwise multiply-add budget.

    With per-position cost O = 2C^2/(RG) held fixed, each integer G yields
    channel width C = sqrt(O*R*G/2) and connectivity E = O/(2G). The two
    curves cross at G* = (O/(2R))^(1/3), where E = C = R*G*^2; widths
    beyond that point lose connectivity faster than they gain channels.
    """
    if budget <= 0 or reduction <= 0:
        raise ValueError("budget and reduction must be positive")
    g_star = (budget / (2.0 * reduction)) ** (1.0 / 3.0)
    if max_groups is None:
        max_groups = max(8, math.ceil(g_star) + 2)
    rows = []
    for g in range(1, max_groups + 1):
        channels = math.sqrt(budget * reduction * g / 2.0)
        conn = budget / (2.0 * g)
        if abs(conn - channels) <= 1e-9 * max(conn, channels):
            regime = "balanced"
        elif conn > channels:
            regime = "over-connected"
        else:
            regime = "under-connected"
        rows.append(SweepRow(g, channels, conn, regime))
    crossing = {
        "groups": g_star,
        "channels": reduction * g_star * g_star,
        "exact": abs(g_star - round(g_star)) <= 1e-9,
    }
    return {
        "schema": SWEEP_SCHEMA,
        "budget": budget,
        "reduction": reduction,
        "crossing": crossing,
        "rows": [r.to_json() for r in rows],
    }


def format_sweep(sweep: dict) -> str:
    lines = [f"budget={sweep['budget']:g} madds/position  "
             f"reduction={sweep['reduction']}",
             f"{'G':>4}  {'channels':>10}  {'connectivity':>12}  regime"]
    for row in sweep["rows"]:
        lines.append(f"{row['groups']:>4}  {row['channels']:>10.2f}  "
                     f"{row['connectivity']:>12.2f}  {row['regime']}")
    c = sweep["crossing"]
    mark = "" if c["exact"] else " (non-integer)"
    lines.append(f"balance point: G={c['groups']:.4g}, "
                 f"C=E={c['channels']:.4g}{mark}")
    return "\n".join(lines)


def format_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=False)
