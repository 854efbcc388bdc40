"""Closed-form cost predictions and measured-vs-predicted reporting.

The closed forms predict, from the model shape (p, q, b, d) alone, how
many of each primitive operation one full evaluation takes and how deep
its product chain gets.  `build_report` checks a measured run against
them: a few relations are exact by construction and asserted; the rest
are reported with their deltas, including the handful of known,
documented divergences (per-plane data encryption, per-level adds, the
accumulation product count, and the comparator's internal op counts).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .runtime import InferenceRun
from .staging import ModelMeta

#: Known measured-vs-predicted divergences, by reported operation.
KNOWN_FLAGS = {
    "encrypt": "data encryption is counted once per bit plane (p), not once",
    "add": "each level contributes b adds (b-1 partial sums + 1 mask), not b+1; "
           "the reshuffle sum contributes q-1, not q; comparator internals differ",
    "const_add": "comparator internals differ from the predicted p",
    "mult": "accumulation uses d-1 products, not 2d-2; comparator internals differ",
}


def ilog2c(n: int) -> int:
    """ceil(lg n) for n >= 1; 0 for n <= 1."""
    return (n - 1).bit_length() if n > 1 else 0


def depth_bound(p: int, d: int) -> int:
    """Product-depth budget for one evaluation: 2*ceil(lg p) + ceil(lg d) + 2."""
    return 2 * ilog2c(p) + ilog2c(d) + 2


def closed_forms(p: int, q: int, b: int, d: int) -> dict:
    """Predicted per-stage and total operation counts for one evaluation."""
    lgp = ilog2c(p)
    return {
        "comparison": {
            "add": 4 * p - 2,
            "const_add": p,
            "mult": p * lgp + 3 * p - 2,
            "depth": 2 * lgp + 1,
        },
        "level": {"rotate": b, "add": b + 1, "mult": b, "depth": 1},
        "accumulation": {"mult": 2 * d - 2 if d else 0, "depth": ilog2c(d)},
        "encrypt_model": p + q + d * (b + 1),
        "encrypt_data": 1,
        "total": {
            "encrypt": 1 + p + q + d * (b + 1),
            "rotate": q + d * b,
            "add": 4 * p - 2 + q + d * (b + 1),
            "const_add": p,
            "mult": p * lgp + 3 * p + q + d * b + 2 * d - 4,
            "depth": depth_bound(p, d),
        },
    }


@dataclass
class CostReport:
    meta: ModelMeta
    rows: list[tuple[str, int, int]] = field(default_factory=list)
    assertions: dict[str, bool] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    depth_measured: int = 0
    depth_bound: int = 0

    def ok(self) -> bool:
        return all(self.assertions.values())

    def to_text(self) -> str:
        m = self.meta
        lines = [f"model p={m.p} q={m.q} b={m.b} d={m.d}"]
        for op, measured, predicted in self.rows:
            lines.append(f"op {op} measured {measured} predicted {predicted} "
                         f"delta {measured - predicted}")
        lines.append(f"depth measured {self.depth_measured} "
                     f"bound {self.depth_bound}")
        for name, passed in self.assertions.items():
            lines.append(f"assert {name} {'ok' if passed else 'FAIL'}")
        for flag in self.flags:
            lines.append(f"note {flag}")
        return "\n".join(lines)


def build_report(meta: ModelMeta, run: InferenceRun) -> CostReport:
    """Compare one measured evaluation against the closed forms."""
    forms = closed_forms(meta.p, meta.q, meta.b, meta.d)
    totals = run.ledger.counts
    measured = {
        "encrypt": totals["encrypt"],
        "rotate": totals["rotate"],
        "add": totals["add"],
        "const_add": totals["const_add"],
        "mult": totals["mult_ct_ct"] + totals["mult_ct_pt"],
    }

    report = CostReport(meta=meta)
    for op in ("encrypt", "rotate", "add", "const_add", "mult"):
        report.rows.append((op, measured[op], forms["total"][op]))
        if measured[op] != forms["total"][op] and op in KNOWN_FLAGS:
            report.flags.append(f"{op}: {KNOWN_FLAGS[op]}")

    report.depth_measured = run.ledger.max_depth_observed
    report.depth_bound = forms["total"]["depth"]
    report.assertions["depth_within_bound"] = (
        report.depth_measured <= report.depth_bound)
    report.assertions["rotate_total_exact"] = (
        measured["rotate"] == forms["total"]["rotate"])

    level_mults = 0
    per_level_ok = True
    for stage in run.level_stages:
        mults = stage["mult_ct_ct"] + stage["mult_ct_pt"]
        level_mults += mults
        if stage["rotate"] != meta.b or mults != meta.b:
            per_level_ok = False
    report.assertions["per_level_rotate_and_mult"] = per_level_ok
    report.assertions["level_total_mult_linear"] = (level_mults == meta.d * meta.b)

    if "accumulation" in run.stages:
        acc = run.stages["accumulation"]
        acc_mults = acc["mult_ct_ct"] + acc["mult_ct_pt"]
        expected = max(meta.d - 1, 0)
        report.assertions["accumulation_mult_d_minus_1"] = (acc_mults == expected)
        predicted_acc = forms["accumulation"]["mult"]
        if acc_mults != predicted_acc:
            report.flags.append(
                f"accumulation: measured {acc_mults} products vs predicted "
                f"{predicted_acc} (balanced pairing needs d-1)")
    return report


# -- scaling-trend checks over model sweeps ------------------------------------


def comparison_constant_in_b(runs: list[InferenceRun]) -> bool:
    """Comparison op counts must not vary across models that differ only in b."""
    def comp_counts(run: InferenceRun) -> tuple[int, ...]:
        stage = run.stages.get("comparison", {})
        return tuple(stage.get(k, 0) for k in
                     ("add", "const_add", "mult_ct_ct", "mult_ct_pt"))

    first = comp_counts(runs[0])
    return all(comp_counts(run) == first for run in runs[1:])


def level_mults_linear_in_b(items: list[tuple[int, int]], tol: int = 1) -> bool:
    """items = (b, total level products); checks |count - slope*b| <= tol."""
    b0, c0 = items[0]
    slope = c0 / b0
    return all(abs(count - slope * b) <= tol for b, count in items)


def comparison_superlinear_in_p(count_p8: int, count_p16: int) -> bool:
    """Doubling the precision must more than double the comparison products."""
    return count_p16 > 2 * count_p8
