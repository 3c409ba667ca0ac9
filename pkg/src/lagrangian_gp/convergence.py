"""Empirical convergence checks on nested training sets.

Models conditioned on growing prefixes of one stencil stream should have
nondecreasing RKHS norms and posterior means approaching the largest model in a
sampled C^1 distance.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .density import DEL_TERMS, Density, del_operator
from .gp import TrainedModel, dedup_stencils, fit, posterior_density, rkhs_norm
from .kernels import KernelParams
from .mesh import StencilData, stencil_array

NORM_SLACK = 1e-8


@dataclass
class ConvergenceReport:
    sizes: list
    rkhs_norms: list
    c1_distances_to_final: list
    max_del_residual_on_holdout: list
    jitter: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.sizes)
        if not (len(self.rkhs_norms) == len(self.c1_distances_to_final)
                == len(self.max_del_residual_on_holdout) == n):
            raise ValueError("report lists must have equal length")

    def norms_monotone(self, slack: float = NORM_SLACK) -> bool:
        return all(b >= a - slack for a, b in zip(self.rkhs_norms, self.rkhs_norms[1:]))

    def to_dict(self) -> dict:
        out = asdict(self)
        # JSON has no NaN; a missing holdout residual is written as null
        out["max_del_residual_on_holdout"] = [None if np.isnan(v) else v
                                              for v in self.max_del_residual_on_holdout]
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ConvergenceReport":
        keys = ("sizes", "rkhs_norms", "c1_distances_to_final", "max_del_residual_on_holdout")
        for key in keys:
            if key not in obj:
                raise ValueError(f"report is missing key {key!r}")
        vals = {k: list(obj[k]) for k in keys}
        vals["max_del_residual_on_holdout"] = [float("nan") if v is None else float(v)
                                               for v in vals["max_del_residual_on_holdout"]]
        return cls(**vals, jitter=float(obj.get("jitter", 0.0)),
                   meta=dict(obj.get("meta", {})))

    def table(self) -> str:
        lines = [f"{'size':>6} {'rkhs_norm':>14} {'c1_to_final':>12} {'holdout_del':>12}"]
        for row in zip(self.sizes, self.rkhs_norms, self.c1_distances_to_final,
                       self.max_del_residual_on_holdout):
            lines.append("{:>6d} {:>14.8f} {:>12.4e} {:>12.4e}".format(*row))
        return "\n".join(lines)


def save_report(report: ConvergenceReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1) + "\n")


def load_report(path) -> ConvergenceReport:
    return ConvergenceReport.from_dict(json.loads(Path(path).read_text()))


def nested_fits(stream, base: StencilData | None, p_b=1.0, c_b: float = 1.0,
                kernel: KernelParams = KernelParams(), sizes=(), jitter: float | None = None,
                kind: str | None = None) -> list[TrainedModel]:
    """Models conditioned on the first ``sizes[k]`` stencils of ``stream``.

    All models share one jitter: the one ``fit`` settles on for the largest
    prefix (or ``jitter`` if given). With a common jitter the RKHS norms are
    exactly monotone in the prefix length.
    """
    kind = kind or (base.kind if base is not None else None)
    arr = stencil_array(stream, kind)
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise ValueError("sizes must be nonempty")
    if any(b < a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be nondecreasing")
    if sizes[0] < 0 or sizes[-1] > arr.shape[0]:
        raise ValueError(f"sizes must lie in [0, {arr.shape[0]}], the stream length")
    final = fit(arr[:sizes[-1]], base, p_b, c_b, kernel, jitter, kind)
    models = []
    for n in sizes[:-1]:
        models.append(fit(arr[:n], base, p_b, c_b, kernel, final.jitter, kind))
    return models + [final]


def stencil_probes(stencils, kind: str | None = None) -> np.ndarray:
    """Density inputs (all DEL sub-tuples) of the given stencils, ``(P, n_slots, d)``."""
    arr = stencil_array(stencils, kind)
    if kind is None:
        kind = {7: "three_point", 9: "four_point"}[arr.shape[1]]
    subs = [arr[:, list(sub)] for _, _, sub in DEL_TERMS[kind]]
    return dedup_stencils(np.concatenate(subs))


def c1_distance(a: Density, b: Density, probes) -> float:
    """Sampled ``C^1`` distance: ``max |a - b| + max |grad a - grad b|`` over ``probes``."""
    x = np.asarray(probes, dtype=float)
    if x.size == 0:
        return 0.0
    x = x.reshape(x.shape[0], -1)
    value = np.max(np.abs(a.eval(x) - b.eval(x)))
    slope = np.max(np.abs(a.grad(x) - b.grad(x)))
    return float(value + slope)


def convergence_report(models, final: TrainedModel | None = None, probes=None,
                       holdout=None) -> ConvergenceReport:
    """Norms, distances to ``final`` (default: last model) and held-out DEL residuals."""
    models = list(models)
    final = final if final is not None else models[-1]
    kind = final.kind
    if probes is None:
        probes = stencil_probes(final.stencils, kind)
    Lf = posterior_density(final)
    norms, dists, hold = [], [], []
    for m in models:
        L = posterior_density(m)
        norms.append(rkhs_norm(m))
        dists.append(0.0 if m is final else c1_distance(L, Lf, probes))
        if holdout is not None and len(holdout):
            hold.append(float(np.max(np.abs(del_operator(L, stencil_array(holdout, kind))))))
        else:
            hold.append(float("nan"))
    return ConvergenceReport([int(m.M) for m in models], norms, dists, hold, jitter=final.jitter)


__all__ = ["ConvergenceReport", "NORM_SLACK", "nested_fits", "stencil_probes", "c1_distance",
           "convergence_report", "save_report", "load_report"]
