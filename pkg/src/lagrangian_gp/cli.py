"""Command-line interface: ``generate``, ``train``, ``predict``, ``uq`` and ``converge``.

Settings come from a JSON config (``--config``) layered over experiment
defaults; command-line flags override both.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .convergence import convergence_report, nested_fits, save_report
from .density import temporal_lagrangian
from .gp import (ConditioningError, fit, load_model, posterior_density, rkhs_norm, save_model,
                 sigma_del_map, training_residuals)
from .integrator import NewtonConfig, NewtonDivergenceError, propagate
from .kernels import KernelParams
from .mesh import (FOUR_POINT, THREE_POINT, FieldFormatError, Mesh, StencilData, field_stencil_array,
                   l2_error, read_field, stencil_length, write_field)
from .reference import SamplerSpec

log = logging.getLogger("lagrangian_gp")

EXPERIMENTS = {
    "wave": {
        "kind": THREE_POINT,
        "mesh": ex.WAVE_MESH.to_dict(),
        "sampler": {"mode": "fourier", "max_mode": ex.WAVE_SAMPLER.max_mode,
                    "amplitude_decay": ex.WAVE_SAMPLER.amplitude_decay,
                    "momentum_scale": ex.WAVE_SAMPLER.momentum_scale,
                    "amplitude": ex.WAVE_SAMPLER.amplitude},
        "n_fields": 2,
        "normalization": {"base": "zero", "p_b": [1.0], "c_b": 1.0},
    },
    "schrodinger": {
        "kind": FOUR_POINT,
        "mesh": ex.SCHRODINGER_MESH.to_dict(),
        "sampler": {"mode": "fourier", "max_mode": ex.SCHRODINGER_SAMPLER.max_mode,
                    "amplitude_decay": ex.SCHRODINGER_SAMPLER.amplitude_decay,
                    "momentum_scale": 1.0, "amplitude": ex.SCHRODINGER_SAMPLER.amplitude},
        "n_fields": 30,
        "normalization": {"base": "zero", "p_b": [1.0, 1.0], "c_b": 1.0},
    },
    "custom": {
        "kind": THREE_POINT,
        "mesh": ex.WAVE_MESH.to_dict(),
        "sampler": {"mode": "fourier", "max_mode": 3, "amplitude_decay": 2.0, "momentum_scale": 1.0,
                    "amplitude": 1.0},
        "n_fields": 0,
        "normalization": {"base": "zero", "p_b": [1.0], "c_b": 1.0},
    },
}
COMMON = {
    "initial": "random",
    "kernel": {"lengthscale": 1.0, "variance": 1.0},
    "newton": {"tol": 1e-10, "max_iter": 50, "line_search": True},
    "predict_newton": {"tol": ex.LEARNED_NEWTON.tol, "max_iter": 50, "line_search": True},
    "jitter": None,
    "seed": 0,
    "out": ".",
    "sizes": [50, 100, 200, 400, 760],
}


class CLIError(RuntimeError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Experiment defaults, then the JSON file at ``path``, then ``overrides``."""
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise CLIError(f"config {path} must contain a JSON object")
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    experiment = overrides.get("experiment", user.get("experiment", "wave"))
    if experiment not in EXPERIMENTS:
        raise CLIError(f"unknown experiment {experiment!r}; expected one of {sorted(EXPERIMENTS)}")
    cfg = _merge(_merge(_merge(COMMON, EXPERIMENTS[experiment]), user), overrides)
    cfg["experiment"] = experiment
    return cfg


def _mesh(cfg) -> Mesh:
    m = cfg["mesh"]
    return Mesh(float(m["dt"]), float(m["dx"]), int(m["nt"]), int(m["nx"]), int(m.get("d", 1)))


def _sampler(cfg) -> SamplerSpec:
    s = cfg["sampler"]
    return SamplerSpec(mode=s.get("mode", "fourier"), max_mode=int(s["max_mode"]),
                       amplitude_decay=float(s["amplitude_decay"]), seed=int(cfg["seed"]),
                       momentum_scale=float(s.get("momentum_scale", 1.0)),
                       amplitude=float(s.get("amplitude", 1.0)))


def _newton(cfg, key="newton") -> NewtonConfig:
    n = cfg[key]
    return NewtonConfig(float(n["tol"]), int(n["max_iter"]), bool(n.get("line_search", True)))


def _kernel(cfg) -> KernelParams:
    return KernelParams(float(cfg["kernel"]["lengthscale"]), float(cfg["kernel"]["variance"]))


def _base(cfg, kind: str, d: int) -> StencilData:
    base = cfg["normalization"].get("base", "zero")
    if base == "zero":
        return StencilData.zeros(kind, d)
    try:
        pts = json.loads(Path(base).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"cannot read base stencil {base}: {exc}") from exc
    if isinstance(pts, dict):
        pts = pts.get("points")
    return StencilData(kind, np.asarray(pts, float).reshape(stencil_length(kind), d))


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands ------------------------------------------------------------

def cmd_generate(cfg) -> int:
    exp = cfg["experiment"]
    if exp == "custom":
        raise CLIError("custom experiments have no reference model; supply field files directly")
    mesh, out = _mesh(cfg), _out_dir(cfg)
    newton = _newton(cfg)
    initial = cfg["initial"]
    if initial == "random":
        rng = np.random.default_rng(int(cfg["seed"]))
        gen = ex.wave_fields if exp == "wave" else ex.schrodinger_fields
        fields = gen(int(cfg["n_fields"]), mesh, _sampler(cfg), rng=rng, cfg=newton)
    elif exp == "wave" and initial == "cosine":
        fields = [ex.cosine_field(mesh, cfg=newton)]
    elif exp == "wave" and initial == "travelling":
        tw = cfg.get("travelling", {})
        fields = [ex.travelling_wave_field(mesh, int(tw.get("k", 1)), float(tw.get("a1", 1.0)),
                                           float(tw.get("a2", 0.0)))]
    else:
        raise CLIError(f"initial data {initial!r} is not available for the {exp} experiment")
    kind = cfg["kind"]
    names, counts = [], []
    for n, f in enumerate(fields):
        name = f"field_{n:03d}.json"
        write_field(f, out / name)
        names.append(name)
        counts.append(int((f.mesh.nt - 2) * f.mesh.nx))
    manifest = {"experiment": exp, "kind": kind, "d": mesh.d, "fields": names,
                "stencil_counts": counts, "total_stencils": int(sum(counts)), "seed": int(cfg["seed"])}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    print(f"wrote {len(names)} fields, {manifest['total_stencils']} {kind} stencils -> {out / 'manifest.json'}")
    return 0


def read_manifest(path):
    """Stencil array, kind and ``d`` of the fields listed in a manifest."""
    path = Path(path)
    try:
        man = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"cannot parse manifest {path}: {exc}") from exc
    if not isinstance(man, dict) or not all(k in man for k in ("kind", "d", "fields")):
        raise CLIError(f"manifest {path} must have keys 'kind', 'd' and 'fields'")
    kind, d = man["kind"], int(man["d"])
    if kind not in (THREE_POINT, FOUR_POINT):
        raise CLIError(f"manifest {path}: unknown stencil kind {kind!r}")
    parts = [np.zeros((0, stencil_length(kind), d))]
    for name in man["fields"]:
        f = read_field(path.parent / name)
        if f.mesh.d != d:
            raise CLIError(f"field {name} has d={f.mesh.d}, manifest says {d}")
        parts.append(field_stencil_array(f, kind))
    return np.concatenate(parts), kind, d


def cmd_train(cfg, manifest) -> int:
    stencils, kind, d = read_manifest(manifest)
    norm = cfg["normalization"]
    p_b = np.broadcast_to(np.asarray(norm["p_b"], float), (d,))
    model = fit(stencils, _base(cfg, kind, d), p_b, float(norm["c_b"]), _kernel(cfg),
                cfg["jitter"], kind)
    out = _out_dir(cfg) / "model.json"
    save_model(model, out)
    res = training_residuals(model)
    print(f"M = {model.M}")
    print(f"jitter = {model.jitter:.3e}")
    print(f"max training DEL residual = {res['del']:.3e}")
    print(f"rkhs_norm = {rkhs_norm(model):.10g}")
    print(f"wrote {out}")
    return 0


def cmd_predict(cfg, model_path, initial, n_steps=None, reference=None) -> int:
    model = load_model(model_path)
    init = read_field(initial)
    if init.mesh.d != model.d:
        raise CLIError(f"initial field has d={init.mesh.d} but the model has d={model.d}")
    ref = read_field(reference) if reference else None
    if n_steps is None:
        n_steps = (ref.mesh.nt if ref is not None else init.mesh.nt) - 2
    mesh = init.mesh.with_nt(n_steps + 2)
    TL = temporal_lagrangian(posterior_density(model), mesh)
    try:
        pred = propagate(TL, init.slice(0), init.slice(1), n_steps, _newton(cfg, "predict_newton"), mesh)
    except NewtonDivergenceError as exc:
        raise CLIError(f"Newton diverged at time level {exc.level}: {exc}") from exc
    out = _out_dir(cfg) / "prediction.json"
    write_field(pred, out)
    for lvl, it in enumerate(pred.meta["newton_iterations"], start=2):
        print(f"level {lvl}: {it} Newton iterations")
    if ref is not None:
        if ref.mesh.shape != pred.mesh.shape:
            raise CLIError(f"reference shape {ref.mesh.shape} differs from prediction {pred.mesh.shape}")
        print(f"l2 error = {l2_error(pred, ref):.6e}")
    print(f"wrote {out}")
    return 0


def write_sigma_csv(unc, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "component", "sigma"])
        for i, j, r, s in unc.rows():
            w.writerow([i, j, r, repr(s)])


def read_sigma_csv(path) -> list[tuple[int, int, int, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["i", "j", "component", "sigma"]:
        raise ValueError(f"{path}: expected header i,j,component,sigma")
    return [(int(i), int(j), int(r), float(s)) for i, j, r, s in rows[1:]]


def cmd_uq(cfg, model_path, field_path) -> int:
    model = load_model(model_path)
    f = read_field(field_path)
    if f.mesh.d != model.d:
        raise CLIError(f"field has d={f.mesh.d} but the model has d={model.d}")
    if f.mesh.nt < 3:
        raise CLIError("field needs at least three time levels")
    unc = sigma_del_map(model, f)
    out = _out_dir(cfg) / "sigma.csv"
    write_sigma_csv(unc, out)
    print(f"max sigma = {unc.sigma.max():.6e}")
    print(f"wrote {out}")
    return 0


def cmd_converge(cfg, manifest, holdout=None) -> int:
    stencils, kind, d = read_manifest(manifest)
    sizes = [int(s) for s in cfg["sizes"]]
    if sizes and max(sizes) > stencils.shape[0]:
        raise CLIError(f"sizes up to {max(sizes)} exceed the {stencils.shape[0]} stencils in the manifest")
    # one fixed, seeded order of the stencil stream
    order = np.random.default_rng(int(cfg["seed"])).permutation(stencils.shape[0])
    norm = cfg["normalization"]
    p_b = np.broadcast_to(np.asarray(norm["p_b"], float), (d,))
    try:
        models = nested_fits(stencils[order], _base(cfg, kind, d), p_b, float(norm["c_b"]),
                             _kernel(cfg), sizes, cfg["jitter"], kind)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    hold = field_stencil_array(read_field(holdout), kind) if holdout else None
    report = convergence_report(models, holdout=hold)
    report.meta = {"seed": int(cfg["seed"]), "kind": kind}
    out = _out_dir(cfg) / "report.json"
    save_report(report, out)
    print(report.table())
    print(f"wrote {out}")
    return 0


# --- entry point ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--experiment", choices=sorted(EXPERIMENTS))
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lagrangian-gp",
                                description="Learn discrete Lagrangian densities from field data.")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", parents=[common], help="generate reference fields and a manifest")
    g.add_argument("--n-fields", type=int)
    g.add_argument("--initial", choices=["random", "cosine", "travelling"])
    g.add_argument("--nt", type=int, help="number of time levels (overrides config)")
    t = sub.add_parser("train", parents=[common], help="fit a model to the fields of a manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--jitter", type=float)
    pr = sub.add_parser("predict", parents=[common], help="propagate initial slices with a model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--initial", required=True, help="field file; its first two levels are used")
    pr.add_argument("--n-steps", type=int)
    pr.add_argument("--reference", help="field file to compare against")
    u = sub.add_parser("uq", parents=[common], help="posterior standard deviation of DEL on a field")
    u.add_argument("--model", required=True)
    u.add_argument("--field", required=True)
    c = sub.add_parser("converge", parents=[common], help="nested-fit convergence study")
    c.add_argument("--manifest", required=True)
    c.add_argument("--sizes", help="comma-separated prefix sizes")
    c.add_argument("--holdout", help="field file with held-out stencils")
    c.add_argument("--jitter", type=float)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    overrides = {"experiment": args.experiment, "seed": args.seed, "out": args.out}
    if args.command == "generate":
        overrides.update({"n_fields": args.n_fields, "initial": args.initial})
    if getattr(args, "jitter", None) is not None:
        overrides["jitter"] = args.jitter
    if getattr(args, "sizes", None):
        overrides["sizes"] = [int(s) for s in args.sizes.split(",")]
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "generate":
            if args.nt is not None:
                cfg["mesh"]["nt"] = args.nt
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.manifest)
        if args.command == "predict":
            return cmd_predict(cfg, args.model, args.initial, args.n_steps, args.reference)
        if args.command == "uq":
            return cmd_uq(cfg, args.model, args.field)
        return cmd_converge(cfg, args.manifest, args.holdout)
    except (CLIError, FieldFormatError, NewtonDivergenceError, ConditioningError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
