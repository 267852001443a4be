"""Command line front door.

Subcommands: analyze, generate, validate-whitney, tree, transport.  Every
subcommand reads an optional JSON config (``--config``), accepts a few
overrides, writes deterministic outputs under ``--out`` and prints a JSON
summary.  Failures print ``{"error": ...}`` and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .coefficients import KINDS, SearchConfig, square_function
from .graph import graph_from_spec, make_cube
from .measure import DiscreteMeasure, MeasureFormatError
from .transport import wasserstein
from .whitney import build_whitney, validate_whitney
from .zoo import GeneratorSpec, InvalidSpec, generate


class ConfigError(ValueError):
    pass


# input handling ------------------------------------------------------------

def load_measure(path) -> DiscreteMeasure:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"input file {str(path)!r} does not exist")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return DiscreteMeasure.from_json(text)
    return DiscreteMeasure.from_csv(text)


def resolve_input(spec, base: Path | None = None):
    """A path (relative to the config) or an inline generator spec."""
    if isinstance(spec, dict):
        gen = generate(spec)
        return gen.measure, gen.metadata
    if isinstance(spec, str):
        p = Path(spec)
        if base is not None and not p.is_absolute():
            p = base / p
        return load_measure(p), {"path": str(spec)}
    raise ConfigError("input must be a path or a generator spec")


def parse_kind(item):
    """'alpha2', 'beta1', {'kind': 'alpha', 'p': 1} -> (kind, p, label)."""
    if isinstance(item, dict):
        kind, p = item.get("kind"), int(item.get("p", 2))
    else:
        m = re.fullmatch(r"([a-z_]+?)([12])?", str(item))
        if not m:
            raise ConfigError(f"bad coefficient kind {item!r}")
        kind, p = m.group(1), int(m.group(2) or 2)
        if kind == "bilateral_beta":
            kind = "bilateral_beta2"
    if kind not in KINDS:
        raise ConfigError(f"unknown coefficient kind {kind!r}; expected one of {KINDS}")
    label = kind if kind in ("bilateral_beta2", "delta", "tolsa_alpha", "alpha_hat") else f"{kind}{p}"
    return kind, p, label


@dataclass
class AnalysisConfig:
    input: object = None
    centers: object = field(default_factory=lambda: {"sample": 1, "seed": 0})
    r0: float = 1.0
    depth: int = 6
    kinds: list = field(default_factory=lambda: ["alpha2"])
    n: int = 1
    solver: str = "exact"
    epsilon: float = 1e-3
    search: dict = field(default_factory=dict)
    tree: dict | None = None
    out: str = "out"
    threads: int = 1
    base: Path | None = None

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "AnalysisConfig":
        known = {f.name for f in fields(cls)} | {"scales"}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        scales = data.get("scales")
        data = dict(data)
        if scales:
            data.pop("scales")
            data.setdefault("r0", scales.get("r0", 1.0))
            data.setdefault("depth", scales.get("depth", 6))
        cfg = cls(**{k: v for k, v in data.items() if k != "scales"}, base=base)
        cfg.validate()
        return cfg

    def validate(self):
        if self.input is None:
            raise ConfigError("config needs an 'input'")
        if not (self.r0 > 0):
            raise ConfigError("r0 must be positive")
        if int(self.depth) < 1:
            raise ConfigError("depth must be >= 1")
        if isinstance(self.input, str):
            p = Path(self.input)
            if self.base is not None and not p.is_absolute():
                p = self.base / p
            if not p.exists():
                raise ConfigError(f"input file {str(self.input)!r} does not exist")
        for item in self.kinds:
            parse_kind(item)

    def search_config(self) -> SearchConfig:
        return SearchConfig(solver=self.solver, epsilon=self.epsilon, **self.search)


def choose_centers(mu: DiscreteMeasure, spec) -> np.ndarray:
    if isinstance(spec, dict):
        count = int(spec.get("sample", 1))
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        if len(mu) == 0:
            raise ConfigError("cannot sample centers from an empty measure")
        idx = np.sort(rng.choice(len(mu), size=min(count, len(mu)), replace=False))
        return mu.points[idx]
    arr = np.atleast_2d(np.asarray(spec, float))
    if arr.shape[1] != mu.dim:
        raise ConfigError("center dimension does not match the measure")
    return arr


def growth_slope(partials) -> float | None:
    """Least-squares slope of the partial sums against the level index,
    over the second half of the levels."""
    y = np.asarray(partials, float)
    if len(y) < 2:
        return None
    k = np.arange(len(y))
    half = len(y) // 2
    k, y = k[half:], y[half:]
    if len(y) < 2:
        return None
    return float(np.polyfit(k, y, 1)[0])


def _stats(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return {"median": None, "max": None}
    return {"median": float(np.median(vals)), "max": float(np.max(vals))}


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def run_analysis(cfg: AnalysisConfig) -> dict:
    mu, meta = resolve_input(cfg.input, cfg.base)
    centers = choose_centers(mu, cfg.centers)
    search = cfg.search_config()
    out = Path(cfg.out)
    kinds = [parse_kind(k) for k in cfg.kinds]
    jobs = [(i, c, kind) for i, c in enumerate(centers) for kind in kinds]

    def work(job):
        i, c, (kind, p, label) = job
        try:
            prof = square_function(mu, c, cfg.r0, int(cfg.depth), kind, cfg.n, p, search,
                                   reference=mu if kind == "alpha_hat" else None)
            return i, label, prof, None
        except Exception as exc:  # recorded per center, never aborts the batch
            return i, label, None, f"{type(exc).__name__}: {exc}"

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=int(cfg.threads)) as ex:
            results = list(ex.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    summary = {"input": meta, "centers": centers.tolist(), "r0": cfg.r0, "depth": int(cfg.depth),
               "kinds": {}, "failures": []}
    per_kind = {}
    for i, label, prof, err in results:
        if err is not None:
            summary["failures"].append({"center": i, "kind": label, "error": err})
            continue
        stem = f"center{i:03d}_{label}"
        _write(out / "profiles" / f"{stem}.csv", prof.to_csv())
        _write(out / "profiles" / f"{stem}.json", _dump(prof.to_dict()))
        _write(out / "plots" / f"{stem}.dat", prof.plot_data())
        row = per_kind.setdefault(label, {"sums": [], "slopes": [], "undefined": 0})
        row["sums"].append(prof.partial_sums[-1])
        row["slopes"].append(growth_slope(prof.partial_sums))
        row["undefined"] += sum(v is None for v in prof.values)
    for label, row in sorted(per_kind.items()):
        summary["kinds"][label] = {"square_sum": _stats(row["sums"]), "growth_slope": _stats(row["slopes"]),
                                   "undefined_values": row["undefined"]}
    if cfg.tree:
        summary["tree"] = run_tree_section(mu, cfg.tree, out)
    _write(out / "summary.json", _dump(summary))
    return summary


# tree --------------------------------------------------------------------------

def run_tree_section(mu: DiscreteMeasure, tcfg: dict, out: Path) -> dict:
    from itertools import product

    from .approximation import approx_measure
    from .trees import sweep_M

    graph = graph_from_spec(tcfg.get("graph", {"family": "flat"}))
    root = tcfg.get("root", {"level": 0, "index": [0] * graph.n})
    R = make_cube(graph, int(root["level"]), root["index"], 0)
    lam = float(tcfg.get("lambda", 4.0))
    depth = int(tcfg.get("depth", 8))
    eps = float(tcfg.get("eps", 0.1))
    Ms = tcfg.get("M")
    Ms = [float(Ms)] if isinstance(Ms, (int, float)) else [float(m) for m in (Ms or [10, 100, 1000])]
    nus = {e: approx_measure(mu, graph, e) for e in product((0, 1), repeat=graph.n)}
    rows, chosen, results = sweep_M(mu, nus, graph, R, Ms, lam, depth, eps)
    pick = chosen if chosen is not None else Ms[-1]
    res = results[pick]
    doc = {"sweep": [r.__dict__ for r in rows], "chosen_M": chosen, "tree": res.tree.to_dict(),
           "stop_mass": rows[Ms.index(pick)].stop_mass}
    _write(out / "tree.json", _dump(doc))
    return {"sweep": doc["sweep"], "chosen_M": chosen, "members": len(res.tree.members),
            "stops": len(res.tree.stops)}


# subcommands -------------------------------------------------------------------

def _load_config(path) -> tuple:
    if path is None:
        return {}, None
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    try:
        return json.loads(p.read_text()), p.parent
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None


def cmd_analyze(args) -> dict:
    data, base = _load_config(args.config)
    if args.input:
        data["input"] = args.input
        base = None
    for name in ("r0", "depth", "n"):
        v = getattr(args, name)
        if v is not None:
            data[name] = v
    if args.kinds:
        data["kinds"] = args.kinds.split(",")
    if args.centers is not None:
        data["centers"] = {"sample": args.centers, "seed": args.seed}
    data["out"] = args.out
    data["threads"] = args.threads
    cfg = AnalysisConfig.from_dict(data, base)
    return run_analysis(cfg)


def cmd_generate(args) -> dict:
    data, _ = _load_config(args.config)
    if args.kind:
        data["kind"] = args.kind
    if args.seed is not None:
        data["seed"] = args.seed
    spec = GeneratorSpec.from_dict(data)
    gen = generate(spec)
    out = Path(args.out)
    fmt = args.format
    name = f"measure.{fmt}"
    _write(out / name, gen.measure.to_csv() if fmt == "csv" else gen.measure.to_json() + "\n")
    _write(out / "metadata.json", _dump({"spec": spec.to_dict(), "metadata": gen.metadata}))
    return {"measure": str(out / name), "atoms": len(gen.measure), "mass": gen.measure.mass}


def cmd_validate_whitney(args) -> dict:
    data, _ = _load_config(args.config)
    graph = graph_from_spec(data.get("graph", {"family": "random", "seed": 0}))
    box = data.get("box", [[-1.0] * graph.d, [1.0] * graph.d])
    kw = {k: data[k] for k in ("c", "K", "floor_level") if k in data}
    W = build_whitney(graph, box[0], box[1], data.get("shift", 0), **kw)
    rep = validate_whitney(W, graph, samples=int(data.get("samples", 1000)), seed=int(data.get("seed", 0)))
    out = Path(args.out)
    _write(out / "whitney_report.json", _dump(rep.to_dict()))
    if data.get("dump_cubes", False):
        _write(out / "whitney_cubes.json", W.to_json() + "\n")
    return rep.to_dict()


def cmd_tree(args) -> dict:
    data, base = _load_config(args.config)
    if "input" not in data:
        raise ConfigError("tree config needs an 'input'")
    mu, _ = resolve_input(data["input"], base)
    return run_tree_section(mu, data, Path(args.out))


def cmd_transport(args) -> dict:
    mu = load_measure(args.first)
    nu = load_measure(args.second)
    kw = {}
    if args.solver in ("exact", "entropic"):
        kw["rescale"] = args.rescale
    if args.solver == "entropic":
        kw["epsilon"] = args.epsilon
    res = wasserstein(mu, nu, args.p, solver=args.solver, **kw)
    doc = json.loads(res.to_json())
    if args.out:
        _write(Path(args.out) / "transport.json", _dump(doc))
    return {"distance": res.distance, "solver": res.solver, "p": args.p}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flatness", description="Multiscale flatness coefficients of discrete measures.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common], help="coefficient profiles and square sums")
    a.add_argument("--input", help="measure file (overrides config)")
    a.add_argument("--kinds", help="comma separated, e.g. alpha2,beta1")
    a.add_argument("--r0", type=float)
    a.add_argument("--depth", type=int)
    a.add_argument("--n", type=int)
    a.add_argument("--centers", type=int, help="number of atoms sampled as centers")
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_analyze)

    g = sub.add_parser("generate", parents=[common], help="write a zoo measure")
    g.add_argument("--kind")
    g.add_argument("--seed", type=int)
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    g.set_defaults(func=cmd_generate)

    w = sub.add_parser("validate-whitney", parents=[common], help="build and audit a Whitney decomposition")
    w.set_defaults(func=cmd_validate_whitney)

    t = sub.add_parser("tree", parents=[common], help="stopping-time tree with an M sweep")
    t.set_defaults(func=cmd_tree)

    tr = sub.add_parser("transport", parents=[common], help="W_p between two measure files")
    tr.add_argument("first")
    tr.add_argument("second")
    tr.add_argument("--p", type=int, choices=(1, 2), default=2)
    tr.add_argument("--solver", choices=("exact", "entropic", "oracle"), default="exact")
    tr.add_argument("--epsilon", type=float, default=1e-2)
    tr.add_argument("--rescale", action="store_true")
    tr.set_defaults(func=cmd_transport, out=None)
    return ap


def error_document(exc: Exception) -> dict:
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, MeasureFormatError):
        doc["row"] = exc.row
        doc["message"] = exc.reason
    return doc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except (ConfigError, InvalidSpec, MeasureFormatError, ValueError, KeyError, OSError) as exc:
        print(json.dumps(error_document(exc), sort_keys=True))
        return 2
    print(json.dumps(result, sort_keys=True, default=_jsonable))
    return 0


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return None
    raise TypeError(type(obj).__name__)


if __name__ == "__main__":
    sys.exit(main())
