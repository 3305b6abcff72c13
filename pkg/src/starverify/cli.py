"""starverify command line: parse | sing | chainrec | periodic | verdict | birkhoff."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig, default_workers, parse_region, parse_vector
from .fieldspec import FieldDomainError, FieldSpecError, load_field, to_text

log = logging.getLogger("starverify")

SCHEMA = 1
EXIT_OK, EXIT_UNDETERMINED, EXIT_INPUT, EXIT_CAP = 0, 1, 2, 3


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# deterministic JSON

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return "null"
        return format(obj, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (list, dict)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = (pad + json.dumps(k) + ": " + _encode(v, indent, level + 1) for k, v in obj.items())
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj, indent: int = 1) -> str:
    """JSON text with every float printed to 17 significant digits."""
    return _encode(_jsonable(obj), indent, 0) + "\n"


def _write(out: Path, name: str, payload) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    p = out / name
    p.write_text(dumps(payload))
    return p


# ---------------------------------------------------------------------------
# shared stages

def _load(cfg: RunConfig):
    path = Path(cfg.spec_path)
    if not path.is_file():
        raise InputError(f"field spec not found: {path}")
    try:
        spec = load_field(path)
    except FieldSpecError as e:
        raise InputError(f"{path}: {e}") from None
    if cfg.region is not None and len(cfg.region) != 2 * spec.dim:
        raise InputError(f"--region gives {len(cfg.region) // 2} axes but the field has dim {spec.dim}")
    return spec


def _records(spec, cfg: RunConfig):
    from .singularity import classify_singularity, find_singularities

    zeros = find_singularities(spec, cfg.bounds())
    recs = []
    for i, z in enumerate(zeros):
        r = classify_singularity(spec, z, check=False)
        r.ident = i
        recs.append(r)
    return recs


def _graph(spec, cfg: RunConfig, recs):
    from .recurrence import GraphOptions, build_box_graph

    opts = GraphOptions(singularities=[r.position for r in recs], max_boxes=cfg.max_boxes)
    return build_box_graph(spec, cfg.bounds(), cfg.depth, tau=cfg.tau, opts=opts)


def _class_info(graph, ci, rows, recs):
    from .recurrence import is_chain_transitive

    cls = graph.box_set(rows)
    inside = [r.ident for r in recs if cls.contains(r.position[None])[0]]
    ctr = cls.centers()
    return {"class": ci, "n_boxes": int(len(rows)), "singularities": inside,
            "chain_transitive": bool(is_chain_transitive(graph, rows)),
            "bbox_lo": ctr.min(axis=0) - cls.width / 2, "bbox_hi": ctr.max(axis=0) + cls.width / 2}


def _header(cmd: str, cfg: RunConfig) -> dict:
    return {"schema": SCHEMA, "command": cmd, "config": cfg.to_json()}


def _map(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# commands

def cmd_parse(cfg: RunConfig):
    spec = _load(cfg)
    payload = _header("parse", cfg)
    payload.update({
        "dim": spec.dim, "names": list(spec.names), "params": spec.params,
        "components": [to_text(c) for c in spec.components],
        "jacobian": [[to_text(e) for e in row] for row in spec.jacobian],
        "canonical": spec.to_text(),
    })
    _write(Path(cfg.out), "parse.json", payload)
    sys.stdout.write(spec.to_text())
    return EXIT_OK, payload


def cmd_sing(cfg: RunConfig):
    spec = _load(cfg)
    recs = _records(spec, cfg)
    # non-hyperbolic zeros are flagged in the record and warned about by classify_singularity
    payload = _header("sing", cfg)
    payload["singularities"] = [dict(id=r.ident, **r.to_json()) for r in recs]
    _write(Path(cfg.out), "singularities.json", payload)
    return EXIT_OK, payload


def cmd_chainrec(cfg: RunConfig):
    from .recurrence import write_boxes_csv, write_classes_csv, write_edges_csv, write_plot_csv

    spec = _load(cfg)
    recs = _records(spec, cfg)
    t0 = time.perf_counter()
    g = _graph(spec, cfg, recs)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_boxes_csv(g, out / "boxes.csv")
    write_edges_csv(g, out / "edges.csv")
    write_classes_csv(g, out / "classes.csv")
    if cfg.plot_data:
        write_plot_csv(g, out / "class_centers.csv")
    payload = _header("chainrec", cfg)
    payload.update({"n_boxes": g.n_boxes, "box_diameter": g.box_diameter,
                    "classes": [_class_info(g, ci, rows, recs) for ci, rows in enumerate(g.classes)]})
    log.info("chainrec: %d classes in %.1fs", len(g.classes), time.perf_counter() - t0)
    _write(out, "summary.json", payload)
    return EXIT_OK, payload


def _write_samples_csv(split, path):
    import csv

    ch = split.chains
    c, k = ch.samples.T
    X, L = ch.pts[c, k], ch.lines[c, k]
    d = X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{i + 1}" for i in range(d)] + [f"L_{i + 1}" for i in range(d)] + ["source"])
        for x, l, tag in zip(X, L, split.tags):
            w.writerow([format(float(v), ".17g") for v in (*x, *l)] + [tag])


def cmd_verdict(cfg: RunConfig):
    from .hyperbolicity import analyze_class

    spec = _load(cfg)
    recs = _records(spec, cfg)
    g = _graph(spec, cfg, recs)
    out = Path(cfg.out)

    def run(item):
        ci, rows = item
        t0 = time.perf_counter()
        rep = analyze_class(spec, g.box_set(rows), recs, T=cfg.horizon, samples=cfg.samples, seed=cfg.seed,
                            swap_sides=cfg.swap_sides)
        return ci, rows, rep, time.perf_counter() - t0

    results = _map(run, list(enumerate(g.classes)), cfg.workers)
    classes = []
    undetermined = False
    for ci, rows, rep, dt in results:
        info = _class_info(g, ci, rows, recs)
        info["report"] = rep.to_json()
        classes.append(info)
        undetermined |= rep.verdict == "Undetermined"
        log.info("class %d: %s (%.1fs)", ci, rep.label, dt)
        if cfg.plot_data and rep.split is not None:
            out.mkdir(parents=True, exist_ok=True)
            _write_samples_csv(rep.split, out / f"extended_class{ci}.csv")
    payload = _header("verdict", cfg)
    payload["convention"] = "swapped" if cfg.swap_sides else "literal"
    payload["classes"] = classes
    _write(out, "report.json", payload)
    return (EXIT_UNDETERMINED if undetermined or not classes else EXIT_OK), payload


def cmd_periodic(cfg: RunConfig):
    from .flow import NonTransversalCrossing, NoReturnError, Section, NewtonDivergence, find_periodic_orbit
    from .hyperbolicity import check_periodic_uniform_hyp

    spec = _load(cfg)
    if cfg.point is None or cfg.section is None:
        raise InputError("periodic needs --point (shooting seed) and --section (normal of the section through it)")
    if len(cfg.point) != spec.dim or len(cfg.section) != spec.dim:
        raise InputError(f"--point and --section need {spec.dim} components")
    try:
        orbit = find_periodic_orbit(spec, cfg.point, Section(tuple(cfg.section), tuple(cfg.point)))
    except (NoReturnError, NonTransversalCrossing, NewtonDivergence) as e:
        raise InputError(f"no periodic orbit from --point: {e}") from None
    T = cfg.tau if orbit.period > cfg.tau else orbit.period / 2
    rep = check_periodic_uniform_hyp(spec, orbit, T=T)
    payload = _header("periodic", cfg)
    payload["orbit"] = {"seed": orbit.seed, "period": orbit.period, "multipliers": orbit.multipliers,
                        "floquet_exponents": orbit.floquet_exponents, "index": orbit.stable_index,
                        "hyperbolic": orbit.hyperbolic, "residual": orbit.residual}
    payload["report"] = rep.to_json()
    _write(Path(cfg.out), "periodic.json", payload)
    return (EXIT_OK if rep.passed else EXIT_UNDETERMINED), payload


def cmd_birkhoff(cfg: RunConfig, max_starts: int = 200):
    from .bundle import CocycleConfig
    from .hyperbolicity import analyze_class, birkhoff_batch

    spec = _load(cfg)
    recs = _records(spec, cfg)
    g = _graph(spec, cfg, recs)
    ccfg = CocycleConfig.from_records(recs, swap_sides=cfg.swap_sides)

    def run(item):
        ci, rows = item
        cls = g.box_set(rows)
        rep = analyze_class(spec, cls, recs, T=cfg.horizon, samples=cfg.samples, seed=cfg.seed,
                            swap_sides=cfg.swap_sides)
        info = _class_info(g, ci, rows, recs)
        split = rep.split
        if split is None or split.E.shape[2] == 0:
            info["birkhoff"] = None
            return info
        c, k = split.chains.samples.T
        sel = np.flatnonzero(np.array(split.tags) == "lift")[:max_starts]
        vals = birkhoff_batch(spec, ccfg, split.chains.pts[c, k][sel], split.chains.lines[c, k][sel],
                              split.ambient("E")[sel], 1.0, cfg.windows, "minus", cls.grown(1), on_escape="nan")
        fin = vals[np.isfinite(vals)]
        info["birkhoff"] = {
            "s": split.s, "T": 1.0, "n": cfg.windows, "n_starts": int(sel.size), "n_escaped": int(sel.size - fin.size),
            "fraction_negative": float(np.mean(vals < 0)) if sel.size else None,
            "max": float(fin.max()) if fin.size else None, "median": float(np.median(fin)) if fin.size else None,
            "values": vals,
        }
        return info

    payload = _header("birkhoff", cfg)
    payload["convention"] = ccfg.convention
    payload["classes"] = _map(run, list(enumerate(g.classes)), cfg.workers)
    _write(Path(cfg.out), "birkhoff.json", payload)
    return EXIT_OK, payload


COMMANDS = {"parse": cmd_parse, "sing": cmd_sing, "chainrec": cmd_chainrec, "periodic": cmd_periodic,
            "verdict": cmd_verdict, "birkhoff": cmd_birkhoff}


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="starverify", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("spec", help="field spec file")
    p.add_argument("--region", help="lo1,hi1,lo2,hi2,... bounds per axis")
    p.add_argument("--depth", type=int, default=7)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--horizon", type=float, default=5.0)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--swap-cocycle-sides", action="store_true")
    p.add_argument("--workers", type=int, default=None, help="default: $STARVERIFY_WORKERS or 1")
    p.add_argument("--out", default="starverify-out")
    p.add_argument("--plot-data", action="store_true")
    p.add_argument("--max-boxes", type=int, default=2_000_000, help="box-count cap for the cover")
    p.add_argument("--point", help="periodic: shooting seed x1,x2,...")
    p.add_argument("--section", help="periodic: section normal n1,n2,... through --point")
    p.add_argument("--windows", type=int, default=50, help="birkhoff: number of unit windows")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(a) -> RunConfig:
    region = None
    if a.region is not None:
        lo, hi = parse_region(a.region)
        region = [float(v) for pair in zip(lo, hi) for v in pair]
    return RunConfig(
        spec_path=a.spec, region=region, depth=a.depth, tau=a.tau, horizon=a.horizon, samples=a.samples,
        seed=a.seed, swap_sides=a.swap_cocycle_sides,
        workers=a.workers if a.workers is not None else default_workers(), out=a.out, plot_data=a.plot_data,
        point=parse_vector(a.point) if a.point else None, section=parse_vector(a.section) if a.section else None,
        windows=a.windows, max_boxes=a.max_boxes,
    )


_VECTOR_FLAGS = ("--region", "--point", "--section")


def _glue_vectors(argv):
    # "--region -30,30,..." would be read as an option; glue it to its flag
    out, it = [], iter(argv)
    for tok in it:
        if tok in _VECTOR_FLAGS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    from .recurrence import ResourceCapExceeded, max_depth_for

    argv = sys.argv[1:] if argv is None else list(argv)
    a = build_parser().parse_args(_glue_vectors(argv))
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(a)
        if cfg.depth < 1 or cfg.tau < 1 or cfg.horizon <= 0 or cfg.samples < 1 or cfg.workers < 1:
            raise InputError("need depth >= 1, tau >= 1, horizon > 0, samples >= 1, workers >= 1")
        if a.command not in ("parse", "periodic") and cfg.region is None:
            raise InputError(f"{a.command} needs --region")
        code, _ = COMMANDS[a.command](cfg)
    except (InputError, ValueError, FieldDomainError) as e:
        print(f"starverify: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ResourceCapExceeded as e:
        print(f"starverify: {e}; suggested --depth {e.depth_fit}", file=sys.stderr)
        return EXIT_CAP
    except MemoryError:
        d = len(cfg.region) // 2 if cfg.region else 3
        print(f"starverify: out of memory; suggested --depth {max_depth_for(d, cfg.max_boxes)}", file=sys.stderr)
        return EXIT_CAP
    return code


if __name__ == "__main__":
    sys.exit(main())
