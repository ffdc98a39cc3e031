"""Command-line entry points: config -> computation -> report files.

Exit status 0 on success, 2 on validation errors, 3 on computation errors.
"""
from __future__ import annotations

import json
import logging
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import click

from .config import ConfigError, RunConfig, load_config, load_group_file

OUT_ENV = "CUSPFLOW_OUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE = 0, 2, 3
log = logging.getLogger("cuspflow")


# ---------------------------------------------------------------------------
# deterministic output

def _plain(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _emit(obj, indent: int = 0) -> str:
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {_emit(v, indent + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_emit(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + _emit(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return json.dumps(str(obj))
        return format(obj, ".17g")
    return json.dumps(obj)


def dumps(obj) -> str:
    """JSON with sorted keys and floats fixed to 17 significant digits."""
    return _emit(_plain(obj)) + "\n"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format(float(v), ".17g") for v in row))
    write_atomic(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# model construction

class Context:
    def __init__(self, cfg: RunConfig, out: Path, seed: int):
        self.cfg, self.out, self.seed = cfg, out, seed
        self._group = None
        self._system = None
        self._report = None

    def group(self):
        if self._group is None:
            from .examples import GROUPS

            g = self.cfg["group"]
            if g["example"]:
                self._group = GROUPS[g["example"]]()
            elif g["file"]:
                self._group = load_group_file(self.cfg.base_dir / g["file"])
            else:
                raise ConfigError([(0, "group", "this command needs a group (example or file)")])
        return self._group

    def system(self):
        if self._system is None:
            from .examples import SYSTEMS

            name = self.cfg["system"]
            if name is None:
                raise ConfigError([(0, "system", "this command needs a branch system")])
            if name == "coding":
                self._system = self.coding_state().system()
            else:
                self._system = SYSTEMS[name](self.cfg["discretization"]["explicit"])
        return self._system

    def discretization(self, system=None):
        from .spectral import discretize

        d = self.cfg["discretization"]
        system = self.system() if system is None else system
        return discretize(system, d["nodes"], scheme=d["scheme"],
                          truncation_floor=d["truncation_floor"], seed=self.seed)

    def report(self):
        if self._report is None:
            from .spectral import spectral_report

            disc = self.discretization()
            self._report = spectral_report(disc, self.delta(disc))
        return self._report

    def delta(self, disc):
        from .spectral import estimate_delta

        br = self.cfg["spectral"]["bracket"]
        return estimate_delta(disc, tuple(br) if br else None, self.cfg["spectral"]["tol"]).delta

    def params(self):
        from .coding import CodingParams

        c = self.cfg["coding"]
        return CodingParams(eta=c["eta"], max_generation=c["max_generation"],
                            truncation_floor=c["truncation_floor"], delta_hint=c["delta_hint"],
                            explicit_per_family=c["explicit_per_family"], search_depth=c["search_depth"])

    def coding_state(self):
        from .coding import coding_from_dict

        path = self.out / "coding.json"
        if path.exists():
            return coding_from_dict(json.loads(path.read_text()), self.group())
        return build_coding(self)[0].state


def build_coding(ctx: Context):
    """Coding with residual masses from a frozen conformal measure.

    Without a configured branch system the measure comes from the coding's own
    branches (a first pass without masses, then a second pass with them).
    """
    from .coding import ConformalMasses, run_coding
    from .spectral import spectral_report

    group, params = ctx.group(), ctx.params()
    if ctx.cfg["system"] not in (None, "coding"):
        masses = ConformalMasses.from_report(ctx.report())
        source = ctx.cfg["system"]
    else:
        first = run_coding(group, params)
        system = first.state.system()
        disc = ctx.discretization(system)
        masses = ConformalMasses.from_report(spectral_report(disc, ctx.delta(disc)))
        source = "coding"
        return run_coding(group, params, masses, points=first.points), source
    return run_coding(group, params, masses), source


# ---------------------------------------------------------------------------
# commands

def cmd_code_build(ctx: Context) -> dict:
    from .coding import (anchoring_margin, coding_to_dict, contraction_distortion_report,
                         explicit_cell_overlaps, flower_separation)

    result, source = build_coding(ctx)
    st = result.state
    write_atomic(ctx.out / "coding.json", dumps(coding_to_dict(st)))
    write_csv(ctx.out / "residual.csv", ["generation", "residual"],
              list(enumerate(st.residual_measure_series)))
    summary = {"flowers": len(st.flowers), "families": len(st.families),
               "residual_series": st.residual_measure_series, "slope": result.slope,
               "mass_gap": result.mass_gap, "measure_source": source,
               "candidate_points": len(result.points),
               "cell_overlaps": explicit_cell_overlaps(st, seed=ctx.seed),
               "flower_separation_ratio": flower_separation(st),
               "anchoring_margin": anchoring_margin(st), "eta": st.params.eta}
    if st.families:
        cd = contraction_distortion_report(st, strict=False)
        summary.update(lambda_max=cd.lambda_max, C1_max=cd.C1_max,
                       lambda_bound=4 * st.params.eta ** 2)
    return summary


def cmd_delta_estimate(ctx: Context) -> dict:
    from .spectral import estimate_delta, spectral_report

    disc = ctx.discretization()
    br = ctx.cfg["spectral"]["bracket"]
    est = estimate_delta(disc, tuple(br) if br else None, ctx.cfg["spectral"]["tol"])
    rep = spectral_report(disc, est.delta)
    out = rep.to_dict()
    out.update(bracket=list(est.bracket), bisection_steps=est.iterations,
               truncation_shift=est.truncation_shift)
    return out


def _tail_source(ctx: Context):
    if ctx.cfg["group"]["example"] or ctx.cfg["group"]["file"]:
        return ctx.coding_state().system()
    return ctx.system()


def cmd_tail_report(ctx: Context) -> dict:
    from .coding import tail_report

    system = _tail_source(ctx)
    delta = ctx.cfg["tail"]["delta"]
    if delta is None:
        delta = ctx.cfg["coding"]["delta_hint"] if ctx.cfg["system"] is None else ctx.report().delta_estimate
    rep = tail_report(system, ctx.cfg["tail"]["epsilon"], delta)
    write_csv(ctx.out / "tail.csv", ["k", "partial_sum"], list(enumerate(rep.partial_sums, 1)))
    out = rep.to_dict()
    out["delta"] = delta
    del out["partial_sums"]
    out["terms"] = int(rep.terms.size)
    return out


def cmd_uni_check(ctx: Context) -> dict:
    import numpy as np

    from .coding import contraction_distortion_report, uni_search

    system = _tail_source(ctx) if ctx.cfg["system"] is None else ctx.system()
    u = ctx.cfg["uni"]
    box = system.domain
    pts = u["base_points"] or [((box.lo + box.hi) / 2).tolist()]
    res = uni_search(system, u["n0"], np.atleast_2d(np.asarray(pts, float)), u["radius"],
                     directions=u["directions"])
    out = res.to_dict()
    out["certified"] = not hasattr(res, "reason")
    cd = contraction_distortion_report(system, strict=False)
    out.update(lambda_max=cd.lambda_max, C1_max=cd.C1_max)
    return out


def cmd_spectral_scan(ctx: Context) -> dict:
    from .spectral import resonance_scan

    disc = ctx.discretization()
    delta = ctx.delta(disc)
    bs = ctx.cfg.grid("spectral", "b_grid")
    bs = sorted(set([0.0] + [-b for b in bs] + bs))
    scan = resonance_scan(disc, ctx.cfg["spectral"]["sigmas"], bs, delta,
                          threshold=ctx.cfg["spectral"]["threshold"])
    write_csv(ctx.out / "spectral-scan.csv", ["sigma", "b", "spectral_radius", "min_singular"],
              [(p.sigma, p.b, p.spectral_radius, p.min_singular) for p in scan.points])
    out = scan.to_dict()
    out["delta"] = delta
    return out


def cmd_l2_probe(ctx: Context) -> dict:
    import numpy as np

    from .spectral import l2_contraction_probe

    disc = ctx.discretization()
    rep = ctx.report()
    x = disc.nodes[:, 0]
    v = x - float(np.sum(rep.invariant_masses * x) / np.sum(rep.invariant_masses))
    sp = ctx.cfg["spectral"]
    probe = l2_contraction_probe(disc, complex(0.0, sp["probe_b"]), sp["probe_steps"], v,
                                 rep.delta_estimate)
    write_csv(ctx.out / "l2-probe.csv", ["m", "norm2"], list(enumerate(probe.series, 1)))
    return probe.to_dict()


def cmd_mix_estimate(ctx: Context) -> dict:
    from .flow import Suspension, correlation

    system = ctx.system()
    f = ctx.cfg["flow"]
    susp = Suspension(system, f["lambda_minus_radius"])
    series = correlation(susp, ctx.report(), f["observable"], f["observable"],
                         ctx.cfg.grid("flow", "times"), n_samples=f["samples"], seed=ctx.seed)
    write_csv(ctx.out / "correlation.csv", ["t", "rho", "stderr"],
              zip(series.times, series.rho, series.stderr))
    out = series.to_dict()
    for k in ("times", "rho", "stderr"):
        out.pop(k)
    return out


def cmd_orbit_count(ctx: Context) -> dict:
    from .geometry import HalfSpacePoint
    from .group import orbit_growth

    g = ctx.group()
    o = HalfSpacePoint.origin(g.dim)
    res = orbit_growth(g, ctx.cfg["orbit"]["radii"], o, o)
    out = {"radii": res.radii, "counts": res.counts, "slope": res.slope, "intercept": res.intercept}
    if ctx.cfg["system"] is not None:
        out["delta_spectral"] = ctx.report().delta_estimate
    return out


def cmd_measure_diag(ctx: Context) -> dict:
    from .coding import chart_box
    from .group import parabolic_points
    from .spectral import measure_diagnostics

    rep = ctx.report()
    m = ctx.cfg["measure"]
    cusps = []
    if m["cusp_points"] and (ctx.cfg["group"]["example"] or ctx.cfg["group"]["file"]):
        g = ctx.group()
        box = chart_box(g.cusps[0])
        pts = parabolic_points(g, 40, 0.05, cusps=[0])
        pts = [q for q in pts if box.boundary_distance(q.p[None, :])[0] > q.h / 2]
        pts.sort(key=lambda q: -q.h)
        cusps = [(q.p, q.h, q.rank) for q in pts[: m["cusp_points"]]]
    diag = measure_diagnostics(rep, ctx.system().domain, cusps, samples=m["samples"],
                               min_nodes=m["min_nodes"], seed=ctx.seed)
    out = diag.to_dict()
    out["delta"] = rep.delta_estimate
    out["cusps"] = [{"p": p, "h": h, "rank": k} for p, h, k in cusps]
    out["expected_cusp_slopes"] = [2 * rep.delta_estimate - k for _, _, k in cusps]
    return out


COMMANDS = {
    "code-build": cmd_code_build,
    "delta-estimate": cmd_delta_estimate,
    "tail-report": cmd_tail_report,
    "uni-check": cmd_uni_check,
    "spectral-scan": cmd_spectral_scan,
    "l2-probe": cmd_l2_probe,
    "mix-estimate": cmd_mix_estimate,
    "orbit-count": cmd_orbit_count,
    "measure-diag": cmd_measure_diag,
}


def _set_threads(n: int | None) -> None:
    n = n or os.cpu_count() or 1
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def run(command: str, config_path, out: str | None = None, seed: int | None = None,
        threads: int | None = None) -> int:
    """Run one command; returns the exit status and writes <command>.json (or error.json)."""
    _set_threads(threads)
    override = out or os.environ.get(OUT_ENV)
    out_dir = Path(override) if override else None      # known before the config loads
    try:
        cfg = load_config(config_path)
        out_dir = out_dir or Path(cfg["output"]["dir"])
        ctx = Context(cfg, out_dir, cfg["seed"] if seed is None else seed)
        t = time.perf_counter()
        result = COMMANDS[command](ctx)
        result = {"command": command, "config": cfg["name"], "seed": ctx.seed, "result": result}
        write_atomic(out_dir / f"{command}.json", dumps(result))
        log.info("%s finished in %.2f s", command, time.perf_counter() - t)
        return EXIT_OK
    except ConfigError as exc:
        _report_error(out_dir, command, exc, EXIT_CONFIG, exc.problems)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every failure maps to the computation exit code
        log.debug("computation failed", exc_info=True)
        _report_error(out_dir, command, exc, EXIT_COMPUTE)
        return EXIT_COMPUTE


def _report_error(out_dir, command, exc, status, problems=None) -> None:
    doc = {"command": command, "status": status, "error_class": type(exc).__name__,
           "message": str(exc)}
    if problems:
        doc["problems"] = [{"line": ln, "path": p, "message": m} for ln, p, m in problems]
    click.echo(json.dumps(doc, sort_keys=True), err=True)
    if out_dir is not None:
        try:
            write_atomic(Path(out_dir) / "error.json", dumps(doc))
        except OSError:
            pass


# ---------------------------------------------------------------------------
# click wiring

def _common(f):
    f = click.option("--verbose", is_flag=True, help="Log progress to stderr.")(f)
    f = click.option("--threads", type=click.IntRange(min=1), default=None,
                     help="Thread count for linear algebra (default: all cores).")(f)
    f = click.option("--seed", type=click.IntRange(min=0), default=None, help="Override the config seed.")(f)
    f = click.option("--out", type=click.Path(file_okay=False), default=None,
                     help=f"Output directory (overrides ${OUT_ENV} and the config).")(f)
    f = click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True,
                     help="YAML run configuration.")(f)
    return f


@click.group()
def main():
    """Coding, spectral and flow computations for cusped conformal dynamics."""


def _make(name):
    @_common
    def command(config_path, out, seed, threads, verbose):
        logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        sys.exit(run(name, config_path, out, seed, threads))

    command.__doc__ = f"Run {name} and write {name}.json to the output directory."
    return main.command(name)(command)


for _name in COMMANDS:
    _make(_name)


@main.command("validate")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
def validate(config_path):
    """Check a config file against the schema."""
    from .config import validate_config

    problems = validate_config(config_path)
    for p in problems:
        click.echo(p, err=True)
    sys.exit(EXIT_CONFIG if problems else EXIT_OK)


if __name__ == "__main__":
    main()
