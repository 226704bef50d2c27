"""Command line entry point: ``chlimit CONFIG [COMMAND] [--assert] [--jobs N] [--out PATH]``.

The config is YAML.  Schema (every key optional unless the command needs it)::

    command: sweep-eps        # solve | sweep-eps | sweep-lambda | sweep-kappa
                              # | audit | graph-table | uniqueness
    seed: 0
    output: results.csv
    scenario: {id: S1, kappa: 1.0}
    graph: {id: "porous:2"}   # overrides the scenario graph
                              # graph-table: ids: [...], r_values: [...]
    mesh: {n_cells: 64}
    time: {tau: 1.0e-3, T: 0.1}
    sweep:
      scheme: ch              # solve only: ch | robin | neumann
      eps: 0.01
      lambda: 1.0e-4
      eps_list: [0.1, 0.01, 0.001]
      lambda_list: [1.0e-2, 1.0e-3, 1.0e-4]
      lambda_list_b: [3.0e-4, 3.0e-5]   # uniqueness: second path
      kappa_list: [0.2, 0.1, 0.05]

Lists may also be written as comma separated strings.  Exit codes: 0 ok,
1 configuration error, 2 solver failure, 3 threshold violation (``--assert``).
"""

from __future__ import annotations

import argparse
import io
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import analysis, experiments, fem, graphs, solver

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_THRESHOLD = 0, 1, 2, 3

COMMANDS = ("solve", "sweep-eps", "sweep-lambda", "sweep-kappa", "audit", "graph-table", "uniqueness")
GRAPH_TABLE_HEADER = ("graph", "lambda", "r", "resolvent", "yosida", "moreau_yosida", "hat_beta")
UNIQUENESS_HEADER = ("quantity", "value")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    scenario: str = "S1"
    kappa: float | None = None
    graph: str | None = None
    graph_ids: list = field(default_factory=list)
    r_values: list = field(default_factory=lambda: [-2.0, -0.5, 0.0, 0.5, 2.0])
    n_cells: int = 64
    tau: float = 1e-3
    T: float = 0.1
    scheme: str = "ch"
    eps: float | None = None
    lam: float | None = None
    eps_list: list = field(default_factory=list)
    lambda_list: list = field(default_factory=list)
    lambda_list_b: list = field(default_factory=list)
    kappa_list: list = field(default_factory=list)
    output: str | None = None
    seed: int = 0

    def scenario_obj(self) -> experiments.Scenario:
        sc = experiments.get_scenario(self.scenario)
        if self.graph:
            sc = sc.with_graph(graphs.parse_graph(self.graph))
        if self.kappa is not None:
            sc = sc.with_kappa(self.kappa)
        return sc

    def disc(self) -> experiments.Discretization:
        return experiments.Discretization(self.n_cells, self.tau, self.T)


# -- parsing -----------------------------------------------------------------

_SECTIONS = {
    "scenario": {"id": "scenario", "kappa": "kappa"},
    "graph": {"id": "graph", "ids": "graph_ids", "r_values": "r_values"},
    "mesh": {"n_cells": "n_cells"},
    "time": {"tau": "tau", "T": "T"},
    "sweep": {
        "scheme": "scheme", "eps": "eps", "lambda": "lam", "eps_list": "eps_list",
        "lambda_list": "lambda_list", "lambda_list_b": "lambda_list_b", "kappa_list": "kappa_list",
    },
}
_TOP = {"command": "command", "seed": "seed", "output": "output"}
_FLOATS = {"kappa", "tau", "T", "eps", "lam"}
_INTS = {"n_cells", "seed"}
_FLOAT_LISTS = {"eps_list", "lambda_list", "lambda_list_b", "kappa_list", "r_values"}
_STR_LISTS = {"graph_ids"}
_DECREASING = {"eps_list", "lambda_list", "lambda_list_b", "kappa_list"}


def _err(node, msg):
    line = node.start_mark.line + 1 if node is not None else 0
    return ConfigError(f"config line {line}: {msg}" if line else f"config: {msg}")


def _scalar(node, name):
    if not isinstance(node, yaml.ScalarNode):
        raise _err(node, f"{name} must be a scalar")
    if node.tag == "tag:yaml.org,2002:str":
        return node.value
    return yaml.safe_load(node.value)


def _as_float(node, name, value):
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise _err(node, f"{name} must be a number, got {value!r}")
    try:
        return float(value)
    except ValueError:
        raise _err(node, f"{name} must be a number, got {value!r}") from None


def _convert(node, name, attr):
    if attr in _FLOAT_LISTS or attr in _STR_LISTS:
        if isinstance(node, yaml.SequenceNode):
            items = [(n, _scalar(n, name)) for n in node.value]
        else:
            raw = _scalar(node, name)
            items = [(node, s.strip()) for s in str(raw).split(",") if s.strip()]
        if attr in _STR_LISTS:
            return [str(v) for _, v in items]
        return [_as_float(n, name, v) for n, v in items]
    value = _scalar(node, name)
    if attr in _FLOATS:
        return _as_float(node, name, value)
    if attr in _INTS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise _err(node, f"{name} must be an integer, got {value!r}")
        return value
    if value is None:
        raise _err(node, f"{name} must not be empty")
    return str(value)


def _mapping_items(node, where):
    if not isinstance(node, yaml.MappingNode):
        raise _err(node, f"{where} must be a mapping")
    for k, v in node.value:
        yield k, str(k.value), v


def parse_config(text: str, command: str | None = None) -> RunConfig:
    """Validate YAML config text; raises :class:`ConfigError` with the offending line.

    ``command`` replaces the config's own ``command`` key.
    """
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if root is None:
        raise ConfigError("config is empty")
    values, nodes = {}, {}
    for knode, key, vnode in _mapping_items(root, "config"):
        if key in _TOP:
            attr = _TOP[key]
            values[attr], nodes[attr] = _convert(vnode, key, attr), vnode
        elif key in _SECTIONS:
            for sk, skey, svnode in _mapping_items(vnode, key):
                if skey not in _SECTIONS[key]:
                    known = ", ".join(_SECTIONS[key])
                    raise _err(sk, f"unknown key '{key}.{skey}' (known: {known})")
                attr = _SECTIONS[key][skey]
                values[attr] = _convert(svnode, f"{key}.{skey}", attr)
                nodes[attr] = svnode
        else:
            known = ", ".join([*_TOP, *_SECTIONS])
            raise _err(knode, f"unknown key '{key}' (known: {known})")
    if command is not None:
        values["command"] = command
        nodes.pop("command", None)
    return _validate(values, nodes)


_NAMES = {attr: f"{sec}.{k}" for sec, m in _SECTIONS.items() for k, attr in m.items()}
_NAMES.update(_TOP)


def _validate(values, nodes) -> RunConfig:
    def fail(attr, msg):
        return _err(nodes.get(attr), f"{_NAMES.get(attr, attr)} {msg}")

    cmd = values.get("command")
    if cmd is None:
        raise ConfigError(f"config: command is required (one of {', '.join(COMMANDS)})")
    if cmd not in COMMANDS:
        raise fail("command", f"must be one of {', '.join(COMMANDS)}, got {cmd!r}")
    for attr in ("kappa", "tau", "T", "eps", "lam"):
        if attr in values and not values[attr] > 0:
            raise fail(attr, f"must be positive, got {values[attr]}")
    for attr in ("eps", "lam"):
        if attr in values and values[attr] > 1:
            raise fail(attr, f"must lie in (0, 1], got {values[attr]}")
    if "n_cells" in values and values["n_cells"] < 2:
        raise fail("n_cells", f"must be at least 2, got {values['n_cells']}")
    for attr in _DECREASING:
        if attr in values:
            v = values[attr]
            if any(x <= 0 for x in v):
                raise fail(attr, f"entries must be positive, got {v}")
            if any(b >= a for a, b in zip(v, v[1:])):
                raise fail(attr, f"must be strictly decreasing, got {v}")
    if "scheme" in values and values["scheme"] not in ("ch", "robin", "neumann"):
        raise fail("scheme", f"must be ch, robin or neumann, got {values['scheme']!r}")
    if cmd != "graph-table":
        sid = values.get("scenario")
        avail = ", ".join(sorted(experiments.SCENARIOS))
        if sid is None:
            raise ConfigError(f"config: scenario.id is required; available: {avail}")
        if sid not in experiments.SCENARIOS:
            raise fail("scenario", f"unknown scenario {sid!r}; available: {avail}")
    cfg = RunConfig(**values)
    try:
        if cfg.graph:
            graphs.parse_graph(cfg.graph)
        for gid in cfg.graph_ids:
            graphs.parse_graph(gid)
    except graphs.GraphError as exc:
        raise fail("graph" if cfg.graph else "graph_ids", str(exc)) from None
    try:
        cfg.disc()
    except ValueError as exc:
        raise fail("tau", str(exc)) from None
    _require(cfg, nodes)
    return cfg


def _require(cfg: RunConfig, nodes):
    need = {
        "sweep-eps": [("eps_list", 3)],
        "sweep-lambda": [("eps", None), ("lambda_list", 3)],
        "sweep-kappa": [("kappa_list", 3)],
        "audit": [("eps_list", 1), ("lambda_list", 1)],
        "uniqueness": [("eps", None), ("lambda_list", 2), ("lambda_list_b", 2)],
        "graph-table": [("lam", None)],
    }.get(cfg.command, [])
    if cfg.command == "solve" and cfg.scheme == "ch":
        need = [("eps", None), ("lam", None)]
    for attr, n in need:
        v = getattr(cfg, attr)
        if n is None and v is None:
            raise ConfigError(f"config: {cfg.command} needs {_NAMES[attr]}")
        if n is not None and len(v) < n:
            raise _err(nodes.get(attr), f"{cfg.command} needs at least {n} values in {_NAMES[attr]}")
    if cfg.command == "audit":
        for attr in ("eps_list", "lambda_list"):
            if any(v > 1 for v in getattr(cfg, attr)):
                raise _err(nodes.get(attr), f"{_NAMES[attr]} entries must lie in (0, 1]")


# -- running -----------------------------------------------------------------

def write_atomic(path: str, text: str) -> None:
    """Write through a temp file in the target directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".chlimit-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _render(writer, *args) -> str:
    buf = io.StringIO()
    writer(*args, buf)
    return buf.getvalue()


def _cmd_solve(cfg, jobs):
    sc = cfg.scenario_obj()
    if cfg.scheme == "ch":
        _, _, traj, _ = experiments.run_ch(sc, cfg.eps, cfg.lam, cfg.disc())
    else:
        _, traj = experiments.run_limit(sc, cfg.disc(), cfg.scheme)
    text = _render(solver.write_trajectory_csv, traj)
    iters = max(traj.newton_iters) if traj.newton_iters else 0
    ops = fem.assemble(fem.Mesh1D(0.0, 1.0, cfg.n_cells), 0.0)
    summary = (f"solve {sc.id} ({cfg.scheme}): {traj.n_steps} steps, max newton iters {iters}, "
               f"retries {traj.retries}, |u(T)|_H = {fem.h_norm(ops, traj.u[-1]):.6g}")
    return text, summary, True


def _rate_summary(rec):
    floor = rec.expected_slope - rec.tolerance
    parts = [f"{rec.sweep_id} {rec.scenario}: slope={rec.fit.slope:.4f} r2={rec.fit.r2:.4f}"]
    for k, f in rec.aux_fits.items():
        parts.append(f"{k} slope={f.slope:.4f}")
    parts.append(f"(need >= {floor:.4f}, decreasing={'yes' if rec.monotone else 'no'})")
    return " ".join(parts)


def _cmd_sweep_eps(cfg, jobs):
    rec = experiments.sweep_eps(cfg.scenario_obj(), cfg.eps_list, cfg.disc(), jobs)
    return _render(analysis.write_sweep_csv, [rec]), _rate_summary(rec), rec.passes


def _cmd_sweep_kappa(cfg, jobs):
    rec = experiments.sweep_kappa(cfg.scenario_obj(), cfg.kappa_list, cfg.disc(), jobs)
    return _render(analysis.write_sweep_csv, [rec]), _rate_summary(rec), rec.passes


def _cmd_sweep_lambda(cfg, jobs):
    rec = experiments.sweep_lambda(cfg.scenario_obj(), cfg.eps, cfg.lambda_list, cfg.disc(), jobs=jobs)
    gaps = ", ".join(f"{g:.4e}" for g in rec.errors)
    summary = f"sweep-lambda {rec.scenario}: Cauchy gaps [{gaps}] decreasing={'yes' if rec.monotone else 'no'}"
    return _render(analysis.write_sweep_csv, [rec]), summary, rec.passes


def _cmd_audit(cfg, jobs):
    rep = experiments.uniform_bound_audit(cfg.scenario_obj(), cfg.eps_list, cfg.lambda_list,
                                          cfg.disc(), jobs)
    rows = [(rep.scenario, c.eps, c.lam, c.report) for c in rep.cells if c.report is not None]
    text = _render(analysis.write_energy_csv, rows)
    worst = max(rep.ratios, key=rep.ratios.get) if rep.ratios else "-"
    summary = (f"audit {rep.scenario}: max energy ratio {rep.worst_ratio:.3f} ({worst}), "
               f"threshold {rep.threshold:g}, failed cells {len(rep.failed_cells)}")
    if any(not math.isnan(c.q_bound) for c in rep.cells):
        summary += f", Gronwall bound {'ok' if all(c.gronwall_ok for c in rep.cells) else 'violated'}"
    return text, summary, rep.passes


def _cmd_uniqueness(cfg, jobs):
    rep = experiments.uniqueness_probe(cfg.scenario_obj(), cfg.lambda_list, cfg.lambda_list_b,
                                       cfg.eps, cfg.disc(), jobs)
    buf = io.StringIO()
    buf.write(",".join(UNIQUENESS_HEADER) + "\n")
    for k, v in (("distance", rep.distance), ("cauchy_gap", rep.cauchy_gap),
                 ("factor", rep.factor)):
        buf.write(f"{k},{float(v)!r}\n")
    summary = (f"uniqueness {cfg.scenario}: distance {rep.distance:.4e} vs "
               f"{rep.factor:g} x gap {rep.cauchy_gap:.4e}")
    return buf.getvalue(), summary, rep.passes


def graph_table(ids, lam, r_values):
    rows = []
    for gid in ids:
        g = graphs.parse_graph(gid)
        for r in r_values:
            rows.append((g.id, lam, r, float(graphs.resolvent(g, lam, r)), float(graphs.yosida(g, lam, r)),
                         float(graphs.moreau_yosida(g, lam, r)), float(graphs.hat_beta(g, r))))
    return rows


def _cmd_graph_table(cfg, jobs):
    ids = cfg.graph_ids or ([cfg.graph] if cfg.graph else list(graphs.graph_catalog()))
    rows = graph_table(ids, cfg.lam, cfg.r_values)
    buf = io.StringIO()
    buf.write(",".join(GRAPH_TABLE_HEADER) + "\n")
    for row in rows:
        buf.write(",".join([row[0]] + [repr(float(v)) for v in row[1:]]) + "\n")
    print(f"{'graph':<22}{'r':>8}{'J_lam(r)':>14}{'beta_lam(r)':>14}{'env(r)':>14}{'hat(r)':>12}")
    for g, lam, r, j, y, m, hb in rows:
        print(f"{g:<22}{r:>8g}{j:>14.6g}{y:>14.6g}{m:>14.6g}{hb:>12.6g}")
    return buf.getvalue(), f"graph-table: {len(ids)} graph(s) at lambda={cfg.lam:g}", True


_DISPATCH = {
    "solve": _cmd_solve,
    "sweep-eps": _cmd_sweep_eps,
    "sweep-lambda": _cmd_sweep_lambda,
    "sweep-kappa": _cmd_sweep_kappa,
    "audit": _cmd_audit,
    "uniqueness": _cmd_uniqueness,
    "graph-table": _cmd_graph_table,
}


def run(cfg: RunConfig, out: str | None = None, assert_thresholds: bool = False, jobs: int = 1) -> int:
    """Execute ``cfg``; returns the process exit code."""
    np.random.seed(cfg.seed)
    path = out or cfg.output or f"{cfg.command}.csv"
    try:
        text, summary, ok = _DISPATCH[cfg.command](cfg, jobs)
    except (experiments.SweepError, solver.SolverError, solver.StepFailure,
            graphs.RootFindingError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, graphs.GraphError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_atomic(path, text)
    verdict = "" if not assert_thresholds else (" PASS" if ok else " FAIL")
    print(f"{summary}{verdict} -> {path}")
    if assert_thresholds and not ok:
        return EXIT_THRESHOLD
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="chlimit", description=__doc__.splitlines()[0])
    ap.add_argument("config", help="YAML run configuration")
    ap.add_argument("command", nargs="?", choices=COMMANDS, help="overrides the config's command")
    ap.add_argument("--assert", dest="assert_", action="store_true",
                    help="exit 3 when a rate, ratio or distance threshold is missed")
    ap.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes for sweeps")
    ap.add_argument("--out", metavar="PATH", help="CSV output path")
    args = ap.parse_args(argv)
    if args.jobs < 1:
        print("configuration error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"configuration error: cannot read {args.config}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text, args.command)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, args.out, args.assert_, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
