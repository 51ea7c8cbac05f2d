"""Batch front-end: ``levy-rk [--config FILE] {scale,simulate,verify,plot}``.

The config is one INI file::

    [model]     family = bm | cp_exp | stable, d, sigma, rho, theta, alpha
    [sim]       dt, seed, n_paths, max_time, workers
    [output]    dir
    [verify]    ids = rk2_brownian, u_y
    [identity.rk2_brownian]
    c = 1

Command-line flags override config values for one run without touching
the file.  Every output carries ``config_hash``, the hash of the
effective settings.  Only LEVY_RK_OUT is read from the environment (it
overrides the output directory).  Exit codes: 0 pass, 1 identity
failure, 2 usage or config error.
"""

from __future__ import annotations

import configparser
import hashlib
import inspect
import json
import math
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import rk_verify
from .levy_model import HypothesisError, check_hypotheses, model_from_card
from .local_time import levels_grid, local_time_field
from .path_sim import (FirstHit, FirstPassageAbove, FirstPassageBelow, FixedHorizon,
                       LocalTimeAtZero, SimConfig, Window, batch_simulate)
from .scale_fn import (BinRate, W_f_table, eval_W, parse_rate, scale_table, script_W_integral_route,
                       script_W_table)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

SIM_DEFAULTS = {"dt": "1e-4", "seed": "0", "n_paths": "10000", "max_time": "inf", "workers": "1"}


class ConfigError(click.UsageError):
    exit_code = EXIT_USAGE


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

class RunConfig:
    """Validated view of the INI file plus command-line overrides."""

    def __init__(self, parser: configparser.ConfigParser, overrides=None):
        self.parser = parser
        self.model_card = dict(parser["model"]) if parser.has_section("model") else {"family": "bm", "sigma": "1"}
        sim = dict(SIM_DEFAULTS)
        if parser.has_section("sim"):
            sim.update(parser["sim"])
        sim.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
        try:
            self.dt = float(sim["dt"])
            self.seed = int(sim["seed"])
            self.n_paths = int(sim["n_paths"])
            self.max_time = float(sim["max_time"])
            self.workers = int(sim["workers"])
        except ValueError as exc:
            raise ConfigError(f"bad [sim] value: {exc}")
        if not (self.dt > 0 and self.n_paths >= 0 and self.max_time > 0 and self.workers >= 1 and self.seed >= 0):
            raise ConfigError("need dt > 0, n_paths >= 0, max_time > 0, workers >= 1, seed >= 0")
        try:
            self.model = model_from_card(self.model_card)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad [model] section: {exc}")
        out = parser.get("output", "dir", fallback="levy_rk_out")
        self.out_dir = Path(os.environ.get("LEVY_RK_OUT", out))
        self.ids = [s.strip() for s in parser.get("verify", "ids", fallback="").split(",") if s.strip()]
        unknown = [i for i in self.ids if i not in rk_verify.REGISTRY]
        if unknown:
            raise ConfigError(f"unknown identity id(s): {', '.join(unknown)}")

    @classmethod
    def load(cls, path=None, overrides=None):
        p = configparser.ConfigParser()
        if path is not None:
            if not Path(path).is_file():
                raise ConfigError(f"config file not found: {path}")
            try:
                p.read(path)
            except configparser.Error as exc:
                raise ConfigError(f"cannot parse config: {exc}")
        return cls(p, overrides)

    def identity_params(self, ident):
        sec = f"identity.{ident}"
        return dict(self.parser[sec]) if self.parser.has_section(sec) else {}

    def effective(self) -> dict:
        out = {"model": self.model.card(),
               "sim": {"dt": self.dt, "seed": self.seed, "n_paths": self.n_paths,
                       "max_time": self.max_time, "workers": self.workers}}
        for s in self.parser.sections():
            if s.startswith("identity.") or s == "verify":
                out[s] = dict(self.parser[s])
        return out

    def hash(self, extra=None) -> str:
        """Hash of the effective settings; the worker count is left out (it never changes results)."""
        eff = self.effective()
        eff["sim"].pop("workers")
        if extra:
            eff["command"] = extra
        blob = json.dumps(eff, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def mc(self):
        return rk_verify.MCSettings(n_paths=self.n_paths, dt=self.dt, seed=self.seed, workers=self.workers)


def _valid_model(cfg: RunConfig):
    try:
        check_hypotheses(cfg.model)
    except HypothesisError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)


def _parse_value(v: str):
    v = v.strip()
    if "," in v:
        return tuple(_parse_value(x) for x in v.split(",") if x.strip())
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    if v.lower() in ("true", "false"):
        return v.lower() == "true"
    return v


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="INI config file.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Output directory (overrides [output] dir).")
@click.pass_context
def main(ctx, config_path, out_dir):
    """Scale functions, path simulation and local-time identity checks."""
    ctx.obj = {"config": config_path, "out": out_dir}


def _load(ctx, **overrides):
    cfg = RunConfig.load(ctx.obj["config"], overrides)
    if ctx.obj["out"]:
        cfg.out_dir = Path(ctx.obj["out"])
    return cfg


@main.command()
@click.option("--which", type=click.Choice(["W", "Wq", "Wf", "scriptW"]), default="W")
@click.option("--xmax", type=float, default=5.0, show_default=True)
@click.option("--h", "step", type=float, default=1e-3, show_default=True)
@click.option("--q", type=float, default=0.0, help="Killing rate for Wq.")
@click.option("--f", "fspec", default="const:0", help="Rate spec for Wf/scriptW, e.g. const:2+bin:0:1:3.")
@click.option("--v", type=float, default=0.0, help="Lower argument of W_f(u, v); u runs over [v, v + xmax].")
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def scale(ctx, which, xmax, step, q, fspec, v, output):
    """Tabulate W, W^(q), W_f or script-W_f to CSV."""
    cfg = _load(ctx)
    _valid_model(cfg)
    if not (xmax > 0 and step > 0 and step < xmax):
        raise ConfigError("need 0 < h < xmax")
    try:
        f = parse_rate(fspec)
    except ValueError as exc:
        raise ConfigError(str(exc))
    model = cfg.model
    chash = cfg.hash({"cmd": "scale", "which": which, "xmax": xmax, "h": step, "q": q, "f": fspec, "v": v})
    meta = {"config_hash": chash, "model": str(model), "which": which}
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = Path(output) if output else cfg.out_dir / f"scale_{which}.csv"
    try:
        if which in ("W", "Wq"):
            qq = q if which == "Wq" else 0.0
            tab = scale_table(model, xmax, step, qq)
            xs = np.linspace(0.01, xmax, 9)
            ref = eval_W(model, xs, qq, method="talbot", nodes=64 if tab.provenance == "inverted" else 24)
            resid = float(np.max(np.abs(tab(xs) - ref) / np.abs(ref)))
            tab.to_csv(path, meta)
            route = "closed form vs Talbot" if tab.provenance == "closed-form" else "double vs mp Talbot"
        elif which == "Wf":
            tab = W_f_table(model, f, v, v + xmax, step)
            fine = W_f_table(model, f, v, v + xmax, step / 2)
            ref = np.interp(tab.x, fine.x, fine.values)
            resid = float(np.max(np.abs(tab.values - ref) / np.maximum(np.abs(ref), 1e-300)))
            tab.to_csv(path, meta)
            route = "h vs h/2"
        else:
            tab = script_W_table(model, f, xmax, step)
            zi, Fi = script_W_integral_route(model, f, xmax)
            resid = float(np.max(np.abs(tab(zi) - Fi) / Fi))
            tab.to_csv(path, meta)
            route = "limit vs integral route"
    except (RuntimeError, ValueError, FloatingPointError) as exc:
        click.echo(f"error: solver failed: {exc}", err=True)
        sys.exit(EXIT_FAIL)
    click.echo(f"{which}: {path} ({len(tab.x)} rows), max residual {resid:.3e} ({route}), config_hash {chash}")


def _parse_stop(spec: str):
    kind, _, val = spec.partition(":")
    try:
        x = float(val)
    except ValueError:
        raise ConfigError(f"bad stop rule {spec!r}")
    table = {"tau_plus": FirstPassageAbove, "tau_minus": FirstPassageBelow, "hit": FirstHit,
             "tau_c": LocalTimeAtZero, "horizon": FixedHorizon}
    if kind not in table:
        raise ConfigError(f"unknown stop rule {kind!r}; use one of {', '.join(table)}")
    return table[kind](x)


@main.command()
@click.option("--stop", "stop_spec", default="tau_plus:1", show_default=True,
              help="tau_plus:a, tau_minus:b, hit:x, tau_c:c or horizon:T.")
@click.option("--emit", type=click.Choice(["paths", "field"]), default="paths")
@click.option("--n-paths", type=int, default=None, help="Overrides [sim] n_paths.")
@click.option("--seed", type=int, default=None)
@click.option("--dt", type=float, default=None)
@click.option("--x0", type=float, default=0.0)
@click.option("--levels", default=None, help="lo:hi:step for --emit field (default: path range, step 2 eps).")
@click.pass_context
def simulate(ctx, stop_spec, emit, n_paths, seed, dt, x0, levels):
    """Simulate paths; dump each path, or the mean local-time field, to CSV."""
    cfg = _load(ctx, n_paths=n_paths, seed=seed, dt=dt)
    _valid_model(cfg)
    stop = _parse_stop(stop_spec)
    chash = cfg.hash({"cmd": "simulate", "stop": stop_spec, "emit": emit, "x0": x0, "levels": levels})
    sim = SimConfig(dt=cfg.dt, seed=cfg.seed, max_time=cfg.max_time, x0=x0, window=Window())
    meta = {"config_hash": chash, "model": str(cfg.model), "stop": stop_spec, "dt": cfg.dt, "seed": cfg.seed}
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    errors = []
    paths = [r.path for r in batch_simulate(cfg.model, sim, stop, cfg.n_paths, errors=errors)]
    if emit == "paths":
        for i, p in enumerate(paths):
            p.to_csv(out / f"path_{i:05d}.csv", {**meta, "path_index": i, "eps": p.eps})
    elif paths:
        eps = paths[0].eps
        if levels:
            try:
                lo, hi, st = (float(t) for t in levels.split(":"))
            except ValueError:
                raise ConfigError("--levels must be lo:hi:step")
        else:
            lo = min(float(p.values.min()) for p in paths)
            hi = max(float(p.values.max()) for p in paths)
            st = 2 * eps
        if not (hi > lo and st >= 2 * eps * (1 - 1e-12)):
            raise ConfigError(f"--levels needs lo < hi and step >= 2 eps = {2 * eps:.4g}")
        grid = levels_grid(lo, hi, st)
        vals = np.mean([local_time_field(p, grid, eps).values for p in paths], axis=0)
        from .local_time import LocalTimeField

        LocalTimeField(grid, vals, eps).to_csv(out / "field.csv", {**meta, "n_paths": len(paths)})
    click.echo(f"simulated {len(paths)} path(s), {len(errors)} skipped at max_time; stop {stop_spec}; "
               f"emit {emit if paths else 'summary only'}; config_hash {chash}")


@main.command()
@click.option("--id", "ids", multiple=True, help="Identity id (repeatable).")
@click.option("--all", "run_all", is_flag=True, help="Run every registered identity.")
@click.option("--set", "sets", multiple=True, help="Identity parameter key=value (repeatable).")
@click.option("--c", type=float, default=None, help="Shortcut for --set c=VALUE.")
@click.option("--n-paths", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--dt", type=float, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--list", "list_ids", is_flag=True, help="List identity ids and exit.")
@click.pass_context
def verify(ctx, ids, run_all, sets, c, n_paths, seed, dt, workers, list_ids):
    """Run identity checks; one JSON report per identity plus summary.json."""
    if list_ids:
        for k in rk_verify.REGISTRY:
            click.echo(k)
        return
    cfg = _load(ctx, n_paths=n_paths, seed=seed, dt=dt, workers=workers)
    chosen = list(rk_verify.REGISTRY) if run_all else (list(ids) or cfg.ids)
    if not chosen:
        raise ConfigError("no identity selected (use --id, --all or [verify] ids)")
    unknown = [i for i in chosen if i not in rk_verify.REGISTRY]
    if unknown:
        click.echo(f"error: unknown identity id(s): {', '.join(unknown)}", err=True)
        sys.exit(EXIT_USAGE)
    cli_params = {}
    for s in sets:
        k, eq, v = s.partition("=")
        if not eq:
            raise ConfigError(f"--set needs key=value, got {s!r}")
        cli_params[k.strip()] = _parse_value(v)
    if c is not None:
        cli_params["c"] = c
    takers = set().union(*(inspect.signature(rk_verify.REGISTRY[i]).parameters for i in chosen))
    stray = [k for k in cli_params if k not in takers or k in ("mc", "model")]
    if stray:
        click.echo(f"error: no selected identity takes parameter(s) {', '.join(stray)}", err=True)
        sys.exit(EXIT_USAGE)
    model_given = cfg.parser.has_section("model")
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for ident in chosen:
        fn = rk_verify.REGISTRY[ident]
        accepted = inspect.signature(fn).parameters
        params = {k: _parse_value(v) for k, v in cfg.identity_params(ident).items()}
        params.update({k: v for k, v in cli_params.items() if k in accepted})
        bad = [k for k in params if k not in accepted]
        if bad:
            click.echo(f"error: {ident} takes no parameter(s) {', '.join(bad)}", err=True)
            sys.exit(EXIT_USAGE)
        for k, v in params.items():
            # a single value given for a grid parameter
            if isinstance(accepted[k].default, (tuple, list)) and not isinstance(v, tuple) \
                    and not isinstance(accepted[k].default[0] if accepted[k].default else None, (tuple, list)):
                params[k] = (v,)
        if model_given and "model" in accepted:
            params["model"] = cfg.model
        chash = cfg.hash({"cmd": "verify", "id": ident, "params": {k: str(v) for k, v in params.items()
                                                                   if k != "model"}})
        try:
            rep = fn(mc=cfg.mc(), **params)
        except (ValueError, TypeError) as exc:
            click.echo(f"error: {ident}: {exc}", err=True)
            sys.exit(EXIT_USAGE)
        if isinstance(rep, tuple):
            rep = rep[0]
        d = rep.to_dict()
        d["config_hash"] = chash
        (out / f"{ident}.json").write_text(json.dumps(d, sort_keys=True, indent=1, allow_nan=False) + "\n",
                                          encoding="utf-8")
        summary[ident] = {"verdict": rep.verdict, "max_abs_z": max((abs(z) for z in rep.z), default=0.0),
                          "config_hash": chash}
        click.echo(rep.summary())
    ok = all(v["verdict"] for v in summary.values())
    (out / "summary.json").write_text(json.dumps(rk_verify._clean({"all_pass": ok, "reports": summary}),
                                                 sort_keys=True, indent=1) + "\n", encoding="utf-8")
    sys.exit(EXIT_OK if ok else EXIT_FAIL)


_PLOT_TEMPLATE = '''"""Estimates with 3-sigma bands against targets for {ident} (config {chash})."""
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

names = {names!r}
values = {values!r}
bands = {bands!r}
targets = {targets!r}
{curve}
fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(names) + 2), 3.5))
pos = list(range(len(names)))
ax.errorbar(pos, values, yerr=bands, fmt="o", capsize=3, label="estimate +- 3 sigma")
ax.plot(pos, targets, "x", color="k", label="target")
ax.set_xticks(pos)
ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
ax.set_title("{ident}: {verdict}")
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig(__file__.replace(".py", ".png"), dpi=120)
'''

_RK2_CURVE = '''
import math
c = {c!r}
fig2, ax2 = plt.subplots(figsize=(4, 3))
for lam in {lams!r}:
    ys = [-2 + 4 * k / 200 for k in range(201)]
    ax2.plot(ys, [math.exp(-lam * c / (1 + 2 * lam * abs(y))) for y in ys], label=f"target lam={{lam:g}}")
ax2.errorbar({ys!r}, {curve_vals!r}, yerr={curve_bands!r}, fmt="o", capsize=3)
ax2.set_xlabel("y")
ax2.legend(fontsize=7)
fig2.tight_layout()
fig2.savefig(__file__.replace(".py", "_curve.png"), dpi=120)
'''


@main.command()
@click.argument("report_dir", type=click.Path(file_okay=False), required=False)
@click.pass_context
def plot(ctx, report_dir):
    """Write one matplotlib script per report (estimate +- 3 sigma vs target)."""
    cfg = _load(ctx)
    rdir = Path(report_dir) if report_dir else cfg.out_dir
    reports = sorted(p for p in rdir.glob("*.json") if p.name != "summary.json") if rdir.is_dir() else []
    if not reports:
        click.echo(f"error: no reports in {rdir}", err=True)
        sys.exit(EXIT_USAGE)
    for rp in reports:
        d = json.loads(rp.read_text(encoding="utf-8"))
        ident = d.get("id", rp.stem)
        names = [e["name"] for e in d["estimates"]]
        values = [e["value"] for e in d["estimates"]]
        bands = [3 * math.hypot(e["stderr"] or 0.0, e.get("bias") or 0.0) for e in d["estimates"]]
        targets = [t["value"] for t in d["targets"]]
        curve = ""
        if ident == "rk2_brownian":
            p = d["params"]
            lam0 = p["lams"][0]
            sel = [i for i, n in enumerate(names) if n.endswith(f"lam={lam0:g}")]
            curve = _RK2_CURVE.format(c=p["c"], lams=p["lams"], ys=[p["ys"][k] for k in range(len(sel))],
                                      curve_vals=[values[i] for i in sel], curve_bands=[bands[i] for i in sel])
        script = _PLOT_TEMPLATE.format(ident=ident, chash=d.get("config_hash", ""), names=names,
                                       values=values, bands=bands, targets=targets, curve=curve,
                                       verdict="PASS" if d["verdict"] else "FAIL")
        (rdir / f"plot_{rp.stem}.py").write_text(script, encoding="utf-8")
    click.echo(f"wrote {len(reports)} plot script(s) to {rdir}")


if __name__ == "__main__":
    main()
