"""Configuration-driven command line: symbol tables, verification suites, sweeps, chart dumps.

Usage::

    dnolab symbol|verify|sweep|chart [--config FILE] [--out PATH] [--format csv|json] [--jobs N]
    dnolab verify SUITE ...

The config file is INI-style with sections ``[domain]``, ``[grid]``,
``[tolerances]`` and ``[output]``; see the README for every key.  Exit status
is 0 when everything passes, 1 on a failed check and 2 on a configuration or
usage error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2

# Every table is computed for 2 box (twice the complex Laplacian).
BOX_CONVENTION = "2box"

SUITES = ("forms", "residues", "lambda0", "ode", "strip", "cancellation", "crosscheck", "microlocal", "kohn")

DEFAULT_TOLERANCES = {
    "sweep_exponent": 0.7,
    "ratio_low": 0.4,
    "ratio_high": 0.65,
    "kohn_ratio": 0.6,
    "residue_rel": 1e-10,
    "ode_rel": 1e-6,
    "closed_form": 1e-8,
    "cancellation": 1e-10,
    "crosscheck_principal": 1e-4,
    "crosscheck_offdiag": 1e-10,
    "crosscheck_closed_form": 1e-5,
    "strip_factor": 2.0,
    "strip_slack": 0.1,
}

_KNOWN = {
    "domain": {"name", "n", "terms", "point", "radius_fraction"},
    "grid": {"q", "rays", "magnitudes", "phi_prime"},
    "tolerances": set(DEFAULT_TOLERANCES),
    "output": {"format", "jobs"},
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- configuration

@dataclass
class RunConfig:
    domain: str = "ball"
    n: int = 2
    terms: Optional[List[Tuple[float, Tuple[int, ...]]]] = None
    point: Optional[Tuple[float, ...]] = None
    radius_fraction: float = 0.1
    q: int = 1
    rays: List[Tuple[float, ...]] = field(default_factory=list)
    magnitudes: List[float] = field(default_factory=lambda: [4.0, 8.0, 16.0, 32.0])
    phi_prime: List[float] = field(default_factory=lambda: [0.0])
    tolerances: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    format: str = "json"
    jobs: Optional[int] = None
    source: str = ""

    def __post_init__(self):
        if not self.rays:
            d = 2 * self.n - 1
            self.rays = [tuple([0.0] * (d - 1) + [-1.0]), tuple([0.25] + [0.0] * (d - 2) + [-1.0])]

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.source.encode("utf-8")).hexdigest()

    def as_plain(self) -> dict:
        """Picklable summary used to rebuild the chart in worker processes."""
        return {"domain": self.domain, "n": self.n, "terms": self.terms, "point": self.point,
                "radius_fraction": self.radius_fraction}


def _line_of(text: str, section: str, key: Optional[str] = None) -> Optional[int]:
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None:
            name = line.split("=", 1)[0].split(":", 1)[0].strip()
            if name == key:
                return no
    return None


def _where(text: str, section: str, key: Optional[str] = None) -> str:
    line = _line_of(text, section, key)
    loc = f"[{section}]" + (f" {key}" if key else "")
    return f"{loc} (line {line})" if line else loc


def _floats(value: str) -> List[float]:
    return [float(v) for v in value.replace(",", " ").split()]


def _parse_terms(value: str, n: int) -> List[Tuple[float, Tuple[int, ...]]]:
    terms = []
    for chunk in value.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        coef, _, exps = chunk.partition(":")
        if not exps:
            raise ValueError(f"term {chunk!r} must look like coef:e1,e2,...")
        e = tuple(int(v) for v in exps.split(","))
        if len(e) != 2 * n:
            raise ValueError(f"term {chunk!r} needs {2 * n} exponents")
        terms.append((float(coef), e))
    if not terms:
        raise ValueError("no terms given")
    return terms


def parse_config(text: str) -> RunConfig:
    """Parse and validate config text; errors name the section, key and line."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    for sec in parser.sections():
        if sec not in _KNOWN:
            raise ConfigError(f"unknown section {_where(text, sec)}")
        for key in parser[sec]:
            if key not in _KNOWN[sec]:
                raise ConfigError(f"unknown key {_where(text, sec, key)}")

    def get(sec, key, conv, default):
        if not parser.has_option(sec, key):
            return default
        try:
            return conv(parser.get(sec, key))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {_where(text, sec, key)}: {exc}") from exc

    cfg = RunConfig(source=text, rays=[(0.0,)])  # rays filled in below
    cfg.domain = get("domain", "name", str.strip, "ball")
    cfg.n = get("domain", "n", int, 2)
    if cfg.n < 2:
        raise ConfigError(f"n must be at least 2 at {_where(text, 'domain', 'n')}")
    if cfg.domain == "polynomial":
        if not parser.has_option("domain", "terms"):
            raise ConfigError(f"polynomial domain needs terms at {_where(text, 'domain')}")
        cfg.terms = get("domain", "terms", lambda v: _parse_terms(v, cfg.n), None)
    else:
        from .geometry import BUILTIN_DOMAINS
        if cfg.domain not in BUILTIN_DOMAINS:
            raise ConfigError(f"unknown domain {cfg.domain!r} at {_where(text, 'domain', 'name')}; "
                              f"choose polynomial or one of {BUILTIN_DOMAINS}")
    pt = get("domain", "point", _floats, None)
    if pt is not None and len(pt) != 2 * cfg.n:
        raise ConfigError(f"point needs {2 * cfg.n} coordinates at {_where(text, 'domain', 'point')}")
    cfg.point = tuple(pt) if pt is not None else None
    cfg.radius_fraction = get("domain", "radius_fraction", float, 0.1)

    cfg.q = get("grid", "q", int, 1)
    if not 1 <= cfg.q <= cfg.n:
        raise ConfigError(f"q must lie in 1..{cfg.n} at {_where(text, 'grid', 'q')}")
    d = 2 * cfg.n - 1
    rays = get("grid", "rays", lambda v: [tuple(_floats(c)) for c in v.split(";") if c.strip()], None)
    if rays is None:
        cfg.rays = []
        cfg.__post_init__()
    else:
        for r in rays:
            if len(r) != d or not any(r):
                raise ConfigError(f"each ray needs {d} entries, not all zero, at {_where(text, 'grid', 'rays')}")
        cfg.rays = rays
    mags = get("grid", "magnitudes", _floats, [4.0, 8.0, 16.0, 32.0])
    if not mags or any(m <= 0 for m in mags) or any(b <= a for a, b in zip(mags, mags[1:])):
        raise ConfigError(f"magnitudes must be positive and increasing at {_where(text, 'grid', 'magnitudes')}")
    cfg.magnitudes = mags
    cfg.phi_prime = get("grid", "phi_prime", _floats, [0.0])

    for key in DEFAULT_TOLERANCES:
        cfg.tolerances[key] = get("tolerances", key, float, DEFAULT_TOLERANCES[key])
    cfg.format = get("output", "format", str.strip, "json")
    if cfg.format not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json at {_where(text, 'output', 'format')}")
    cfg.jobs = get("output", "jobs", int, None)
    return cfg


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return parse_config("")
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


_CHART_CACHE: Dict[tuple, object] = {}


def build_chart_from(plain: dict):
    from .geometry import build_chart, builtin_domain, polynomial_domain

    key = (plain["domain"], plain["n"], str(plain["terms"]), plain["point"], plain["radius_fraction"])
    if key not in _CHART_CACHE:
        if plain["domain"] == "polynomial":
            dom = polynomial_domain(plain["n"], plain["terms"])
        else:
            dom = builtin_domain(plain["domain"], plain["n"])
        _CHART_CACHE[key] = build_chart(dom, plain["point"], plain["radius_fraction"])
    return _CHART_CACHE[key]


def resolve_jobs(cli_jobs: Optional[int], cfg: RunConfig) -> int:
    """--jobs, then the config, then DNOLAB_JOBS, then 1."""
    for v in (cli_jobs, cfg.jobs):
        if v is not None:
            return max(1, int(v))
    env = os.environ.get("DNOLAB_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"DNOLAB_JOBS must be an integer, got {env!r}") from exc
    return 1


# ---------------------------------------------------------------- output

def fmt_float(x) -> str:
    x = float(x) + 0.0  # folds -0.0 into 0.0
    if math.isnan(x) or math.isinf(x):
        return "null"
    return "%.17g" % x


def _json(obj, indent: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json(str(k))}: {_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _json(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return {True: "true", False: "false", None: "null"}[obj]
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    import json
    return json.dumps(str(obj), ensure_ascii=False)


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    if v is None:
        return ""
    return str(v)


def render(meta: dict, columns: Sequence[str], rows: List[dict], fmt: str, extra: Optional[dict] = None) -> str:
    """CSV (meta as leading '# key=value' lines) or JSON with the same columns."""
    if fmt == "json":
        doc = {"meta": meta, "columns": list(columns), "rows": [{c: r.get(c) for c in columns} for r in rows]}
        if extra:
            doc.update(extra)
        return _json(doc) + "\n"
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}={_cell(v)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def meta_for(cfg: RunConfig, command: str, **more) -> dict:
    meta = {"version": __version__, "config_hash": cfg.config_hash, "box_convention": BOX_CONVENTION,
            "command": command, "domain": cfg.domain, "n": cfg.n, "q": cfg.q}
    meta.update(more)
    return meta


def _xi_points(cfg: RunConfig):
    for ri, ray in enumerate(cfg.rays):
        d = np.asarray(ray, float)
        d = d / np.linalg.norm(d)
        for mi, m in enumerate(cfg.magnitudes):
            yield ri, mi, m, m * d


def _xi_label(xi) -> str:
    return " ".join(fmt_float(v) for v in xi)


# ---------------------------------------------------------------- symbol

SYMBOL_COLUMNS = ("ray", "magnitude", "xi", "row", "phi_prime", "principal",
                  "zero_order_re", "zero_order_im", "s_term_re", "s_term_im", "a_term_re", "a_term_im",
                  "tau_term_re", "tau_term_im", "xx_term_re", "xx_term_im",
                  "phi_shift_re", "phi_shift_im", "offdiag_abs_max", "breakdown_defect")


def symbol_rows(cfg: RunConfig) -> List[dict]:
    from .dno import dno_symbol, dno_symbol_phi
    from .operator_assembly import assemble_square

    chart = build_chart_from(cfg.as_plain())
    op = assemble_square(chart, cfg.q)
    rows = []
    for ri, _, m, xi in _xi_points(cfg):
        base = dno_symbol(chart, None, xi, cfg.q, op)
        defect = float(np.max(np.abs(base.breakdown_sum() - base.zero_order)))
        R = len(base.rows)
        off = float(np.max(np.abs(base.zero_order - np.diag(np.diag(base.zero_order))))) if R > 1 else 0.0
        for phi in cfg.phi_prime:
            shifted = dno_symbol_phi(chart, None, xi, cfg.q, phi) if phi else base
            for i, J in enumerate(base.rows):
                z = complex(base.zero_order[i, i])
                shift = complex(shifted.zero_order[i, i] - base.zero_order[i, i])
                row = {"ray": ri, "magnitude": float(m), "xi": _xi_label(xi), "row": J.label(),
                       "phi_prime": float(phi), "principal": float(base.principal),
                       "zero_order_re": z.real, "zero_order_im": z.imag,
                       "phi_shift_re": shift.real, "phi_shift_im": shift.imag,
                       "offdiag_abs_max": off, "breakdown_defect": defect}
                for name in ("s", "a", "tau", "xx"):
                    v = complex(base.term_breakdown[f"{name}-term"][i, i])
                    row[f"{name}_term_re"], row[f"{name}_term_im"] = v.real, v.imag
                rows.append(row)
    return rows


def cmd_symbol(cfg: RunConfig, fmt: str, out: Optional[str], jobs: int) -> int:
    rows = symbol_rows(cfg)
    emit(render(meta_for(cfg, "symbol"), SYMBOL_COLUMNS, rows, fmt), out)
    return EXIT_OK


# ---------------------------------------------------------------- sweep

SWEEP_COLUMNS = ("ray", "magnitude", "xi", "row", "phi_prime", "oracle_re", "oracle_im",
                 "prediction_re", "prediction_im", "error", "status")


def _sweep_task(args):
    plain, q, ri, mi, m, xi, phi = args
    from .dno import dno_symbol_phi
    from .oracle import OdeProblem, ode_dno
    from .operator_assembly import a_zero_symbol, assemble_square

    chart = build_chart_from(plain)
    out = []
    try:
        op = assemble_square(chart, q)
        sym = dno_symbol_phi(chart, None, xi, q, phi)
        val = sym.principal ** 2
        for i, J in enumerate(sym.rows):
            # the oracle freezes x, so the xx-term is not part of the prediction
            pred = sym.principal + complex(sym.zero_order[i, i] - sym.term_breakdown["xx-term"][i, i])
            prob = OdeProblem(xi, val, op.s_entry(J), a_zero_symbol(op, chart, xi, J), op.tau_symbol(xi), phi)
            oracle = ode_dno(prob)
            out.append((ri, mi, J.label(), phi, oracle, pred, "ok"))
    except Exception as exc:  # isolated per task; reported in the row
        out.append((ri, mi, "", phi, complex("nan"), complex("nan"),
                    f"error at ray {ri}, |xi|={m}: {type(exc).__name__}: {exc}"))
    return out


def fit_exponent(mags: Sequence[float], errors: Sequence[float], floor: float = 1e-12) -> Optional[float]:
    """Least-squares p in error ~ C |xi|^-p; None when the errors sit at round-off."""
    mags = np.asarray(mags, float)
    errors = np.asarray(errors, float)
    if len(mags) < 2 or np.all(errors <= floor * np.maximum(mags, 1.0)):
        return None
    good = errors > 0
    if good.sum() < 2:
        return None
    slope = np.polyfit(np.log(mags[good]), np.log(errors[good]), 1)[0]
    return float(-slope)


def sweep_rows(cfg: RunConfig, jobs: int = 1) -> Tuple[List[dict], List[dict]]:
    if len(cfg.magnitudes) < 3:
        raise ConfigError("sweep needs at least 3 magnitudes in [grid] magnitudes")
    plain = cfg.as_plain()
    tasks = [(plain, cfg.q, ri, mi, m, xi, float(phi))
             for ri, mi, m, xi in _xi_points(cfg) for phi in cfg.phi_prime]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]
    flat = sorted((r for res in results for r in res), key=lambda r: (r[0], r[3], r[2], r[1]))
    xis = {(ri, mi): (m, xi) for ri, mi, m, xi in _xi_points(cfg)}
    rows = []
    for ri, mi, label, phi, oracle, pred, status in flat:
        m, xi = xis[(ri, mi)]
        rows.append({"ray": ri, "magnitude": float(m), "xi": _xi_label(xi), "row": label,
                     "phi_prime": float(phi), "oracle_re": oracle.real, "oracle_im": oracle.imag,
                     "prediction_re": pred.real, "prediction_im": pred.imag,
                     "error": float(abs(oracle - pred)), "status": status})
    fits = []
    threshold = cfg.tolerances["sweep_exponent"]
    groups: Dict[tuple, List[dict]] = {}
    for r in rows:
        groups.setdefault((r["ray"], r["row"], r["phi_prime"]), []).append(r)
    for (ri, label, phi), grp in sorted(groups.items()):
        failed = [g for g in grp if g["status"] != "ok"]
        if failed:
            fits.append({"ray": ri, "row": label, "phi_prime": phi, "exponent": None,
                         "status": "error", "detail": failed[0]["status"]})
            continue
        p = fit_exponent([g["magnitude"] for g in grp], [g["error"] for g in grp])
        ok = p is None or p >= threshold
        fits.append({"ray": ri, "row": label, "phi_prime": phi,
                     "exponent": "n/a" if p is None else p,
                     "status": "pass" if ok else "fail", "threshold": threshold})
    return rows, fits


def cmd_sweep(cfg: RunConfig, fmt: str, out: Optional[str], jobs: int) -> int:
    rows, fits = sweep_rows(cfg, jobs)
    text = render(meta_for(cfg, "sweep"), SWEEP_COLUMNS, rows, fmt, {"fits": fits})
    if fmt == "csv":
        text += "".join(f"# fit ray={f['ray']} row={f['row']} phi_prime={_cell(f['phi_prime'])} "
                        f"exponent={_cell(f['exponent'])} status={f['status']}\n" for f in fits)
    emit(text, out)
    return EXIT_OK if all(f["status"] == "pass" for f in fits) else EXIT_FAIL


# ---------------------------------------------------------------- chart

CHART_COLUMNS = ("quantity", "index", "re", "im")


def chart_rows(cfg: RunConfig) -> List[dict]:
    from .geometry import summarize_chart, tau_from_metric

    chart = build_chart_from(cfg.as_plain())
    summary = summarize_chart(chart)
    rows = []

    def add(name, index, v):
        v = complex(v)
        rows.append({"quantity": name, "index": index, "re": v.real, "im": v.imag})

    for i, v in enumerate(chart.p):
        add("point", str(i + 1), v)
    for i, v in enumerate(chart.nu):
        add("normal", str(i + 1), v)
    add("radius", "", chart.radius)
    for (i, j), v in np.ndenumerate(summary.levi):
        add("levi", f"{i + 1},{j + 1}", v)
    for i, v in enumerate(summary.levi_norms):
        add("levi_norm", str(i + 1), v)
    for J, v in summary.c_vals.items():
        add("c_to_n", J.label(), v)
    for i, v in enumerate(summary.d_vals):
        add("d", str(i + 1), v)
    add("transverse_inner", "", summary.transverse.inner)
    add("transverse_norm", "", summary.transverse.T0_norm)
    tau = tau_from_metric(chart)
    add("tau_normal", "", tau[-1, -1])
    return rows


def cmd_chart(cfg: RunConfig, fmt: str, out: Optional[str], jobs: int) -> int:
    emit(render(meta_for(cfg, "chart"), CHART_COLUMNS, chart_rows(cfg), fmt), out)
    return EXIT_OK


# ---------------------------------------------------------------- verification suites

@dataclass
class Check:
    name: str
    passed: bool
    measured: object
    tolerance: object
    tag: str

    def as_row(self) -> dict:
        m = self.measured
        if isinstance(m, complex):
            m = f"{fmt_float(m.real)}{'+' if m.imag >= 0 else '-'}{fmt_float(abs(m.imag))}j"
        return {"check": self.name, "status": "pass" if self.passed else "fail",
                "measured": m, "tolerance": self.tolerance, "tag": self.tag}


def _timed(checks: List[Check], name: str, start: float, budget: float, tag: str) -> None:
    elapsed = time.perf_counter() - start
    checks.append(Check(f"{name} runtime (s)", elapsed < budget, elapsed, budget, tag))


def suite_forms(cfg: RunConfig) -> List[Check]:
    from .forms import check_epsilon_identity, count_epsilon_cases

    start = time.perf_counter()
    checks = []
    total = bad = 0
    for n in range(1, 6):
        for q in range(1, min(3, n) + 1):
            cases = count_epsilon_cases(n, q)
            fails = check_epsilon_identity(n, q)
            total += cases
            bad += len(fails)
            checks.append(Check(f"epsilon identity n={n} q={q} ({cases} cases)", not fails, len(fails), 0,
                                "epsilon-contraction-identity"))
    checks.append(Check(f"epsilon identity total cases {total}", bad == 0, bad, 0, "epsilon-contraction-identity"))
    _timed(checks, "forms", start, 1.0, "epsilon-contraction-identity")
    return checks


def fuzzed_rationals(count: int = 20, seed: int = 7):
    """Random RationalEta cases: poles +-i s with s in [0.5, 10], multiplicities up to 3.

    Both half-planes always carry a pole; one-sided pole sets integrate to
    zero, where a relative comparison means nothing.
    """
    from .symbols import MAX_DEGREE, RationalEta

    rng = np.random.default_rng(seed)
    cases = []
    while len(cases) < count:
        npoles = int(rng.integers(2, 5))
        sides = [1, -1] + [1 if rng.random() < 0.5 else -1 for _ in range(npoles - 2)]
        heights = rng.uniform(0.5, 10.0, size=npoles)
        poles = tuple((complex(0.0, side * h), int(rng.integers(1, 4))) for side, h in zip(sides, heights))
        deg = sum(m for _, m in poles)
        top = int(rng.integers(0, min(deg - 2, MAX_DEGREE) + 1))
        num = tuple(complex(rng.normal(), rng.normal()) for _ in range(top + 1))
        cases.append(RationalEta(num, poles))
    return cases


def suite_residues(cfg: RunConfig) -> List[Check]:
    from sympy import QQ_I

    from .dno import restriction_constants
    from .oracle import quad_eta_integral
    from .symbols import eta_integral

    start = time.perf_counter()
    tol = cfg.tolerances["residue_rel"]
    checks = []
    for i, r in enumerate(fuzzed_rationals()):
        exact = eta_integral(r)
        quad = quad_eta_integral(r)
        rel = abs(exact - quad) / max(abs(quad), 1e-300)
        checks.append(Check(f"fuzzed case {i} residues vs quadrature", rel < tol, rel, tol, "residue-engine"))
    expected = {"S_int": QQ_I(1, 0) / 4, "S_b": QQ_I(1, 0) / 2, "A": QQ_I(1, 0) / 4,
                "tau": -QQ_I(1, 0) / 8, "xx": -3 * QQ_I(0, 1) / 16, "Lambda0": QQ_I(1, 0) / 2}
    got = restriction_constants()
    for k, v in expected.items():
        checks.append(Check(f"restriction constant {k} = {v}", got[k] == v, str(got[k]), "exact",
                            "boundary-restriction-constants"))
    _timed(checks, "residues", start, 5.0, "residue-engine")
    return checks


def suite_lambda0(cfg: RunConfig) -> List[Check]:
    import sympy as sp
    from sympy import QQ_I

    from .dno import lambda0_from_residues, restriction_constants

    start = time.perf_counter()
    checks = []
    expected = {"s0": sp.sqrt(2) / 2, "a0": sp.Rational(1, 2), "tau": sp.Rational(-1, 4), "xx": 3 * sp.I / 8}
    got = lambda0_from_residues()
    for k, v in expected.items():
        dev = sp.simplify(got[k] - v)
        checks.append(Check(f"Lambda0 coefficient {k} = {v}", dev == 0, str(dev), "exact", "lambda0-coefficients"))
    consts = {"S_int": QQ_I(1, 0) / 4, "S_b": QQ_I(1, 0) / 2, "A": QQ_I(1, 0) / 4,
              "tau": -QQ_I(1, 0) / 8, "xx": -3 * QQ_I(0, 1) / 16, "Lambda0": QQ_I(1, 0) / 2}
    rc = restriction_constants()
    for k, v in consts.items():
        checks.append(Check(f"restriction constant {k}", rc[k] == v, str(rc[k]), "exact",
                            "boundary-restriction-constants"))
    _timed(checks, "lambda0", start, 1.0, "lambda0-coefficients")
    return checks


def constant_coefficient_ratios(magnitudes=(4, 8, 16, 32, 64)) -> List[float]:
    """Residual ratios under doubling for a fixed constant-coefficient model problem."""
    from .oracle import OdeProblem, ode_dno

    d = np.array([0.5, 0.3, -0.8])
    d = d / np.linalg.norm(d)
    s0, alpha, tt = 0.3 - 0.2j, 0.4 + 0.3j, 0.1 + 0.05j
    res = []
    for m in magnitudes:
        xi = m * d
        val = 2 * xi[-1] ** 2 + 0.5 * (xi[0] ** 2 + xi[1] ** 2)
        mag = math.sqrt(val)
        a0, tau0 = alpha * m, tt * m * m
        v = ode_dno(OdeProblem(xi, val, s0, a0, tau0))
        pred = mag + math.sqrt(2) / 2 * s0 + a0 / (2 * mag) - 0.25 * tau0 / val
        res.append(abs(v - pred))
    return [res[i + 1] / res[i] for i in range(len(res) - 1)]


def suite_ode(cfg: RunConfig) -> List[Check]:
    from .geometry import build_chart, builtin_domain
    from .oracle import OdeProblem, ode_dno

    checks = []
    tol = cfg.tolerances["ode_rel"]
    start = time.perf_counter()
    flat = build_chart(builtin_domain("halfspace-flat", 2))
    rays = [(0, 0, 1), (0, 0, -1), (1, 0, 0), (0.6, -0.8, 0), (1, 1, -1), (-0.3, 0.5, 0.8)]
    worst = 0.0
    for ray in rays:
        d = np.asarray(ray, float) / np.linalg.norm(ray)
        for m in (4, 8, 16, 32):
            xi = m * d
            val = flat.xi_squared(np.zeros(3), xi)[0]
            v = ode_dno(OdeProblem(xi, val))
            worst = max(worst, abs(v - math.sqrt(val)) / math.sqrt(val))
    checks.append(Check("flat model DNO equals |Xi| on 6 rays x 4 magnitudes", worst < tol, worst, tol,
                        "flat-model-exponential"))
    _timed(checks, "flat model", start, 10.0, "flat-model-exponential")

    start = time.perf_counter()
    v = ode_dno(OdeProblem(np.array([0.0, 0.0, 10 / math.sqrt(2)]), 100.0, s0=math.sqrt(2)))
    target = 1 + math.sqrt(101)
    dev = abs(v - target)
    ctol = cfg.tolerances["closed_form"]
    checks.append(Check("quadratic-root case s0=sqrt2, Xi=10 gives 1+sqrt(101)", dev < ctol, dev, ctol,
                        "order-minus-one-remainder"))
    lo, hi = cfg.tolerances["ratio_low"], cfg.tolerances["ratio_high"]
    for i, r in enumerate(constant_coefficient_ratios()):
        checks.append(Check(f"remainder ratio doubling {i + 1}", lo <= r <= hi, r, [lo, hi],
                            "order-minus-one-remainder"))
    _timed(checks, "remainder decay", start, 30.0, "order-minus-one-remainder")
    return checks


def suite_strip(cfg: RunConfig) -> List[Check]:
    from .oracle import strip_dno

    checks = []
    start = time.perf_counter()
    factor = cfg.tolerances["strip_factor"] * (1 - cfg.tolerances["strip_slack"])
    for k in (16, 32):
        res = strip_dno(k)
        checks.append(Check(f"xx-term improves strip residual at k={k}", res.improvement >= factor,
                            res.improvement, factor, "xx-term-strip"))
        checks.append(Check(f"fitted xx coefficient at k={k} (reported)", True, res.fitted_coefficient,
                            "report", "xx-term-strip"))
    _timed(checks, "strip", start, 300.0, "xx-term-strip")
    return checks


def pure_and_oblique_cancellation(chart, q: int, phis: Sequence[float]):
    """(pure-ray deviation, oblique deviations by |xi_L|/|xi_T|, fitted slope) for every boundary row."""
    from .dno import boundary_rows, cancellation_check

    d = chart.dim
    rows = boundary_rows(chart.n, q)
    pure = [np.eye(d)[-1] * -m for m in (4, 8, 16, 32, 64)]
    pure_dev = max(cancellation_check(chart, pure, J, phis, q).max_deviation for J in rows)
    ratios, devs = [], []
    for xl in (0.5, 1.0, 2.0):
        for m in (8, 16, 32, 64):
            xi = np.zeros(d)
            xi[0] = xl
            xi[-1] = -m
            dev = max(cancellation_check(chart, [xi], J, phis, q).max_deviation for J in rows)
            ratios.append(xl / m)
            devs.append(dev)
    ratios, devs = np.asarray(ratios), np.asarray(devs)
    good = devs > 1e-14
    slope = float(np.polyfit(np.log(ratios[good]), np.log(devs[good]), 1)[0]) if good.sum() >= 2 else math.inf
    bound = float(np.max(devs / ratios))
    return pure_dev, bound, slope


def suite_cancellation(cfg: RunConfig) -> List[Check]:
    import sympy as sp

    from .dno import boundary_rows, dno_symbol, dno_symbol_phi, lambda0_from_residues, phi_rho_weight

    start = time.perf_counter()
    chart = build_chart_from(cfg.as_plain())
    q = min(cfg.q, chart.n - 1)
    phis = [0.0, 0.5, -1.3]
    tol = cfg.tolerances["cancellation"]
    checks = []
    pure, bound, slope = pure_and_oblique_cancellation(chart, q, phis)
    checks.append(Check("weight-independent boundary term on the pure ray", pure < tol, pure, tol,
                        "weighted-cancellation"))
    checks.append(Check("oblique deviation / (|xi_L|/|xi_T|) bound", math.isfinite(bound), bound, "finite",
                        "weighted-cancellation"))
    checks.append(Check("oblique fitted slope in |xi_L|/|xi_T| (>= 1)", slope >= 1 - 0.05, slope, 1.0,
                        "weighted-cancellation"))
    L0 = lambda0_from_residues()
    net = phi_rho_weight() + L0["tau"] * 2 * sp.Rational(1, 2)
    checks.append(Check("rho channel + tau channel on pure ray: -3/4 + 1 - 1/4 = 0", sp.simplify(net) == 0,
                        str(net), "exact", "weighted-dno-shift"))
    worst = 0.0
    for m in (4.0, 16.0, 64.0):
        xi = np.zeros(chart.dim)
        xi[-1] = -m
        base = dno_symbol(chart, None, xi, q)
        for phi in phis[1:]:
            shifted = dno_symbol_phi(chart, None, xi, q, phi)
            for J in boundary_rows(chart.n, q):
                worst = max(worst, abs(shifted.entry(J) - base.entry(J) + phi))
    checks.append(Check("weighted DNO shift equals -phi' on the pure ray", worst < 1e-12, worst, 1e-12,
                        "weighted-dno-shift"))
    _timed(checks, "cancellation", start, 5.0, "weighted-cancellation")
    return checks


def suite_crosscheck(cfg: RunConfig) -> List[Check]:
    from .oracle import square_crosscheck

    start = time.perf_counter()
    chart = build_chart_from(cfg.as_plain())
    rep = square_crosscheck(chart, cfg.q, trials=5)
    t = cfg.tolerances
    spec = [
        ("principal-symbol deviation", rep.principal_deviation, t["crosscheck_principal"]),
        ("normal-derivative coefficient deviation", rep.rho_deviation, t["crosscheck_principal"]),
        ("s-matrix off-diagonal (assembled)", rep.s_offdiag_assembled, t["crosscheck_offdiag"]),
        ("s-matrix off-diagonal (direct)", rep.s_offdiag_direct, t["crosscheck_offdiag"]),
        ("s diagonal vs closed form", rep.s_eqn_deviation, t["crosscheck_closed_form"]),
        ("tau normal entry vs transverse expansion", rep.tau_deviation, t["crosscheck_closed_form"]),
        ("random quadratic forms, direct vs assembled", max(rep.trial_deviations, default=0.0),
         t["crosscheck_principal"]),
    ]
    checks = [Check(name, val < tol, val, tol, "square-operator-crosscheck") for name, val, tol in spec]
    checks.append(Check("first-order tangential deviation (reported)", True, rep.first_order_deviation,
                        "report", "square-operator-crosscheck"))
    _timed(checks, "crosscheck", start, 60.0, "square-operator-crosscheck")
    return checks


def microlocal_samples(count: int = 10_000, dim: int = 3, seed: int = 11) -> np.ndarray:
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(count, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * np.exp(rng.uniform(math.log(0.05), math.log(1e4), size=(count, 1)))


def scaled_derivative_bounds(cut, dim: int = 3, levels=range(0, 12), seed: int = 5):
    """max over sampled directions of |xi|^k |d^k psi| per dyadic level, k = 1, 2."""
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(64, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    w = rng.normal(size=(64, dim))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    out = {1: [], 2: []}
    for j in levels:
        r = 2.0 ** j
        xi = r * dirs
        h = 1e-3 * r
        f = cut.psi_minus
        p, m0, mm = f(xi + h * w), f(xi), f(xi - h * w)
        out[1].append(float(np.max(np.abs(p - mm) / (2 * h))) * r)
        out[2].append(float(np.max(np.abs(p - 2 * m0 + mm) / h ** 2)) * r * r)
    return out


def suite_microlocal(cfg: RunConfig) -> List[Check]:
    from .dno import microlocal_cutoffs

    start = time.perf_counter()
    cut = microlocal_cutoffs()
    xi = microlocal_samples()
    plus, zero, minus = cut.psi_plus(xi), cut.psi_zero(xi), cut.psi_minus(xi)
    total = plus + zero + minus
    checks = [Check("partition sums to 1 exactly at 10^4 samples", bool(np.all(total == 1.0)),
                    float(np.max(np.abs(total - 1.0))), 0.0, "microlocal-partition")]
    r = np.linalg.norm(xi, axis=1)
    xl = np.linalg.norm(xi[:, :-1], axis=1)
    xt = xi[:, -1]
    big = r >= cut.low_radius
    bad_plus = np.sum((xt <= cut.support * xl) & (plus != 0)) + np.sum((xt >= cut.full * xl) & big & (plus != 1))
    bad_minus = np.sum((-xt <= cut.support * xl) & (minus != 0)) + np.sum((-xt >= cut.full * xl) & big & (minus != 1))
    bad_low = np.sum((r < cut.low_radius / 2) & (zero != 1))
    checks.append(Check("psi+ support and identity band", bad_plus == 0, int(bad_plus), 0, "microlocal-partition"))
    checks.append(Check("psi- support and identity band", bad_minus == 0, int(bad_minus), 0, "microlocal-partition"))
    checks.append(Check("low frequencies belong to psi0", bad_low == 0, int(bad_low), 0, "microlocal-partition"))
    bounds = scaled_derivative_bounds(cut)
    for k in (1, 2):
        vals = bounds[k]
        spread = max(vals[1:]) / max(min(vals[1:]), 1e-300)
        checks.append(Check(f"|xi|^{k} |d^{k} psi-| bounded over dyadic sweep", spread < 1.01 and max(vals) < 1e3,
                            max(vals), "bounded, flat in |xi|", "microlocal-symbol-class"))
    _timed(checks, "microlocal", start, 5.0, "microlocal-partition")
    return checks


def kohn_ratios(chart, J, xi_l=(1.0, 0.5), magnitudes=(8, 16, 32, 64, 128)):
    """Normalized residuals |composed - Kohn form|/|xi| as xi_{2n-1} = -m runs off with xi_L fixed.

    Returns the residuals and their doubling ratios.
    """
    from .dno import kohn_comparison

    res = []
    for m in magnitudes:
        xi = np.zeros(chart.dim)
        k = min(len(xi_l), chart.dim - 1)
        xi[:k] = xi_l[:k]
        xi[-1] = -m
        res.append(abs(kohn_comparison(chart, xi, J)) / float(np.linalg.norm(xi)))
    ratios = [res[i + 1] / res[i] if res[i] > 0 else 0.0 for i in range(len(res) - 1)]
    return res, ratios


def suite_kohn(cfg: RunConfig) -> List[Check]:
    from .dno import boundary_rows, kohn_comparison
    from .geometry import build_chart, builtin_domain

    start = time.perf_counter()
    chart = build_chart_from(cfg.as_plain())
    q = min(cfg.q, chart.n - 1)
    lim = cfg.tolerances["kohn_ratio"]
    checks = []
    for J in boundary_rows(chart.n, q):
        res, ratios = kohn_ratios(chart, J)
        if max(res) < 1e-9:
            checks.append(Check(f"Kohn residual row {J.label()} at round-off", True, max(res), 1e-9, "kohn-comparison"))
            continue
        worst = max(ratios)
        checks.append(Check(f"Kohn normalized residual ratio row {J.label()}", worst <= lim, worst, lim,
                            "kohn-comparison"))
    flat = build_chart(builtin_domain("halfspace-flat", chart.n))
    exact = [kohn_comparison(flat, -m * np.eye(flat.dim)[-1], J)
             for J in boundary_rows(flat.n, q) for m in (1.0, 3.0, 7.0, 64.0, 1e5)]
    worst_exact = max(abs(v) for v in exact)
    checks.append(Check("flat model Kohn residual on the xi_L = 0 ray", worst_exact == 0, worst_exact, 0.0,
                        "kohn-comparison"))
    # off that ray the sqrt2/2 frame factors round, so zero is measured relative to |xi|^2
    eps = float(np.finfo(float).eps)
    worst = 0.0
    for J in boundary_rows(flat.n, q):
        for m in (4, 16, 64):
            xi = np.zeros(flat.dim)
            xi[0], xi[-1] = 0.5 * m, -m
            worst = max(worst, abs(kohn_comparison(flat, xi, J)) / float(xi @ xi))
    checks.append(Check("flat model oblique Kohn residual / |xi|^2 at round-off", worst <= 8 * eps, worst, 8 * eps,
                        "kohn-comparison"))
    _timed(checks, "kohn", start, 10.0, "kohn-comparison")
    return checks


SUITE_FUNCS: Dict[str, Callable[[RunConfig], List[Check]]] = {
    "forms": suite_forms,
    "residues": suite_residues,
    "lambda0": suite_lambda0,
    "ode": suite_ode,
    "strip": suite_strip,
    "cancellation": suite_cancellation,
    "crosscheck": suite_crosscheck,
    "microlocal": suite_microlocal,
    "kohn": suite_kohn,
}

VERIFY_COLUMNS = ("check", "status", "measured", "tolerance", "tag")


def run_suite(name: str, cfg: RunConfig) -> List[Check]:
    try:
        return SUITE_FUNCS[name](cfg)
    except Exception as exc:  # a crashing suite is a failed check, not a traceback
        return [Check(f"{name} suite raised", False, f"{type(exc).__name__}: {exc}", "no error", name)]


def cmd_verify(cfg: RunConfig, suite: str, fmt: str, out: Optional[str]) -> int:
    checks = run_suite(suite, cfg)
    passed = sum(c.passed for c in checks)
    meta = meta_for(cfg, "verify", suite=suite, passed=passed, total=len(checks))
    emit(render(meta, VERIFY_COLUMNS, [c.as_row() for c in checks], fmt), out)
    return EXIT_OK if passed == len(checks) else EXIT_FAIL


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (defaults are used when omitted)")
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--format", choices=("csv", "json"), help="report format (overrides the config)")
    common.add_argument("--jobs", type=int, help="worker processes (fallback: DNOLAB_JOBS)")
    parser = argparse.ArgumentParser(prog="dnolab", description="DNO symbols of the dbar-Neumann Laplacian")
    parser.add_argument("--version", action="version", version=f"dnolab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("symbol", parents=[common], help="DNO symbol table over the frequency grid")
    v = sub.add_parser("verify", parents=[common], help="run a verification suite")
    v.add_argument("suite", choices=SUITES)
    sub.add_parser("sweep", parents=[common], help="oracle-vs-prediction convergence report")
    sub.add_parser("chart", parents=[common], help="dump chart geometry at the chart point")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    if hasattr(sys.stdout, "reconfigure"):
        sys.stdout.reconfigure(encoding="utf-8", newline="\n")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        fmt = args.format or cfg.format
        jobs = resolve_jobs(args.jobs, cfg)
        if args.command == "verify":
            return cmd_verify(cfg, args.suite, args.format or "json", args.out)
        handler = {"symbol": cmd_symbol, "sweep": cmd_sweep, "chart": cmd_chart}[args.command]
        return handler(cfg, fmt, args.out, jobs)
    except ConfigError as exc:
        print(f"dnolab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
