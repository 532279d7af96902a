"""Command-line front end.

    ncres residue|zeta|heat|curvature|oracle-compare --config job.cfg [--out DIR]
    ncres selftest [--seed N] [--only AC1,AC4]

Config files are INI-style key-value text with sections; see README.md.
Every run writes result.json (records plus the effective configuration)
and, where meaningful, table.tsv.  Failures write error.json and exit 2.
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
from pathlib import Path

MODES = ("residue", "zeta", "heat", "curvature", "oracle-compare")

DEFAULTS = {
    "job": {"n": "2"},
    "theta": {"theta12": "0.0"},
    "operator": {"Q": "laplacian", "A": "identity", "modulus": "1j", "power": ""},
    "contour": {"beta": repr(math.pi), "nodes": "48"},
    "oracle": {"K": "40", "t_min": "0.02", "t_max": "0.1", "samples": "24",
               "exponents": "-1,0,1,2"},
    "zeta": {"grid": "", "poles": "3", "K": "200"},
}


class ConfigError(Exception):
    pass


def load_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        cp.read(path)
        cp.set("job", "_base", str(path.parent.resolve()))
    else:
        cp.set("job", "_base", os.getcwd())
    return cp


def _theta(cp):
    from .nc_algebra import ThetaMatrix
    n = cp.getint("job", "n")
    if cp.has_option("theta", "entries"):
        vals = [float(x) for x in cp.get("theta", "entries").replace(",", " ").split()]
        if len(vals) != n * n:
            raise ConfigError(f"theta entries need {n * n} numbers")
        import numpy as np
        return ThetaMatrix(np.array(vals).reshape(n, n), strict=True)
    if n != 2:
        if float(cp.get("theta", "theta12")) != 0.0:
            raise ConfigError("theta12 applies to n = 2; give theta entries instead")
        return ThetaMatrix.zero(n)
    return ThetaMatrix.two(float(cp.get("theta", "theta12")))


def _path(cp, ref):
    p = Path(ref)
    if not p.is_absolute():
        p = Path(cp.get("job", "_base")) / p
    if not p.exists():
        raise ConfigError(f"referenced file {p} does not exist")
    return p


def _element(cp, theta, ref):
    """NCElement from 'file:PATH' or inline 'k1,k2:value; ...' coefficients."""
    from .nc_algebra import NCElement, load
    ref = ref.strip()
    if ref.startswith("file:"):
        el = load(_path(cp, ref[5:]))
        if el.theta != theta:
            raise ConfigError("element file theta differs from the job theta")
        return el
    coeffs = {}
    for part in ref.split(";"):
        part = part.strip()
        if not part:
            continue
        k, _, v = part.partition(":")
        coeffs[tuple(int(x) for x in k.split(","))] = complex(v.strip().replace(" ", ""))
    return NCElement.from_dict(theta, coeffs)


def _operator(cp, theta, key):
    from .acceptance import flat_laplacian
    from .heat_geometry import ConformalData, conformal_laplacian, multiplication_symbol
    from .symbol_calculus import parse_symbol_file
    ref = cp.get("operator", key).strip()
    if ref == "laplacian":
        return flat_laplacian(theta)
    if ref == "identity":
        return multiplication_symbol(1.0, theta)
    if ref == "conformal":
        h = _element(cp, theta, cp.get("operator", "h"))
        return conformal_laplacian(ConformalData(h, complex(cp.get("operator", "modulus"))))
    if ref.startswith("symbol:"):
        S = parse_symbol_file(_path(cp, ref[7:]))
        if S.theta != theta:
            raise ConfigError(f"symbol file for {key} has a different theta")
        return S
    if ref.startswith("element:"):
        return multiplication_symbol(_element(cp, theta, ref[8:]))
    raise ConfigError(f"unknown operator reference {ref!r} for {key}")


def _contour(cp):
    from .functional_calculus import ContourSpec
    return ContourSpec(beta=float(cp.get("contour", "beta")),
                       eps=float(cp.get("contour", "eps")) if cp.has_option("contour", "eps") else None,
                       R=float(cp.get("contour", "R")) if cp.has_option("contour", "R") else None,
                       nodes=cp.getint("contour", "nodes"))


def _complex_json(z):
    z = complex(z)
    return {"re": z.real, "im": z.imag}


def _effective(cp):
    return {s: {k: v for k, v in cp.items(s) if not k.startswith("_")} for s in cp.sections()}


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------

def run_residue(cp):
    from .functional_calculus import power_symbol
    from .symbol_calculus import compose
    from .traces_residues import residue
    theta = _theta(cp)
    A = _operator(cp, theta, "A")
    power = cp.get("operator", "power").strip()
    if power:
        Q = _operator(cp, theta, "Q")
        z = complex(power)
        depth = 1
        o = complex(A.order) + complex(Q.order) * z + theta.n
        if abs(o.imag) < 1e-12 and abs(o.real - round(o.real)) < 1e-12 and round(o.real) >= 0:
            depth = int(round(o.real)) + 1
        P = power_symbol(Q, z, depth, _contour(cp))
        A = compose(A, P, depth)
    val = residue(A)
    rec = {"quantity": "residue", "value": _complex_json(val), "error": 0.0,
           "provenance": "residue-derived"}
    table = "quantity\tvalue_re\tvalue_im\n" + f"residue\t{val.real:.15g}\t{val.imag:.15g}\n"
    return [rec], table


def run_zeta(cp):
    from .traces_residues import zeta
    theta = _theta(cp)
    A = _operator(cp, theta, "A")
    Q = _operator(cp, theta, "Q")
    grid = [complex(x) for x in cp.get("zeta", "grid").replace(";", ",").split(",") if x.strip()]
    rep = zeta(A, Q, z_grid=grid, n_poles=cp.getint("zeta", "poles"), contour=_contour(cp),
               K=cp.getint("zeta", "K"), finite_parts=[0.0] if A.is_differential() else ())
    recs = []
    for r in rep.to_records():
        r["provenance"] = "residue-derived"
        recs.append(r)
    return recs, rep.to_table()


def run_heat(cp):
    from .heat_geometry import heat_coefficients
    theta = _theta(cp)
    A = _operator(cp, theta, "A")
    Q = _operator(cp, theta, "Q")
    H = heat_coefficients(A, Q, contour=_contour(cp))
    return H.to_records(), H.to_table()


def run_curvature(cp):
    from .heat_geometry import ConformalData, scalar_curvature_pairing
    from .nc_algebra import NCElement
    theta = _theta(cp)
    h = _element(cp, theta, cp.get("operator", "h"))
    a = NCElement.unit(theta)
    if cp.has_option("operator", "a"):
        a = _element(cp, theta, cp.get("operator", "a"))
    cd = ConformalData(h, complex(cp.get("operator", "modulus")))
    val = scalar_curvature_pairing(cd, a, contour=_contour(cp))
    rec = {"quantity": "curvature_pairing", "value": _complex_json(val),
           "provenance": "residue-derived", "error": None}
    table = "quantity\tvalue_re\tvalue_im\n" + \
        f"curvature_pairing\t{val.real:.15g}\t{val.imag:.15g}\n"
    return [rec], table


def run_oracle_compare(cp):
    from .heat_geometry import heat_coefficients
    from .spectral_oracle import fit_expansion, heat_samples, operator_matrix
    from .symbol_calculus import ClassicalSymbol
    theta = _theta(cp)
    A = _operator(cp, theta, "A")
    Q = _operator(cp, theta, "Q")
    H = heat_coefficients(A, Q, contour=_contour(cp))
    M = operator_matrix(Q, cp.getint("oracle", "K"))
    a = _multiplier_of(A)
    S = heat_samples(M, a, window=(float(cp.get("oracle", "t_min")),
                                   float(cp.get("oracle", "t_max"))),
                     count=cp.getint("oracle", "samples"))
    exps = [float(x) for x in cp.get("oracle", "exponents").split(",")]
    fit = fit_expansion(S, exps)
    scale = max(abs(c) for c in H.coefficients) or 1.0
    recs = []
    lines = ["exponent\tresidue_re\tfitted_re\tabs_dev\tscaled_dev\tfit_condition\tfit_trusted"]
    for e, c, err in zip(H.exponents, H.coefficients, H.errors):
        try:
            f = fit.coefficient(e)
        except KeyError:
            continue
        dev = abs(c - f)
        recs.append({"exponent": e, "residue": _complex_json(c), "fitted": _complex_json(f),
                     "abs_dev": dev, "scaled_dev": dev / scale, "residue_error": err,
                     "fit_condition": fit.condition, "fit_trusted": fit.trusted,
                     "provenance": ["residue-derived", "oracle-fitted"]})
        lines.append(f"{e:.12g}\t{complex(c).real:.15g}\t{complex(f).real:.15g}\t{dev:.3e}\t"
                     f"{dev / scale:.3e}\t{fit.condition:.3g}\t{int(fit.trusted)}")
    recs.append({"quantity": "fit", "window": list(fit.window), "samples": fit.samples,
                 "rejected": len(S.rejected), "residual": fit.residual})
    return recs, "\n".join(lines) + "\n"


def _multiplier_of(A):
    """Left multiplier realised by an order-0 multiplication symbol (None for identity)."""
    from .spectral_oracle import differential_terms
    terms = differential_terms(A)
    if len(terms) != 1 or any(terms[0][0]):
        raise ConfigError("oracle-compare needs A to be a multiplication operator")
    c = terms[0][1]
    import numpy as np
    if not np.any(c.keys):
        if abs(c.vals[0] - 1) > 1e-15:
            raise ConfigError("scalar A other than 1 is not supported in oracle-compare")
        return None
    return c


RUNNERS = {"residue": run_residue, "zeta": run_zeta, "heat": run_heat,
           "curvature": run_curvature, "oracle-compare": run_oracle_compare}


def _write(out: Path | None, name: str, text: str):
    if out is None:
        sys.stdout.write(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _selftest(args) -> int:
    from . import acceptance
    names = [x.strip() for x in args.only.split(",")] if args.only else None
    results = []
    ok = True
    for name, fn in acceptance.ALL.items():
        if names and name not in names:
            continue
        kwargs = {}
        if args.seed is not None and "seed" in fn.__wrapped__.__code__.co_varnames:
            kwargs["seed"] = args.seed
        r = fn(**kwargs)
        results.append(r)
        ok &= r.passed
        print(r.line(timing=False), flush=True)
    print(f"selftest {'PASS' if ok else 'FAIL'} {sum(r.passed for r in results)}/{len(results)}")
    return 0 if ok else 1


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="ncres", description=__doc__.splitlines()[0])
    p.add_argument("mode", choices=MODES + ("selftest",))
    p.add_argument("--config", help="job configuration file")
    p.add_argument("--out", help="output directory (default: print to stdout)")
    p.add_argument("--seed", type=int, default=None, help="random seed for selftest")
    p.add_argument("--threads", type=int, default=None, help="worker threads for kernels")
    p.add_argument("--only", default="", help="selftest: comma-separated criteria")
    args = p.parse_args(argv)
    if args.threads:
        os.environ["OMP_NUM_THREADS"] = str(args.threads)
        try:
            import numba
            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        except ImportError:
            pass
    if args.mode == "selftest":
        return _selftest(args)
    out = Path(args.out) if args.out else None
    from .errors import NCResError
    try:
        cp = load_config(args.config)
        mode = cp.get("job", "mode", fallback=args.mode)
        if mode != args.mode:
            raise ConfigError(f"config mode {mode!r} differs from subcommand {args.mode!r}")
        recs, table = RUNNERS[args.mode](cp)
    except (ConfigError, NCResError, ValueError, OSError) as exc:
        err = {"status": "error", "mode": args.mode, "type": type(exc).__name__,
               "message": str(exc)}
        text = json.dumps(err, indent=2, sort_keys=True) + "\n"
        if out is not None:
            _write(out, "error.json", text)
        sys.stderr.write(text)
        return 2
    result = {"status": "ok", "mode": args.mode, "records": recs, "config": _effective(cp)}
    _write(out, "result.json", json.dumps(result, indent=2, sort_keys=True, default=str) + "\n")
    if out is not None and table:
        _write(out, "table.tsv", table)
    elif table:
        sys.stdout.write(table)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
