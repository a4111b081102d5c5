"""Command-line front end: ``build``, ``certify``, ``apply`` and ``sweep``.

Exit codes: 0 pass, 1 verdict failure, 2 configuration or IO error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .certify import (SWEEP_COLUMNS, CertOptions, clean_json, certify, relative_variation,
                      rows_to_csv, stability_sweep)
from .config import ConfigError, ExperimentConfig
from .haar import HaarConstructionError, analyze, build_haar, verify_haar
from .operators import (Symbol, SymbolError, alpha_preset, alphas_from_json,
                        apply_multiplier, petermichl_adjoint_apply, petermichl_apply,
                        petermichl_symbol, symbol_from_json)
from .tree import (TREE_FORMAT_HELP, DyadicTree, TreeError, build_random, build_uniform,
                   load_tree, tree_stats, verify_dyadic)

OUT_ENV = "DYADIC_CZ_OUT"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
STABLE_COLUMNS = ("size_C", "smooth_Cx", "smooth_Cy", "haar_lip_C")
VARIATION_COLUMNS = ("size_C", "smooth_Cx", "smooth_Cy", "symbol_Ba", "symbol_Bb",
                     "haar_lip_C", "growth_eps")


# construction from config ---------------------------------------------------

def make_tree(cfg: ExperimentConfig, depth: int | None = None,
              validate: bool | None = None) -> DyadicTree:
    t = cfg.tree
    if t.kind == "file":
        return load_tree(t.path, strict=t.strict,
                         validate=t.validate if validate is None else validate)
    d = t.depth if depth is None else depth
    if t.kind == "uniform":
        return build_uniform(d, t.branching, t.leaf_weight_rule, t.weights, t.total_mass)
    return build_random(t.seed, d, tuple(t.branching_range), t.weight_law, t.stop_prob)


def make_system(cfg: ExperimentConfig, tree: DyadicTree):
    h = cfg.haar
    return build_haar(tree, h.strategy, h.seed, h.nonvanish_tol)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("symbol.path", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("symbol.path", f"invalid JSON in {path}: {exc}") from exc


def make_symbol(cfg: ExperimentConfig, tree: DyadicTree, system):
    """Return ``(symbol, alphas)``; ``alphas`` is None unless the symbol is Petermichl."""
    s = cfg.symbol
    n = system.n_functions
    if s.kind == "petermichl":
        alphas = (alphas_from_json(_read_json(s.path), system) if s.path
                  else alpha_preset(system, s.alphas))
        return petermichl_symbol(tree, system, alphas), alphas
    if s.kind == "variable" or s.path:
        return symbol_from_json(_read_json(s.path), system), None
    name, _, arg = s.preset.partition(":")
    if name == "ones":
        return Symbol.from_constant(np.ones(n)), None
    if name == "zeros":
        return Symbol.from_constant(np.zeros(n)), None
    rng = np.random.default_rng(int(arg or 0))
    return Symbol.from_constant(rng.uniform(-1.0, 1.0, n)), None


# output helpers ---------------------------------------------------------------

def dumps(obj) -> str:
    return json.dumps(clean_json(obj), sort_keys=True, indent=2) + "\n"


def write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def tree_document(tree: DyadicTree) -> dict:
    doc = tree.to_json()
    doc["measures"] = [float(m) for m in tree.measure]
    return doc


def read_function(path, n: int) -> np.ndarray:
    """Newline-delimited values; blank lines and ``#`` comments are skipped."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError("apply.input", f"cannot read {path}: {exc.strerror}") from exc
    vals = []
    for i, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            vals.append(float(line))
        except ValueError as exc:
            raise ConfigError("apply.input", f"{path}:{i}: not a number: {line!r}") from exc
    if len(vals) != n:
        raise ConfigError("apply.input", f"function has {len(vals)} values, tree has "
                          f"{n} leaves")
    return np.array(vals)


def format_function(values) -> str:
    return "".join(f"{float(v)!r}\n" for v in values)


def coefficient_document(system, f) -> dict:
    c = analyze(system.tree, system, f)
    return {"scaling": float(c.scaling),
            "detail": [{"cube": int(system.fn_cube[k]), "index": int(system.fn_index[k]),
                        "coef": float(c.detail[k])} for k in range(system.n_functions)]}


def manifest(cfg: ExperimentConfig, tree: DyadicTree, system) -> dict:
    dy = verify_dyadic(tree)
    st = dy.stats or tree_stats(tree)
    hr = verify_haar(tree, system, gram_limit=cfg.certify.gram_limit)
    return {
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": seeds(cfg),
        "tree": {"n_leaves": tree.n_leaves, "n_cubes": tree.n_cubes, "depth": tree.depth,
                 "M": st.M, "dyadic_doubling_C": st.dyadic_doubling_C,
                 "growth_eps": st.growth_eps, "dyadic_ok": dy.ok,
                 "failures": dy.failures},
        "haar": {"n_functions": system.n_functions, "C1": hr.C1, "C2": hr.C2,
                 "C2_over_C1": hr.C2 / hr.C1 if hr.C1 > 0 else math.inf,
                 "h5_constant": hr.h5_constant, "ok": hr.ok,
                 "gram_residual": hr.gram_residual,
                 "mean_zero_residual": hr.mean_zero_residual},
    }


def seeds(cfg: ExperimentConfig) -> dict:
    out = {"haar": cfg.haar.seed, "certify": cfg.certify.seed}
    if cfg.tree.kind == "random":
        out["tree"] = cfg.tree.seed
    for text in (cfg.symbol.preset, cfg.symbol.alphas):
        name, _, arg = text.partition(":")
        if name in ("random", "random-sign"):
            out["symbol"] = int(arg or 0)
    return out


# commands ---------------------------------------------------------------------

def cmd_build(cfg: ExperimentConfig, out: Path, args) -> int:
    tree = make_tree(cfg)
    system = make_system(cfg, tree)
    man = manifest(cfg, tree, system)
    write(out, "tree.json", dumps(tree_document(tree)))
    write(out, "haar.json", dumps(system.to_json()))
    write(out, "manifest.json", dumps(man))
    ok = man["tree"]["dyadic_ok"] and man["haar"]["ok"]
    t, h = man["tree"], man["haar"]
    print(f"built {t['n_leaves']} leaves, M={t['M']}, C={t['dyadic_doubling_C']:.6g}, "
          f"C1={h['C1']:.6g}, C2={h['C2']:.6g} -> {out}")
    if not ok:
        print("verification failed: see manifest.json", file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_certify(cfg: ExperimentConfig, out: Path, args) -> int:
    # certification judges the input, so file trees load unvalidated
    tree = make_tree(cfg, validate=False)
    system = make_system(cfg, tree)
    symbol, alphas = make_symbol(cfg, tree, system)
    rep = certify(tree, system, symbol, alphas, cfg.certify.options(args.threads))
    doc = {"config": cfg.to_dict(), "seeds": seeds(cfg), "report": rep.to_json(),
           "passed": rep.passed}
    write(out, "report.json", dumps(doc))
    write(out, "report.csv", rows_to_csv([rep.csv_row()]))
    _summary(rep.verdicts, rep.notes)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_sweep(cfg: ExperimentConfig, out: Path, args) -> int:
    if cfg.tree.kind == "file":
        raise ConfigError("tree.kind", "sweep needs a 'uniform' or 'random' tree")
    depths = sorted(cfg.certify.depths)
    opts: CertOptions = cfg.certify.options(args.threads)

    def operator(tree):
        system = make_system(cfg, tree)
        symbol, alphas = make_symbol(cfg, tree, system)
        return system, symbol, alphas

    rows = stability_sweep(lambda d: make_tree(cfg, depth=d), operator, depths, opts)
    ran = [r for r in rows if not r.get("skipped")]
    variation = {c: relative_variation(rows, c) for c in VARIATION_COLUMNS}
    verdicts = {"rows_ran": len(ran) == len(rows) and bool(ran)}
    for c in STABLE_COLUMNS:
        vals = [r[c] for r in ran]
        verdicts[f"{c}_finite"] = all(v is not None and math.isfinite(v) for v in vals)
        verdicts[f"{c}_stable"] = variation[c] < cfg.certify.stability_tol
    verdicts["rows_passed"] = all(r.get("passed") for r in ran)
    passed = all(verdicts.values())
    doc = {"config": cfg.to_dict(), "seeds": seeds(cfg), "rows": rows,
           "relative_variation": variation, "verdicts": verdicts, "passed": passed}
    write(out, "sweep.json", dumps(doc))
    write(out, "sweep.csv", rows_to_csv(rows, SWEEP_COLUMNS + ["skipped", "passed"]))
    _summary(verdicts, [f"relative variation {c}: {v:.4g}" for c, v in variation.items()])
    return EXIT_OK if passed else EXIT_FAIL


def cmd_apply(cfg: ExperimentConfig, out: Path, args) -> int:
    src = args.input or cfg.apply.input
    if not src:
        raise ConfigError("apply.input", "no input function file (config or --input)")
    tree = make_tree(cfg)
    system = make_system(cfg, tree)
    f = read_function(src, tree.n_leaves)
    op = cfg.apply.operator
    if op == "auto":
        op = "petermichl" if cfg.symbol.kind == "petermichl" else "multiplier"
    if op in ("petermichl", "petermichl-adjoint"):
        if cfg.symbol.kind != "petermichl":
            raise ConfigError("apply.operator", f"{op!r} needs symbol.kind 'petermichl'")
        _, alphas = make_symbol(cfg, tree, system)
        fn = petermichl_apply if op == "petermichl" else petermichl_adjoint_apply
        g = fn(tree, system, alphas, f)
    else:
        symbol, _ = make_symbol(cfg, tree, system)
        g = apply_multiplier(tree, system, symbol, f)
    write(out, "output.txt", format_function(g))
    write(out, "coefficients.json", dumps({
        "operator": op, "config": cfg.to_dict(), "seeds": seeds(cfg),
        "input": coefficient_document(system, f),
        "output": coefficient_document(system, g)}))
    print(f"applied {op} to {tree.n_leaves} values -> {out / 'output.txt'}")
    return EXIT_OK


def _summary(verdicts: dict, notes: list) -> None:
    failed = [k for k, v in verdicts.items() if not v]
    for note in notes:
        print(f"note: {note}", file=sys.stderr)
    if failed:
        print(f"FAIL: {', '.join(failed)}", file=sys.stderr)
    else:
        print(f"PASS: {len(verdicts)} verdicts")


COMMANDS = {"build": cmd_build, "certify": cmd_certify, "apply": cmd_apply,
            "sweep": cmd_sweep}


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dyadic-cz", description=__doc__.splitlines()[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog=TREE_FORMAT_HELP)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    helps = {"build": "build the tree and Haar system, write artifacts and a manifest",
             "certify": "run the certification checks and write report.json/.csv",
             "apply": "apply the configured operator to a function file",
             "sweep": "certify over the configured depth list, write sweep.json/.csv"}
    for name, text in helps.items():
        s = sub.add_parser(name, help=text, description=text, epilog=TREE_FORMAT_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        s.add_argument("--config", help="experiment config (JSON); defaults if omitted")
        s.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
        s.add_argument("--threads", type=int, default=1, help="scan threads")
        s.add_argument("--seed-override", type=int,
                       help="replace the tree, Haar and certification seeds")
        if name == "apply":
            s.add_argument("--input", help="function file, one value per leaf")
    return p


def resolve(args) -> tuple[ExperimentConfig, Path]:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed_override is not None:
        cfg = dataclasses.replace(
            cfg, tree=dataclasses.replace(cfg.tree, seed=args.seed_override),
            haar=dataclasses.replace(cfg.haar, seed=args.seed_override),
            certify=dataclasses.replace(cfg.certify, seed=args.seed_override))
    if args.threads < 1:
        raise ConfigError("--threads", "must be >= 1")
    out = Path(args.out or cfg.out or os.environ.get(OUT_ENV) or "out")
    return cfg, out


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        cfg, out = resolve(args)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (TreeError, SymbolError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
    except HaarConstructionError as exc:
        print(f"haar construction failed: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
