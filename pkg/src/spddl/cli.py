"""Command-line front end: ``spddl {generate,fit,code,eval,bench}``.

Exit codes: 0 success, 2 configuration error, 3 I/O failure, 4 solver
failure. Effective settings are resolved as CLI flag > config file >
built-in default and echoed into ``manifest.json`` in the output directory.
"""

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bench import bench_timing, write_timing_csv
from .datasets import LabeledDataset, PlantedSpec, SyntheticSpec, gen_gaussian_covariances, gen_planted_dataset, make_splits
from .dictionary import INIT_STRATEGIES, DlConfig, alternate_fit, code_batch
from .exceptions import DegenerateCombinationError, NotPositiveDefiniteError, SolverError
from .io import FormatError, load_dataset, load_dictionary, read_codes, save_dataset, save_dictionary, write_codes, write_json
from .metrics import recall_curve, sparsity_of
from .sparse_coding import SpgConfig

logger = logging.getLogger("spddl")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SOLVER = 0, 2, 3, 4

LAMBDA_SWEEP = [10.0 ** k for k in range(-5, 6)]

DEFAULTS = {
    "generate": {
        "mode": "planted", "dim": 5, "atoms": 100, "data": 1000, "active": 10, "classes": None,
        "noise": 0.01, "coeff_lo": 0.1, "coeff_hi": 1.0, "samples_per_cov": None,
        "split": [0.8, 0.1, 0.1], "format": "bin",
    },
    "fit": {
        "dataset": None, "splits": None, "split": "train", "atoms": None, "lam": 0.1,
        "lambda_dict": 0.1, "init": "riem-kmeans", "outer_iters": 50, "outer_tol": 1e-6,
        "cg_iters": 50, "coding_iters": 100,
    },
    "code": {
        "dataset": None, "splits": None, "dictionary": None, "lam": [0.1], "lambda_sweep": False,
        "split": None, "coding_iters": 100,
    },
    "eval": {
        "dataset": None, "splits": None, "codes": None, "k_max": 25,
        "gallery_split": "gallery", "query_split": "query",
    },
    "bench": {
        "dims": [3, 5, 10, 20, 40, 60, 80, 100], "atoms_list": [20, 50, 100, 200, 500, 1000],
        "fixed_atoms": 200, "fixed_dim": 10, "reps": 5, "coding_iters": 100, "lam": 0.1,
    },
}
GLOBAL_DEFAULTS = {"seed": 0, "out": "out", "threads": 1, "verbose": False, "no_timings": False}


class ConfigError(Exception):
    pass


def _csv_floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _csv_ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON or YAML file with default settings")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="output directory (created if absent)")
    common.add_argument("--threads", type=int, help="worker threads for batch coding")
    common.add_argument("--verbose", action="store_true", default=None)
    common.add_argument("--no-timings", action="store_true", default=None, dest="no_timings",
                        help="write zero wall times so outputs are byte-for-byte reproducible")

    parser = argparse.ArgumentParser(prog="spddl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    g.add_argument("--mode", choices=["gaussian", "planted"])
    g.add_argument("--dim", type=int)
    g.add_argument("--atoms", type=int)
    g.add_argument("--data", type=int)
    g.add_argument("--active", type=int)
    g.add_argument("--classes", type=int)
    g.add_argument("--noise", type=float)
    g.add_argument("--coeff-lo", type=float, dest="coeff_lo")
    g.add_argument("--coeff-hi", type=float, dest="coeff_hi")
    g.add_argument("--samples-per-cov", type=int, dest="samples_per_cov")
    g.add_argument("--split", type=_csv_floats, help="train,gallery,query fractions")
    g.add_argument("--format", choices=["bin", "json"])

    f = sub.add_parser("fit", parents=[common], help="learn a dictionary")
    f.add_argument("--dataset", type=Path)
    f.add_argument("--splits", type=Path)
    f.add_argument("--split")
    f.add_argument("--atoms", type=int)
    f.add_argument("--lambda", type=float, dest="lam")
    f.add_argument("--lambda-dict", type=float, dest="lambda_dict")
    f.add_argument("--init", choices=INIT_STRATEGIES)
    f.add_argument("--outer-iters", type=int, dest="outer_iters")
    f.add_argument("--outer-tol", type=float, dest="outer_tol")
    f.add_argument("--cg-iters", type=int, dest="cg_iters")
    f.add_argument("--coding-iters", type=int, dest="coding_iters")

    c = sub.add_parser("code", parents=[common], help="sparse-code a dataset")
    c.add_argument("--dataset", type=Path)
    c.add_argument("--splits", type=Path)
    c.add_argument("--dictionary", type=Path)
    c.add_argument("--lambda", type=float, nargs="+", dest="lam")
    c.add_argument("--lambda-sweep", action="store_true", default=None, dest="lambda_sweep",
                   help="code for every lambda in 1e-5, 1e-4, ..., 1e5")
    c.add_argument("--split")
    c.add_argument("--coding-iters", type=int, dest="coding_iters")

    e = sub.add_parser("eval", parents=[common], help="recall@K and sparsity of codes")
    e.add_argument("--dataset", type=Path)
    e.add_argument("--splits", type=Path)
    e.add_argument("--codes", type=Path)
    e.add_argument("--k-max", type=int, dest="k_max")
    e.add_argument("--gallery-split", dest="gallery_split")
    e.add_argument("--query-split", dest="query_split")

    b = sub.add_parser("bench", parents=[common], help="sparse-coding timing grids")
    b.add_argument("--dims", type=_csv_ints)
    b.add_argument("--atoms-list", type=_csv_ints, dest="atoms_list")
    b.add_argument("--fixed-atoms", type=int, dest="fixed_atoms")
    b.add_argument("--fixed-dim", type=int, dest="fixed_dim")
    b.add_argument("--reps", type=int)
    b.add_argument("--coding-iters", type=int, dest="coding_iters")
    b.add_argument("--lambda", type=float, dest="lam")
    return parser


def _load_config_file(path):
    if not path.exists():
        raise ConfigError(f"config: file {path} does not exist")
    text = path.read_text()
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
    except Exception as exc:
        raise ConfigError(f"config: cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    return data


def resolve_config(args):
    """Merge defaults, the config file (top level or a section named after
    the command) and explicit flags, in increasing precedence."""
    cmd = args.command
    eff = dict(GLOBAL_DEFAULTS)
    eff.update(DEFAULTS[cmd])
    if args.config is not None:
        data = _load_config_file(args.config)
        section = data.get(cmd, {}) if isinstance(data.get(cmd), dict) else {}
        flat = {k: v for k, v in data.items() if k not in DEFAULTS}
        for source in (flat, section):
            for key, value in source.items():
                key = key.replace("-", "_")
                if key == "lambda":
                    key = "lam"
                if key not in eff:
                    raise ConfigError(f"config: unknown field {key!r} for {cmd}")
                eff[key] = value
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        eff[key] = value
    if cmd == "code" and not isinstance(eff["lam"], list):
        eff["lam"] = [eff["lam"]]
    return eff


def _require(cond, field, message):
    if not cond:
        raise ConfigError(f"{field}: {message}")


def _require_path(eff, field):
    _require(eff[field] is not None, field, "is required")
    path = Path(eff[field])
    _require(path.exists(), field, f"path {path} does not exist")
    return path


def _validate(eff, cmd):
    _require(eff["threads"] is not None and int(eff["threads"]) >= 1, "threads", "must be >= 1")
    if cmd == "generate":
        for key in ("dim", "atoms", "data", "active"):
            _require(int(eff[key]) >= 1, key, "must be >= 1")
        _require(eff["active"] <= eff["atoms"], "active", "must not exceed atoms")
        _require(eff["noise"] >= 0, "noise", "must be >= 0")
        _require(0 < eff["coeff_lo"] <= eff["coeff_hi"], "coeff_lo", "need 0 < coeff_lo <= coeff_hi")
        _require(eff["classes"] is None or eff["classes"] >= 1, "classes", "must be >= 1")
        _require(len(eff["split"]) == 3 and abs(sum(eff["split"]) - 1) < 1e-9 and min(eff["split"]) >= 0,
                 "split", "needs three nonnegative fractions summing to 1")
        spc = eff["samples_per_cov"]
        _require(spc is None or spc >= eff["dim"] + 1, "samples_per_cov", "must be >= dim + 1")
    elif cmd == "fit":
        _require_path(eff, "dataset")
        _require(eff["atoms"] is None or eff["atoms"] >= 1, "atoms", "must be >= 1")
        _require(eff["lam"] >= 0, "lambda", "must be >= 0")
        _require(eff["lambda_dict"] >= 0, "lambda_dict", "must be >= 0")
        _require(eff["init"] in INIT_STRATEGIES, "init", f"must be one of {INIT_STRATEGIES}")
        for key in ("outer_iters", "cg_iters", "coding_iters"):
            _require(int(eff[key]) >= 1, key, "must be >= 1")
        _require(eff["outer_tol"] >= 0, "outer_tol", "must be >= 0")
    elif cmd == "code":
        _require_path(eff, "dataset")
        _require_path(eff, "dictionary")
        _require(all(v >= 0 for v in eff["lam"]), "lambda", "must be >= 0")
        _require(int(eff["coding_iters"]) >= 1, "coding_iters", "must be >= 1")
    elif cmd == "eval":
        _require_path(eff, "dataset")
        _require_path(eff, "codes")
        _require(int(eff["k_max"]) >= 1, "k_max", "must be >= 1")
    elif cmd == "bench":
        _require(int(eff["threads"]) == 1, "threads", "bench runs single-threaded (use --threads 1)")
        _require(all(d >= 1 for d in eff["dims"]), "dims", "must be >= 1")
        _require(all(n >= 1 for n in eff["atoms_list"]), "atoms_list", "must be >= 1")
        _require(int(eff["reps"]) >= 1, "reps", "must be >= 1")
        _require(int(eff["coding_iters"]) >= 1, "coding_iters", "must be >= 1")
    if cmd in ("fit", "code", "eval") and eff.get("splits") is not None:
        _require_path(eff, "splits")


def _manifest(eff, cmd, **extra):
    out = {
        "tool": "spddl",
        "version": __version__,
        "command": cmd,
        "seed": eff["seed"],
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in eff.items()},
    }
    out.update(extra)
    return out


def _load_dataset_with_splits(eff):
    path = Path(eff["dataset"])
    splits = None
    split_path = Path(eff["splits"]) if eff.get("splits") else path.parent / "splits.json"
    if split_path.exists():
        splits = json.loads(split_path.read_text())
    return load_dataset(path, splits)


def _ms(seconds, eff):
    return 0.0 if eff["no_timings"] else round(1e3 * seconds, 3)


def cmd_generate(eff, out):
    seed = int(eff["seed"])
    ext = ".json" if eff["format"] == "json" else ".spds"
    extra = {}
    if eff["mode"] == "gaussian":
        spec = SyntheticSpec(eff["dim"], eff["data"], eff["samples_per_cov"], eff["noise"], seed)
        mats = gen_gaussian_covariances(spec)
        rng = np.random.default_rng([seed, 1])
        dataset = LabeledDataset(mats, np.zeros(len(mats), dtype=np.int32), make_splits(len(mats), eff["split"], rng))
    else:
        spec = PlantedSpec(
            dim=eff["dim"], n_atoms=eff["atoms"], n_data=eff["data"], active=eff["active"],
            coeff_range=(eff["coeff_lo"], eff["coeff_hi"]), noise_scale=eff["noise"], seed=seed,
            n_classes=eff["classes"], split=tuple(eff["split"]),
        )
        atoms, dataset, true_codes = gen_planted_dataset(spec)
        dict_ext = ".json" if eff["format"] == "json" else ".spdd"
        save_dictionary(out / f"true_dictionary{dict_ext}", atoms)
        write_codes(out / "true_codes.jsonl", (
            {"index": j, "label": int(dataset.labels[j]), "coeffs": true_codes[j],
             "objective": 0.0, "iterations": 0, "wall_ms": 0.0}
            for j in range(len(dataset))
        ))
        extra["true_dictionary"] = f"true_dictionary{dict_ext}"
    save_dataset(out / f"dataset{ext}", dataset)
    write_json(out / "splits.json", dataset.splits)
    write_json(out / "manifest.json", _manifest(eff, "generate", dataset=f"dataset{ext}", count=len(dataset), **extra))
    print(f"wrote {len(dataset)} matrices of dim {dataset.dim} to {out}")


def _select(dataset, split):
    if split is None:
        return np.arange(len(dataset))
    if split not in dataset.splits:
        raise ConfigError(f"split: dataset has no split named {split!r}")
    return np.asarray(dataset.splits[split], dtype=int)


def _code_rows(idx, labels, codes, reports, eff):
    for j, code, rep in zip(idx, codes, reports):
        wall = rep.wall_time[-1] if rep.wall_time else 0.0
        yield {"index": int(j), "label": int(labels[j]), "coeffs": code.coeffs,
               "objective": float(code.objective), "iterations": int(rep.n_iter), "wall_ms": _ms(wall, eff)}


def cmd_fit(eff, out):
    dataset = _load_dataset_with_splits(eff)
    idx = _select(dataset, eff["split"] if dataset.splits else None)
    data = dataset.matrices[idx]
    n_atoms = eff["atoms"]
    if n_atoms is None:
        n_atoms = 2 * len(np.unique(dataset.labels[idx]))
    if eff["init"] != "random" and n_atoms > len(idx):
        raise ConfigError(f"atoms: {n_atoms} atoms exceed the {len(idx)} training matrices")
    cfg = DlConfig(lambda_dict=eff["lambda_dict"], cg_max_iter=eff["cg_iters"],
                   outer_max_iter=eff["outer_iters"], outer_tol=eff["outer_tol"])
    t0 = time.perf_counter()
    state = alternate_fit(data, n_atoms, eff["lam"], cfg, init=eff["init"],
                          spg_cfg=SpgConfig(max_iter=eff["coding_iters"]),
                          random_state=int(eff["seed"]), n_jobs=int(eff["threads"]))
    elapsed = time.perf_counter() - t0
    save_dictionary(out / "dictionary.spdd", state.dictionary)
    reports = state.spg_reports[-1]
    write_codes(out / "codes.jsonl", _code_rows(idx, dataset.labels, state.codes, reports, eff))
    wall = {k: (0.0 if eff["no_timings"] else round(v, 3)) for k, v in state.wall_ms.items()}
    wall["total"] = _ms(elapsed, eff)
    write_json(out / "manifest.json", _manifest(
        eff, "fit", n_atoms=n_atoms, objective_trace=[[i, v] for i, v in state.objective_trace],
        converged=state.converged, wall_ms=wall, dictionary="dictionary.spdd", codes="codes.jsonl",
    ))
    final = state.objective_trace[-1][1]
    print(f"final objective {final:.6g} after {state.n_iter} outer iterations")


def _format_lambda(lam):
    return f"{lam:g}"


def cmd_code(eff, out):
    dataset = _load_dataset_with_splits(eff)
    D = load_dictionary(eff["dictionary"])
    if D.shape[1] != dataset.dim:
        raise ConfigError(f"dictionary: atoms are {D.shape[1]}x{D.shape[1]} but data is {dataset.dim}x{dataset.dim}")
    idx = _select(dataset, eff["split"])
    lams = LAMBDA_SWEEP if eff["lambda_sweep"] else list(eff["lam"])
    cfg = SpgConfig(max_iter=eff["coding_iters"])
    files, summary = {}, []
    for lam in lams:
        codes, reports = code_batch(dataset.matrices[idx], D, lam, cfg, n_jobs=int(eff["threads"]))
        name = "codes.jsonl" if len(lams) == 1 else f"codes_lambda_{_format_lambda(lam)}.jsonl"
        write_codes(out / name, _code_rows(idx, dataset.labels, codes, reports, eff))
        files[_format_lambda(lam)] = name
        sp = np.array([c.sparsity for c in codes])
        summary.append((lam, float(sp.mean()), float(np.median(sp))))
    with open(out / "sparsity.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "mean_sparsity", "median_sparsity"])
        for lam, mean, med in summary:
            writer.writerow([_format_lambda(lam), repr(mean), repr(med)])
    write_json(out / "manifest.json", _manifest(eff, "code", codes=files, count=len(idx)))
    print(f"coded {len(idx)} matrices for {len(lams)} lambda value(s)")


def cmd_eval(eff, out):
    dataset = _load_dataset_with_splits(eff)
    rows = read_codes(eff["codes"])
    by_index = {int(r["index"]): r["coeffs"] for r in rows}
    gal = _select(dataset, eff["gallery_split"])
    qry = _select(dataset, eff["query_split"])
    missing = [int(j) for j in np.concatenate([gal, qry]) if int(j) not in by_index]
    if missing:
        raise ConfigError(f"codes: no code for dataset index {missing[0]} ({len(missing)} missing)")
    G = np.array([by_index[int(j)] for j in gal])
    Q = np.array([by_index[int(j)] for j in qry])
    curve = recall_curve(G, Q, dataset.labels[gal], dataset.labels[qry], int(eff["k_max"]))
    with open(out / "recall.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["K", "recall"])
        for k, r in enumerate(curve, start=1):
            writer.writerow([k, repr(float(r))])

    sp = np.array([sparsity_of(r["coeffs"]) for r in rows])
    with open(out / "sparsity_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["count", "mean", "median", "min", "max"])
        writer.writerow([len(sp), repr(float(sp.mean())), repr(float(np.median(sp))),
                         repr(float(sp.min())), repr(float(sp.max()))])
    write_json(out / "manifest.json", _manifest(eff, "eval", recall_at_1=float(curve[0]), k_max=len(curve)))
    print(f"recall@1 {curve[0]:.4f}, recall@{len(curve)} {curve[-1]:.4f}")


def cmd_bench(eff, out):
    rows = bench_timing(eff["dims"], eff["atoms_list"], reps=int(eff["reps"]), fixed_atoms=int(eff["fixed_atoms"]),
                        fixed_dim=int(eff["fixed_dim"]), lam=float(eff["lam"]),
                        max_iter=int(eff["coding_iters"]), seed=int(eff["seed"]))
    write_timing_csv(out / "timing.csv", rows)
    write_json(out / "manifest.json", _manifest(eff, "bench", rows=len(rows)))
    print(f"wrote {len(rows)} timing rows")


COMMANDS = {"generate": cmd_generate, "fit": cmd_fit, "code": cmd_code, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        eff = resolve_config(args)
        logging.basicConfig(level=logging.INFO if eff["verbose"] else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _validate(eff, args.command)
        out = Path(eff["out"])
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            print(f"error: cannot create output directory {out}: {exc}", file=sys.stderr)
            return EXIT_IO
        COMMANDS[args.command](eff, out)
    except (ConfigError, TypeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        if isinstance(exc, (FormatError, NotPositiveDefiniteError)):
            print(f"I/O error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SolverError, DegenerateCombinationError, ArithmeticError, np.linalg.LinAlgError) as exc:
        chain = []
        cur = exc
        while cur is not None:
            chain.append(f"{type(cur).__name__}: {cur}")
            cur = cur.__cause__
        print("solver failure: " + " <- ".join(chain), file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
