"""Command-line interface.

Subcommands::

    opess compute --config run.json [--out result.csv]
    opess study gaussian_fig1_2 [--scale paper] [--out DIR]
    opess theory-pmf --v 0 --v 5 --ybar 0 --mu 0
    opess prop-check [--mode prior]
    opess distance gaussian 0 1 1 4

Exit status: 0 success, 1 usage error, 2 validation error (including a
failed ``prop-check``), 3 I/O error.

Run configs are JSON documents with four blocks::

    {
      "model":  {"family": "gaussian", "sigma2": 1, "prior_mean": 0, "prior_var": 0.1},
      "data":   {"values": [0.1, -0.3, ...]},
      "engine": {"L": null, "S": 2000, "seed": 0, "workers": 1},
      "output": {"path": "result.csv", "format": "csv"}
    }

``data`` holds exactly one of ``values`` (numbers, or ``[x, y]`` pairs for
regression), ``path`` (a dataset file, resolved relative to the config
file) or ``simulate`` (``{"n", "seed"}`` plus ``mean`` / ``p`` / ``beta``
depending on the family). Unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .distances import w2sq
from .engine import BOUNDARY_WARN_FRACTION, BoundaryWarning, OpessProblem, mopess
from .models import (
    BetaBernoulliModelSpec,
    BetaDist,
    Dataset,
    Gaussian1D,
    GaussianModelSpec,
    RegressionModelSpec,
)
from .numerics import graded_gauss_legendre

__all__ = [
    "ConfigError",
    "RunConfig",
    "DataSource",
    "EngineConfig",
    "OutputConfig",
    "parse_config",
    "serialize_config",
    "load_dataset",
    "cmd_compute",
    "main",
]

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3


class ConfigError(ValueError):
    """Schema violation in a run config; the message names the key."""


@dataclass(frozen=True)
class DataSource:
    values: Optional[tuple] = None
    path: Optional[str] = None
    simulate: Optional[tuple] = None  # sorted (key, value) pairs

    def to_dict(self) -> dict:
        if self.values is not None:
            return {"values": [list(v) if isinstance(v, tuple) else v for v in self.values]}
        if self.path is not None:
            return {"path": self.path}
        return {"simulate": {k: list(v) if isinstance(v, tuple) else v for k, v in self.simulate}}


@dataclass(frozen=True)
class EngineConfig:
    L: Optional[int] = None
    S: int = 2000
    seed: int = 0
    workers: int = 1


@dataclass(frozen=True)
class OutputConfig:
    path: Optional[str] = None
    format: str = "csv"


@dataclass(frozen=True)
class RunConfig:
    model: object
    data: DataSource
    engine: EngineConfig = field(default_factory=EngineConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    base_dir: Optional[str] = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return {
            "model": _model_to_dict(self.model),
            "data": self.data.to_dict(),
            "engine": {"L": self.engine.L, "S": self.engine.S, "seed": self.engine.seed,
                       "workers": self.engine.workers},
            "output": {"path": self.output.path, "format": self.output.format},
        }

    def result_config(self) -> dict:
        """The parts of the config that determine the numbers produced."""
        d = self.to_dict()
        del d["engine"]["workers"]
        del d["output"]
        return d


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

_MODEL_KEYS = {
    "gaussian": ("sigma2", "prior_mean", "prior_var"),
    "bernoulli": ("alpha", "beta"),
    "regression": ("sigma2", "eta0", "tau1_sq", "tau2_sq"),
}
_SIM_KEYS = {
    "gaussian": ("n", "seed", "mean"),
    "bernoulli": ("n", "seed", "p"),
    "regression": ("n", "seed", "beta"),
}


def _reject_unknown(block: dict, allowed, where: str):
    for key in block:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}: unknown key (allowed: {', '.join(allowed)})")


def _require_mapping(obj, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    return obj


def _number(value, where, *, integer=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ConfigError(f"{where}: must be finite")
    return float(value)


def _model_to_dict(spec) -> dict:
    if isinstance(spec, GaussianModelSpec):
        return {"family": "gaussian", "sigma2": spec.sigma2, "prior_mean": spec.prior_mean,
                "prior_var": spec.prior_var}
    if isinstance(spec, BetaBernoulliModelSpec):
        return {"family": "bernoulli", "alpha": spec.alpha, "beta": spec.beta}
    return {"family": "regression", "sigma2": spec.sigma2, "eta0": list(spec.eta0),
            "tau1_sq": spec.tau1_sq, "tau2_sq": spec.tau2_sq}


def _parse_model(block):
    block = _require_mapping(block, "model")
    family = block.get("family")
    if family not in _MODEL_KEYS:
        raise ConfigError(f"model.family: must be one of {', '.join(_MODEL_KEYS)}, got {family!r}")
    _reject_unknown(block, ("family",) + _MODEL_KEYS[family], "model")
    kw = {}
    for key in _MODEL_KEYS[family]:
        if key not in block:
            continue
        if key == "eta0":
            val = block[key]
            if not isinstance(val, list) or len(val) != 2:
                raise ConfigError("model.eta0: expected a list of two numbers")
            kw[key] = tuple(_number(v, "model.eta0") for v in val)
        else:
            kw[key] = _number(block[key], f"model.{key}", allow_none=key in ("prior_var", "tau1_sq", "tau2_sq"))
    cls = {"gaussian": GaussianModelSpec, "bernoulli": BetaBernoulliModelSpec,
           "regression": RegressionModelSpec}[family]
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None


def _parse_data(block, family):
    block = _require_mapping(block, "data")
    _reject_unknown(block, ("values", "path", "simulate"), "data")
    present = [k for k in ("values", "path", "simulate") if k in block]
    if len(present) != 1:
        raise ConfigError(
            "data: exactly one of values, path or simulate is required"
            + (f" (got {', '.join(present)}; ambiguous)" if present else ""))
    key = present[0]
    if key == "values":
        vals = block["values"]
        if not isinstance(vals, list) or not vals:
            raise ConfigError("data.values: expected a non-empty list")
        if family == "regression":
            out = []
            for i, pair in enumerate(vals):
                if not isinstance(pair, list) or len(pair) != 2:
                    raise ConfigError(f"data.values[{i}]: expected an [x, y] pair")
                out.append(tuple(_number(v, f"data.values[{i}]") for v in pair))
            return DataSource(values=tuple(out))
        out = tuple(_number(v, f"data.values[{i}]") for i, v in enumerate(vals))
        if family == "bernoulli" and any(v not in (0.0, 1.0) for v in out):
            raise ConfigError("data.values: bernoulli observations must be 0 or 1")
        return DataSource(values=out)
    if key == "path":
        if not isinstance(block["path"], str):
            raise ConfigError("data.path: expected a string")
        return DataSource(path=block["path"])
    sim = _require_mapping(block["simulate"], "data.simulate")
    _reject_unknown(sim, _SIM_KEYS[family], "data.simulate")
    if "n" not in sim:
        raise ConfigError("data.simulate.n: required")
    items = {"n": _number(sim["n"], "data.simulate.n", integer=True),
             "seed": _number(sim.get("seed", 0), "data.simulate.seed", integer=True)}
    if items["n"] < 2:
        raise ConfigError("data.simulate.n: must be >= 2")
    if family == "gaussian":
        items["mean"] = _number(sim.get("mean", 0.0), "data.simulate.mean")
    elif family == "bernoulli":
        p = _number(sim.get("p", 0.5), "data.simulate.p")
        if not 0.0 <= p <= 1.0:
            raise ConfigError("data.simulate.p: must lie in [0, 1]")
        items["p"] = p
    else:
        beta = sim.get("beta", [0.0, 0.0])
        if not isinstance(beta, list) or len(beta) != 2:
            raise ConfigError("data.simulate.beta: expected a list of two numbers")
        items["beta"] = tuple(_number(v, "data.simulate.beta") for v in beta)
    return DataSource(simulate=tuple(sorted(items.items())))


def _parse_engine(block):
    block = _require_mapping(block, "engine")
    _reject_unknown(block, ("L", "S", "seed", "workers"), "engine")
    L = _number(block.get("L"), "engine.L", integer=True, allow_none=True)
    S = _number(block.get("S", 2000), "engine.S", integer=True)
    seed = _number(block.get("seed", 0), "engine.seed", integer=True)
    workers = _number(block.get("workers", 1), "engine.workers", integer=True)
    if S < 1:
        raise ConfigError("engine.S: must be >= 1")
    if workers < 1:
        raise ConfigError("engine.workers: must be >= 1")
    if not 0 <= seed < 2**64:
        raise ConfigError("engine.seed: must be an unsigned 64-bit integer")
    return EngineConfig(L=L, S=S, seed=seed, workers=workers)


def _parse_output(block):
    block = _require_mapping(block, "output")
    _reject_unknown(block, ("path", "format"), "output")
    path = block.get("path")
    if path is not None and not isinstance(path, str):
        raise ConfigError("output.path: expected a string")
    fmt = block.get("format", "csv")
    if fmt != "csv":
        raise ConfigError("output.format: only 'csv' is supported")
    return OutputConfig(path=path, format=fmt)


def parse_config(text: str, base_dir=None) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    doc = _require_mapping(doc, "config")
    _reject_unknown(doc, ("model", "data", "engine", "output"), "config")
    for key in ("model", "data"):
        if key not in doc:
            raise ConfigError(f"{key}: required block missing")
    model = _parse_model(doc["model"])
    return RunConfig(
        model=model,
        data=_parse_data(doc["data"], model.family),
        engine=_parse_engine(doc.get("engine", {})),
        output=_parse_output(doc.get("output", {})),
        base_dir=None if base_dir is None else str(base_dir),
    )


def serialize_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def load_dataset(cfg: RunConfig) -> Dataset:
    from .io import read_dataset

    family = cfg.model.family
    src = cfg.data
    if src.values is not None:
        if family == "regression":
            arr = np.array(src.values, dtype=float)
            return Dataset(arr[:, 1], arr[:, 0])
        return Dataset(np.array(src.values, dtype=float))
    if src.path is not None:
        path = Path(src.path)
        if cfg.base_dir is not None and not path.is_absolute():
            path = Path(cfg.base_dir) / path
        return read_dataset(path, family)
    sim = dict(src.simulate)
    rng = np.random.default_rng(np.random.SeedSequence(sim["seed"]))
    n = sim["n"]
    if family == "gaussian":
        return Dataset(sim["mean"] + math.sqrt(cfg.model.sigma2) * rng.standard_normal(n))
    if family == "bernoulli":
        return Dataset((rng.random(n) < sim["p"]).astype(float))
    x = rng.standard_normal(n)
    b1, b2 = sim["beta"]
    return Dataset(b1 + b2 * x + math.sqrt(cfg.model.sigma2) * rng.standard_normal(n), x)


def _xstat(spec, data: Dataset) -> float:
    if isinstance(spec, RegressionModelSpec):
        return float(np.linalg.norm(data.stats(spec).ols() - np.asarray(spec.eta0)))
    return data.ybar


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_compute(cfg: RunConfig, out=None, stdout=None, stderr=None) -> int:
    import warnings

    from .io import Provenance, ResultEnvelope, write_result

    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    data = load_dataset(cfg)
    problem = OpessProblem(spec=cfg.model, data=data, L=cfg.engine.L, S=cfg.engine.S,
                           seed=cfg.engine.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        res = mopess(problem, workers=cfg.engine.workers)
    q = res.quantiles
    print(f"MOPESS: {res.mopess:.12g}", file=stdout)
    print(f"nominal EPSS: {cfg.model.nominal_epss:.12g}", file=stdout)
    print(f"q05: {q[0.05]:.12g}  q50: {q[0.5]:.12g}  q95: {q[0.95]:.12g}", file=stdout)
    if res.boundary_fraction > BOUNDARY_WARN_FRACTION:
        print(f"warning: {res.boundary_fraction:.1%} of realizations hit |M_n| = L - n "
              f"(L={res.L}); increase engine.L", file=stderr)
    target = out or cfg.output.path
    if target is not None:
        if cfg.base_dir is not None and out is None and not Path(target).is_absolute():
            target = Path(cfg.base_dir) / target
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        prov = Provenance.create(cfg.result_config(), seed=res.seed, S=res.S, L=res.L)
        paths = write_result(ResultEnvelope(res, prov), target, xstat=_xstat(cfg.model, data))
        print("wrote " + ", ".join(str(p) for p in paths), file=stdout)
    return EXIT_OK


def _load_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_config(text, base_dir=path.parent)


def _run_compute(args) -> int:
    cfg = _load_config(args.config)
    eng = cfg.engine
    if args.seed is not None:
        eng = replace(eng, seed=args.seed)
    if args.workers is not None:
        eng = replace(eng, workers=args.workers)
    return cmd_compute(replace(cfg, engine=eng), out=args.out)


def _run_study(args) -> int:
    from .harness import ConditionalStudy, binned_summary, run_study, study_config
    from .io import (Provenance, ResultEnvelope, atomic_write_text, bins_to_csv,
                     write_result)

    overrides = {}
    if args.config is not None:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        _require_mapping(doc, "study config")
        _reject_unknown(doc, ("n_datasets", "S", "L", "n", "model"), "study")
        overrides.update(doc)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    cfg = study_config(args.study_id, scale=args.scale, **overrides)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    digest_cfg = {k: v for k, v in vars(cfg).items() if k != "workers"}
    digest_cfg["model"] = {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.model.items()}
    prov = Provenance.create(digest_cfg, seed=cfg.seed, S=cfg.S, L=cfg.L)
    result = run_study(cfg)
    stem = out_dir / cfg.study_id
    if isinstance(result, ConditionalStudy):
        write_result(ResultEnvelope(result.histogram, prov), f"{stem}_hist.csv")
        print(f"empirical mean {result.histogram.mean:.6g}, theory mean "
              f"{result.theory_mean:.6g}, total variation {result.total_variation:.4g}")
        return EXIT_OK
    rows, hist = (result if isinstance(result, tuple) else (result, None))
    write_result(ResultEnvelope(rows, prov), f"{stem}.csv")
    atomic_write_text(f"{stem}_bins.csv", bins_to_csv(binned_summary(rows, args.bins)))
    if hist is not None:
        write_result(ResultEnvelope(hist, prov), f"{stem}_hist.csv")
    mo = [r.mopess for r in rows]
    print(f"{len(rows)} datasets; MOPESS range [{min(mo):.4g}, {max(mo):.4g}]; "
          f"output in {out_dir}")
    return EXIT_OK


def _run_theory_pmf(args) -> int:
    from .theory import PmfQuery, opess_pmf

    values = list(args.v or [])
    if args.v_range is not None:
        lo, hi = args.v_range
        values.extend(range(lo, hi + 1))
    if not values:
        raise _UsageError("theory-pmf needs --v or --v-range")
    base = PmfQuery(v=0, ybar=args.ybar, n=args.n, z=args.z, sigma=args.sigma,
                    mu_draws=args.mu_draws, t_draws=args.t_draws, mu0=args.mu0, mu=args.mu,
                    L=args.L, seed=args.seed or 0)
    queries = [replace(base, v=int(v)) for v in values]
    with ThreadPoolExecutor(max_workers=args.workers or 1) as pool:
        probs = list(pool.map(opess_pmf, queries))
    print("v,pmf")
    for v, p in zip(values, probs):
        print(f"{v},{p:.12g}")
    return EXIT_OK


def _run_prop_check(args) -> int:
    from .theory import PROP1_MODES, prop1_curves

    n, z, sigma, ybar, mu0 = args.n, args.z, args.sigma, args.ybar, args.mu0
    L = args.L if args.L is not None else n + int(math.ceil(100 * (n + z)))
    modes = PROP1_MODES if args.mode == "all" else (args.mode,)
    w = n / (n + z)
    mu_n = w * ybar + (1 - w) * mu0
    failed = False
    for mode in modes:
        _, _, m_n = prop1_curves(mode, n, z, sigma, ybar, mu0, L)
        if mode == "prior":
            ok, claim = m_n == z, f"m_n = z = {z:g}"
        elif mode == "posterior_predictive":
            ok, claim = m_n >= z, f"m_n >= z = {z:g}"
        elif abs(ybar - mu_n) > sigma / math.sqrt(n):
            ok, claim = m_n < 0, "m_n < 0 since |ybar - mu_n| > sigma/sqrt(n)"
        else:
            ok, claim = None, "no claim: |ybar - mu_n| <= sigma/sqrt(n)"
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        failed |= ok is False
        print(f"{mode}: m_n = {m_n} ({claim}) {status}")
    return EXIT_VALIDATION if failed else EXIT_OK


def _run_distance(args) -> int:
    from .io import format_float

    a1, b1, a2, b2 = args.params
    if args.family == "gaussian":
        p, q = Gaussian1D(a1, b1), Gaussian1D(a2, b2)
    else:
        p, q = BetaDist(a1, b1), BetaDist(a2, b2)
    print(format_float(w2sq(p, q, graded_gauss_legendre(args.nodes)).value))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _u64(text):
    val = int(text)
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return val


def _positive_int(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return val


def build_parser() -> argparse.ArgumentParser:
    from .harness import STUDY_IDS
    from .theory import PROP1_MODES

    common = _Parser(add_help=False)
    common.add_argument("--seed", type=_u64, default=None, help="random seed (overrides config)")
    common.add_argument("--workers", type=_positive_int, default=None, help="worker threads")

    parser = _Parser(prog="opess", description="Observed prior effective sample size.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("compute", parents=[common], help="MOPESS for one dataset")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", default=None, help="result CSV path (overrides config)")
    p.set_defaults(func=_run_compute)

    p = sub.add_parser("study", parents=[common], help="run a replication study")
    p.add_argument("study_id", choices=STUDY_IDS)
    p.add_argument("--config", default=None, help="JSON study overrides")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--bins", type=_positive_int, default=10, help="bins for the summary CSV")
    p.set_defaults(func=_run_study)

    p = sub.add_parser("theory-pmf", parents=[common], help="theoretical OPESS pmf")
    p.add_argument("--v", type=int, action="append", help="OPESS value (repeatable)")
    p.add_argument("--v-range", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--ybar", type=float, default=0.0)
    p.add_argument("--mu", type=float, default=None, help="fix the generating mean")
    p.add_argument("--mu0", type=float, default=0.0)
    p.add_argument("--n", type=_positive_int, default=20)
    p.add_argument("--z", type=float, default=10.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--L", type=int, default=None, help="finite horizon (default: infinite)")
    p.add_argument("--mu-draws", type=_positive_int, default=200)
    p.add_argument("--t-draws", type=_positive_int, default=200)
    p.set_defaults(func=_run_theory_pmf)

    p = sub.add_parser("prop-check", parents=[common], help="check the fixed-mean oracles")
    p.add_argument("--mode", choices=PROP1_MODES + ("all",), default="all")
    p.add_argument("--n", type=_positive_int, default=20)
    p.add_argument("--z", type=float, default=10.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--ybar", type=float, default=1.0)
    p.add_argument("--mu0", type=float, default=0.0)
    p.add_argument("--L", type=int, default=None)
    p.set_defaults(func=_run_prop_check)

    p = sub.add_parser("distance", parents=[common], help="squared W2 between two posteriors")
    p.add_argument("family", choices=("gaussian", "beta"))
    p.add_argument("params", type=float, nargs=4,
                   help="gaussian: mean1 var1 mean2 var2; beta: a1 b1 a2 b2")
    p.add_argument("--nodes", type=_positive_int, default=256)
    p.set_defaults(func=_run_distance)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"opess: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"opess: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
