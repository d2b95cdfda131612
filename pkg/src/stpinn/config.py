"""Run configuration: flat key = value text with section headers.

The file format is INI-style, diff-friendly, with every setting explicit in
the canonical form written by ``save_config``.  ``default_config`` returns
the full-scale protocol for each benchmark problem; the desk-scale variants
used by the acceptance experiments live in configs/ at the repo root.

load(save(config)) round-trips exactly.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, replace

from .network import MlpSpec
from .pde import (
    PdeProblem,
    burgers_problem,
    diff_react_problem,
    diff_sorb_problem,
    noise_ic,
    sample_sinusoid_ic,
    step_evaluator,
)
from .selftrain import SelfTrainConfig
from .training import LossWeights, TrainSettings

PROBLEM_NAMES = ("burgers", "diff_react", "diff_sorb")


class ConfigError(ValueError):
    """Invalid or missing configuration entry (message names the key)."""


@dataclass(frozen=True)
class ProblemCfg:
    name: str = "burgers"
    ic_seed: int = 0
    nu: float = 0.01
    rho: float = 1.0
    d_coef: float = 5e-4
    x_lo: float = 0.0
    x_hi: float = 1.0
    t_hi: float = 2.0


@dataclass(frozen=True)
class GridCfg:
    nx: int = 1024
    nt: int = 256
    refine: int = 0  # 0 = solver default


@dataclass(frozen=True)
class NetworkCfg:
    hidden_layers: int = 4
    hidden_width: int = 32
    normalize_inputs: bool = True


@dataclass(frozen=True)
class PointsCfg:
    n_boundary: int = 512
    n_initial: int = 1024
    n_data: int = 1000
    n_f: int = 20000
    pool_size: int = 262144


@dataclass(frozen=True)
class OptimizerCfg:
    adam_iters: int = 20000
    lr: float = 1e-3
    lr_stages: tuple = ()  # ((iters, lr), ...); empty = constant lr
    lbfgs_iters: int = 0
    lbfgs_memory: int = 10


@dataclass(frozen=True)
class LossCfg:
    w_f: float = 1.0
    w_d: float = 1.0
    w_p: float = 1.0
    match_grad_pairs: bool = False


@dataclass(frozen=True)
class SelfTrainCfg:
    enabled: bool = True
    period: int = 100
    max_fraction: float = 0.2
    stable_coeff: int = 10
    warmup: int = 500


@dataclass(frozen=True)
class RunCfg:
    seed: int = 0
    out_dir: str = "runs/out"
    figures: bool = True


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemCfg = field(default_factory=ProblemCfg)
    grid: GridCfg = field(default_factory=GridCfg)
    network: NetworkCfg = field(default_factory=NetworkCfg)
    points: PointsCfg = field(default_factory=PointsCfg)
    optimizer: OptimizerCfg = field(default_factory=OptimizerCfg)
    loss: LossCfg = field(default_factory=LossCfg)
    selftrain: SelfTrainCfg = field(default_factory=SelfTrainCfg)
    run: RunCfg = field(default_factory=RunCfg)


def default_config(problem_name: str) -> RunConfig:
    """Full-scale protocol defaults for the named benchmark."""
    if problem_name == "burgers":
        return RunConfig()
    if problem_name == "diff_react":
        return RunConfig(
            problem=ProblemCfg(name="diff_react", nu=0.5, t_hi=1.0),
            optimizer=OptimizerCfg(adam_iters=20000, lbfgs_iters=5000),
        )
    if problem_name == "diff_sorb":
        return RunConfig(
            problem=ProblemCfg(name="diff_sorb", t_hi=500.0),
            grid=GridCfg(nx=1024, nt=101),
            points=PointsCfg(pool_size=1024 * 101, n_f=20000),
        )
    raise ConfigError(f"unknown problem {problem_name!r}; expected one of {PROBLEM_NAMES}")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _fmt_stages(stages: tuple) -> str:
    return ",".join(f"{n}:{lr!r}" for n, lr in stages)


def _parse_stages(text: str, where: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    out = []
    for part in text.split(","):
        try:
            n, lr = part.split(":")
            out.append((int(n), float(lr)))
        except ValueError as exc:
            raise ConfigError(
                f"{where}: expected 'iters:lr' pairs separated by commas, got {part!r}"
            ) from exc
    return tuple(out)


def save_config(cfg: RunConfig, path) -> None:
    """Canonical form: every key explicit, one section per component."""
    lines = []
    for section, obj in (
        ("problem", cfg.problem),
        ("grid", cfg.grid),
        ("network", cfg.network),
        ("points", cfg.points),
        ("optimizer", cfg.optimizer),
        ("loss", cfg.loss),
        ("selftrain", cfg.selftrain),
        ("run", cfg.run),
    ):
        lines.append(f"[{section}]")
        for key, val in asdict(obj).items():
            if key == "lr_stages":
                lines.append(f"{key} = {_fmt_stages(val)}")
            else:
                lines.append(f"{key} = {_fmt(val)}")
        lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


class _Section:
    def __init__(self, parser, name):
        self.name = name
        self.data = dict(parser[name]) if parser.has_section(name) else {}
        self.seen = set()

    def get(self, key, kind, default):
        self.seen.add(key)
        if key not in self.data:
            return default
        raw = self.data[key].strip()
        where = f"[{self.name}] {key}"
        try:
            if kind is bool:
                if raw.lower() not in _BOOL:
                    raise ValueError
                return _BOOL[raw.lower()]
            if kind is int:
                return int(raw)
            if kind is float:
                return float(raw)
            return raw
        except ValueError:
            raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None

    def reject_unknown(self):
        unknown = set(self.data) - self.seen
        if unknown:
            raise ConfigError(
                f"[{self.name}] unknown key(s): {', '.join(sorted(unknown))}"
            )


def load_config(path) -> RunConfig:
    """Parse and validate a config file with actionable error messages."""
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    known_sections = {"problem", "grid", "network", "points", "optimizer",
                      "loss", "selftrain", "run"}
    unknown = set(parser.sections()) - known_sections
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")

    sp = _Section(parser, "problem")
    name = sp.get("name", str, "burgers")
    if name not in PROBLEM_NAMES:
        raise ConfigError(f"[problem] name: {name!r} is not one of {PROBLEM_NAMES}")
    base = default_config(name)
    problem = ProblemCfg(
        name=name,
        ic_seed=sp.get("ic_seed", int, base.problem.ic_seed),
        nu=sp.get("nu", float, base.problem.nu),
        rho=sp.get("rho", float, base.problem.rho),
        d_coef=sp.get("d_coef", float, base.problem.d_coef),
        x_lo=sp.get("x_lo", float, base.problem.x_lo),
        x_hi=sp.get("x_hi", float, base.problem.x_hi),
        t_hi=sp.get("t_hi", float, base.problem.t_hi),
    )
    sp.reject_unknown()
    if problem.x_lo >= problem.x_hi:
        raise ConfigError("[problem] x_lo must be below x_hi")
    if problem.t_hi <= 0:
        raise ConfigError("[problem] t_hi must be positive")

    sg = _Section(parser, "grid")
    grid = GridCfg(nx=sg.get("nx", int, base.grid.nx),
                   nt=sg.get("nt", int, base.grid.nt),
                   refine=sg.get("refine", int, base.grid.refine))
    sg.reject_unknown()
    if grid.nx < 16 or grid.nt < 2:
        raise ConfigError("[grid] nx must be >= 16 and nt >= 2")
    if grid.refine < 0:
        raise ConfigError("[grid] refine must be >= 0 (0 = solver default)")

    sn = _Section(parser, "network")
    network = NetworkCfg(
        hidden_layers=sn.get("hidden_layers", int, base.network.hidden_layers),
        hidden_width=sn.get("hidden_width", int, base.network.hidden_width),
        normalize_inputs=sn.get("normalize_inputs", bool, base.network.normalize_inputs),
    )
    sn.reject_unknown()
    if network.hidden_layers < 1 or network.hidden_width < 1:
        raise ConfigError("[network] hidden_layers and hidden_width must be >= 1")

    spt = _Section(parser, "points")
    points = PointsCfg(
        n_boundary=spt.get("n_boundary", int, base.points.n_boundary),
        n_initial=spt.get("n_initial", int, base.points.n_initial),
        n_data=spt.get("n_data", int, base.points.n_data),
        n_f=spt.get("n_f", int, base.points.n_f),
        pool_size=spt.get("pool_size", int, base.points.pool_size),
    )
    spt.reject_unknown()
    if points.n_f < 1 or points.pool_size < 1:
        raise ConfigError("[points] n_f and pool_size must be positive")
    if points.n_f > points.pool_size:
        raise ConfigError(
            f"[points] n_f ({points.n_f}) cannot exceed pool_size ({points.pool_size})"
        )
    if min(points.n_boundary, points.n_initial, points.n_data) < 0:
        raise ConfigError("[points] point counts must be nonnegative")
    if points.n_initial > grid.nx:
        raise ConfigError(
            f"[points] n_initial ({points.n_initial}) exceeds grid nx ({grid.nx})"
        )
    if points.n_data > (grid.nt - 1) * grid.nx:
        raise ConfigError("[points] n_data exceeds the number of t > 0 grid nodes")

    so = _Section(parser, "optimizer")
    optimizer = OptimizerCfg(
        adam_iters=so.get("adam_iters", int, base.optimizer.adam_iters),
        lr=so.get("lr", float, base.optimizer.lr),
        lr_stages=_parse_stages(so.get("lr_stages", str, _fmt_stages(base.optimizer.lr_stages)),
                                "[optimizer] lr_stages"),
        lbfgs_iters=so.get("lbfgs_iters", int, base.optimizer.lbfgs_iters),
        lbfgs_memory=so.get("lbfgs_memory", int, base.optimizer.lbfgs_memory),
    )
    so.reject_unknown()
    if optimizer.adam_iters < 0 or optimizer.lbfgs_iters < 0:
        raise ConfigError("[optimizer] iteration counts must be nonnegative")
    if optimizer.lr <= 0:
        raise ConfigError("[optimizer] lr must be positive")
    if optimizer.lbfgs_memory < 1:
        raise ConfigError("[optimizer] lbfgs_memory must be >= 1")

    sl = _Section(parser, "loss")
    loss = LossCfg(
        w_f=sl.get("w_f", float, base.loss.w_f),
        w_d=sl.get("w_d", float, base.loss.w_d),
        w_p=sl.get("w_p", float, base.loss.w_p),
        match_grad_pairs=sl.get("match_grad_pairs", bool, base.loss.match_grad_pairs),
    )
    sl.reject_unknown()
    try:
        LossWeights(loss.w_f, loss.w_d, loss.w_p)
    except ValueError as exc:
        raise ConfigError(f"[loss] {exc}") from None

    st = _Section(parser, "selftrain")
    selftrain = SelfTrainCfg(
        enabled=st.get("enabled", bool, base.selftrain.enabled),
        period=st.get("period", int, base.selftrain.period),
        max_fraction=st.get("max_fraction", float, base.selftrain.max_fraction),
        stable_coeff=st.get("stable_coeff", int, base.selftrain.stable_coeff),
        warmup=st.get("warmup", int, base.selftrain.warmup),
    )
    st.reject_unknown()
    try:
        SelfTrainConfig(selftrain.period, selftrain.max_fraction,
                        selftrain.stable_coeff, selftrain.warmup)
    except ValueError as exc:
        raise ConfigError(f"[selftrain] {exc}") from None

    sr = _Section(parser, "run")
    run = RunCfg(seed=sr.get("seed", int, base.run.seed),
                 out_dir=sr.get("out_dir", str, base.run.out_dir),
                 figures=sr.get("figures", bool, base.run.figures))
    sr.reject_unknown()

    return RunConfig(problem, grid, network, points, optimizer, loss, selftrain, run)


# ------------------------------------------------------- config -> components

def make_problem(cfg: RunConfig) -> PdeProblem:
    p = cfg.problem
    length = p.x_hi - p.x_lo
    if p.name == "burgers":
        ic = sample_sinusoid_ic(p.ic_seed, length)
        return burgers_problem(ic, nu=p.nu, x_lo=p.x_lo, x_hi=p.x_hi, t_hi=p.t_hi)
    if p.name == "diff_react":
        ic = sample_sinusoid_ic(p.ic_seed, length)
        return diff_react_problem(ic, nu=p.nu, rho=p.rho, x_lo=p.x_lo, x_hi=p.x_hi,
                                  t_hi=p.t_hi)
    ic = step_evaluator(noise_ic(p.ic_seed, cfg.grid.nx), p.x_lo, p.x_hi)
    return diff_sorb_problem(ic, d_coef=p.d_coef, x_lo=p.x_lo, x_hi=p.x_hi, t_hi=p.t_hi)


def make_mlp_spec(cfg: RunConfig) -> MlpSpec:
    shift = scale = None
    if cfg.network.normalize_inputs:
        p = cfg.problem
        shift = (p.t_hi / 2.0, (p.x_lo + p.x_hi) / 2.0)
        scale = (2.0 / p.t_hi, 2.0 / (p.x_hi - p.x_lo))
    return MlpSpec(input_dim=2, hidden_layers=cfg.network.hidden_layers,
                   hidden_width=cfg.network.hidden_width, output_dim=1,
                   in_shift=shift, in_scale=scale)


def make_train_settings(cfg: RunConfig, baseline: bool = False) -> TrainSettings:
    st = None
    if cfg.selftrain.enabled and not baseline:
        st = SelfTrainConfig(cfg.selftrain.period, cfg.selftrain.max_fraction,
                             cfg.selftrain.stable_coeff, cfg.selftrain.warmup)
    return TrainSettings(
        n_f=cfg.points.n_f,
        pool_size=cfg.points.pool_size,
        n_boundary=cfg.points.n_boundary,
        n_initial=cfg.points.n_initial,
        n_data=cfg.points.n_data,
        adam_iters=cfg.optimizer.adam_iters,
        lbfgs_iters=cfg.optimizer.lbfgs_iters,
        lr=cfg.optimizer.lr,
        lr_stages=cfg.optimizer.lr_stages or None,
        weights=LossWeights(cfg.loss.w_f, cfg.loss.w_d, cfg.loss.w_p),
        selftrain=st,
        match_grad_pairs=cfg.loss.match_grad_pairs,
        lbfgs_memory=cfg.optimizer.lbfgs_memory,
    )


def with_overrides(cfg: RunConfig, seed=None, out_dir=None, figures=None) -> RunConfig:
    run = cfg.run
    if seed is not None:
        run = replace(run, seed=int(seed))
    if out_dir is not None:
        run = replace(run, out_dir=str(out_dir))
    if figures is not None:
        run = replace(run, figures=bool(figures))
    return replace(cfg, run=run)
