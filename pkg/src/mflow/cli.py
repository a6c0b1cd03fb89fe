"""Command-line entry point: ``mflow <command> [--config run.toml] [flags]``.

Every run resolves its configuration as defaults, then the TOML file, then
flags, writes the resolved configuration next to its outputs and finishes
with a ``manifest.json``. Wall-clock times go to ``timing.json`` only, so
CSV/PLY/OBJ/XYZ outputs depend on nothing but (config, seed).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import sys
import time
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import EncoderArchitecture, build_encoder
from .errors import FormatError, InvalidArgument, MflowError, NumericError, ReconstructionError
from .flow import FlowArchitecture, build_flow
from .metrics import evaluate, oracle_metrics, write_reports_csv, write_reports_json
from .pointio import load_cloud, save_obj, save_oriented_ply, save_xyz
from .projector import LLMConfig, llm_project_batch
from .surface import PoissonConfig, flow_density, ll_poisson_detailed, shell_density
from .synth import SynthManifold, sample_manifold
from .trainer import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
THREADS_ENV = "MANIFLOW_THREADS"
COMMANDS = ("toy-circle", "train", "sample", "project", "reconstruct", "eval", "gradfield")


class UsageError(Exception):
    pass


def _base_defaults() -> dict:
    return {
        "seed": 0,
        "out_dir": "out",
        "checkpoint": "",
        "inputs": [],
        "reference": "",
        "data": {"kind": "sphere", "params": {}, "n_points": 8192},
        "flow": {"data_dim": 3, "num_layers": 64, "hidden_dim": 64, "activation": "relu",
                 "cond_dim": 0, "use_batchnorm": False},
        "train": TrainConfig(epochs=100, batch_size=256, lr_milestones=((50, 0.5),)).to_dict(),
        "llm": {"lam": 4000.0, "steps": 25, "lr": 1e-3},
        "poisson": PoissonConfig().to_dict(),
        "sample": {"n": 2048},
        "metrics": {"tau": 1e-4, "emd_mode": "auto", "repeats": 5, "oracle": True},
        "reconstruct": {"analytic": "", "shell_radius": 1.0, "shell_sigma": 0.05,
                        "initial_noise": 0.02},
        "gradfield": {"res": 25, "extent": 1.5},
    }


def defaults(command: str) -> dict:
    d = _base_defaults()
    if command == "toy-circle":
        d["data"] = {"kind": "circle_uniform", "params": {}, "n_points": 12800}
        d["flow"].update(data_dim=2, num_layers=5, hidden_dim=128)
        # 12800 points / batch 128 = 100 steps per epoch -> 5000 iterations
        d["train"] = TrainConfig(epochs=50, batch_size=128,
                                 lr_milestones=((25, 0.5),)).to_dict()
        d["train"]["noise"]["sigma"] = 0.05
        d["llm"] = {"lam": 2.0, "steps": 100, "lr": 5e-3}
    return d


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in out:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(out[k], dict) and out[k] and isinstance(v, dict):
            out[k] = _merge(out[k], v, key + ".")
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _nest(dotted: str, value) -> dict:
    for part in reversed(dotted.split(".")):
        value = {part: value}
    return value


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    @property
    def out_dir(self) -> Path:
        return Path(self.values["out_dir"])

    def manifold(self) -> SynthManifold:
        return SynthManifold(self.values["data"]["kind"], dict(self.values["data"]["params"]))

    def arch(self) -> FlowArchitecture:
        return FlowArchitecture.from_dict(self.values["flow"])

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict({**self.values["train"], "seed": self.seed})

    def llm(self) -> LLMConfig:
        return LLMConfig(**self.values["llm"])

    def poisson(self) -> PoissonConfig:
        return PoissonConfig(**self.values["poisson"])

    def to_toml(self) -> str:
        return tomli_w.dumps({"command": self.command, **self.values})

    def digest(self) -> str:
        blob = json.dumps({"command": self.command, **self.values}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def resolve_config(command: str, config_path=None, overrides=()) -> RunConfig:
    """Defaults, then the TOML file, then ``(dotted.key, value)`` overrides."""
    values = defaults(command)
    if config_path:
        p = Path(config_path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            loaded = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise FormatError(f"invalid TOML: {exc}", str(p)) from None
        file_cmd = loaded.pop("command", command)
        if file_cmd != command:
            raise UsageError(f"config was written for {file_cmd!r}, not {command!r}")
        values = _merge(values, loaded)
    for key, val in overrides:
        values = _merge(values, _nest(key, val))
    return RunConfig(command, values)


# ---------------------------------------------------------------- outputs

class Run:
    """Collects output files of one command and writes the manifest."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = cfg.out_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.timing: dict[str, float] = {}
        self.add("config.toml", lambda p: p.write_text(cfg.to_toml()))

    def path(self, name: str) -> Path:
        return self.dir / name

    def add(self, name: str, writer) -> Path:
        p = self.path(name)
        writer(p)
        if name not in self.files:
            self.files.append(name)
        return p

    @contextmanager
    def timed(self, label: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timing[label] = time.perf_counter() - start

    def finish(self) -> None:
        self.path("timing.json").write_text(json.dumps(self.timing, indent=1, sort_keys=True))
        entries = []
        for name in self.files:
            data = self.path(name).read_bytes()
            entries.append({"name": name, "bytes": len(data),
                            "sha256": hashlib.sha256(data).hexdigest()})
        manifest = {"tool": "mflow", "version": __version__, "command": self.cfg.command,
                    "config_sha256": self.cfg.digest(), "files": entries,
                    "timing_file": "timing.json"}
        self.path("manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def scatter_svg(layers, size: int = 480, extent: float = 1.6, circle: float | None = 1.0) -> str:
    """Static SVG scatter; ``layers`` is a list of (points, color, label)."""
    def px(v):
        return (v + extent) / (2 * extent) * size

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">', f'<rect width="{size}" height="{size}" fill="white"/>']
    if circle is not None:
        r = circle / (2 * extent) * size
        out.append(f'<circle cx="{px(0):.2f}" cy="{px(0):.2f}" r="{r:.2f}" fill="none" '
                   f'stroke="black" stroke-width="1"/>')
    for i, (pts, color, label) in enumerate(layers):
        out.append(f'<g fill="{color}" fill-opacity="0.6"><title>{label}</title>')
        for x, y in np.asarray(pts)[:, :2]:
            if abs(x) <= extent and abs(y) <= extent:
                out.append(f'<circle cx="{px(x):.2f}" cy="{px(-y):.2f}" r="1.2"/>')
        out.append("</g>")
        out.append(f'<text x="8" y="{18 + 16 * i}" font-size="12" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _radial_error(x) -> float:
    return float(np.mean(np.abs(np.linalg.norm(x, axis=1) - 1.0)))


def _gradient_rows(model, res: int, extent: float):
    axes = np.linspace(-extent, extent, res)
    if model.arch.data_dim == 2:
        grid = np.stack(np.meshgrid(axes, axes, indexing="ij"), -1).reshape(-1, 2)
    else:
        grid = np.stack(np.meshgrid(axes, axes, axes, indexing="ij"), -1).reshape(-1, 3)
    g = model.grad_x_log_prob(grid)
    return grid, g


def _load_model(cfg: RunConfig):
    ck = cfg.values["checkpoint"]
    if not ck:
        raise UsageError("this command needs --checkpoint")
    model, encoder, _ = load_checkpoint(ck)
    return model, encoder


def _cond_for(model, encoder, cfg: RunConfig):
    if not model.arch.conditional:
        return None
    if encoder is None:
        raise FormatError("conditional checkpoint carries no encoder", cfg.values["checkpoint"])
    if not cfg.values["inputs"]:
        raise UsageError("a conditional flow needs --input with the shape to encode")
    return encoder.encode(load_cloud(cfg.values["inputs"][0]))


def _check_dim(model, cloud, what):
    if cloud.shape[1] != model.arch.data_dim:
        raise InvalidArgument(f"{what} has {cloud.shape[1]} columns but the checkpoint "
                              f"expects data_dim={model.arch.data_dim}")


# ---------------------------------------------------------------- commands

def cmd_toy_circle(cfg: RunConfig, run: Run) -> None:
    m = cfg.manifold()
    if m.kind not in ("circle_uniform", "circle_nonuniform"):
        raise InvalidArgument("toy-circle needs a circle manifold")
    data = sample_manifold(m, cfg.values["data"]["n_points"], cfg.seed)
    with run.timed("train"):
        res = train(build_flow(cfg.arch(), cfg.seed), [data], cfg.train_config())
    run.add("model.mflw", lambda p: save_checkpoint(p, res.model))
    run.add("history.csv", lambda p: res.history.to_csv(p, include_time=False))
    n = cfg.values["sample"]["n"]
    raw = res.model.sample(n, cfg.seed + 1)
    with run.timed("project"):
        proj = llm_project_batch(res.model, raw, cfg.llm())
    run.add("raw.xyz", lambda p: save_xyz(raw, p))
    run.add("projected.xyz", lambda p: save_xyz(proj, p))
    gf = cfg.values["gradfield"]
    grid, g = _gradient_rows(res.model, gf["res"], gf["extent"])
    run.add("gradfield.csv", lambda p: _write_rows(p, ["x", "y", "gx", "gy"],
                                                   np.hstack([grid, g])))
    stats = [("data", _radial_error(data[:n])), ("raw", _radial_error(raw)),
             ("projected", _radial_error(proj))]
    run.add("metrics.csv", lambda p: _write_rows(p, ["stage", "mean_radial_error"], stats))
    run.add("scatter.svg", lambda p: p.write_text(scatter_svg(
        [(raw, "#d62728", "raw samples"), (proj, "#1f77b4", "projected")])))


def cmd_train(cfg: RunConfig, run: Run) -> None:
    arch = cfg.arch()
    if cfg.values["inputs"]:
        dataset = [load_cloud(p) for p in cfg.values["inputs"]]
    else:
        m = cfg.manifold()
        dataset = [sample_manifold(m, cfg.values["data"]["n_points"], cfg.seed)]
    for i, cloud in enumerate(dataset):
        if cloud.shape[1] != arch.data_dim:
            raise InvalidArgument(f"training cloud {i} has {cloud.shape[1]} columns, "
                                  f"flow data_dim is {arch.data_dim}")
    encoder = None
    if arch.conditional:
        encoder = build_encoder(EncoderArchitecture(in_dim=arch.data_dim, latent_dim=arch.cond_dim),
                                cfg.seed + 1)
    with run.timed("train"):
        res = train(build_flow(arch, cfg.seed), dataset, cfg.train_config(), encoder)
    run.add("model.mflw", lambda p: save_checkpoint(p, res.model, res.encoder,
                                                    {"train": cfg.train_config().to_dict()}))
    run.add("history.csv", lambda p: res.history.to_csv(p, include_time=False))


def cmd_sample(cfg: RunConfig, run: Run) -> None:
    model, encoder = _load_model(cfg)
    cond = _cond_for(model, encoder, cfg)
    x = model.sample(cfg.values["sample"]["n"], cfg.seed, cond)
    run.add("samples.xyz", lambda p: save_xyz(x, p))


def cmd_project(cfg: RunConfig, run: Run) -> None:
    model, encoder = _load_model(cfg)
    inputs = cfg.values["inputs"]
    if not inputs:
        raise UsageError("project needs --input")
    cloud = load_cloud(inputs[-1])
    _check_dim(model, cloud, "input")
    cond = _cond_for(model, encoder, cfg) if len(inputs) > 1 else None
    if model.arch.conditional and cond is None:
        raise UsageError("a conditional flow needs two --input files: shape, then points")
    with run.timed("project"):
        out = llm_project_batch(model, cloud, cfg.llm(), cond)
    run.add("projected.xyz", lambda p: save_xyz(out, p))


def cmd_reconstruct(cfg: RunConfig, run: Run) -> None:
    rc = cfg.values["reconstruct"]
    pc = cfg.poisson()
    if rc["analytic"]:
        if rc["analytic"] != "shell":
            raise InvalidArgument(f"unknown analytic density {rc['analytic']!r}")
        density = shell_density(rc["shell_radius"], rc["shell_sigma"])
        if cfg.values["inputs"]:
            initial = load_cloud(cfg.values["inputs"][0])
        else:
            rng = np.random.default_rng(cfg.seed)
            g = rng.standard_normal((pc.k1, 3))
            initial = rc["shell_radius"] * g / np.linalg.norm(g, axis=1, keepdims=True)
            initial = initial + rc["initial_noise"] * rng.standard_normal(initial.shape)
    else:
        model, encoder = _load_model(cfg)
        if model.arch.data_dim != 3:
            raise InvalidArgument("surface reconstruction needs a 3-d flow")
        cond = _cond_for(model, encoder, cfg)
        density = flow_density(model, cond)
        initial = model.sample(pc.k1, cfg.seed, cond)
    if initial.shape[1] != 3:
        raise InvalidArgument("reconstruction needs 3-d points")
    with run.timed("reconstruct"):
        res = ll_poisson_detailed(density, initial, pc, cfg.seed)
    run.add("mesh.obj", lambda p: save_obj(res.mesh, p))
    run.add("oriented.ply", lambda p: save_oriented_ply(res.oriented, p))
    run.add("samples.xyz", lambda p: save_xyz(res.points, p))


def cmd_eval(cfg: RunConfig, run: Run) -> None:
    inputs, ref_path = cfg.values["inputs"], cfg.values["reference"]
    if not inputs or not ref_path:
        raise UsageError("eval needs --input (candidate) and --reference")
    mc = cfg.values["metrics"]
    ref = load_cloud(ref_path)
    reports = []
    for path in inputs:
        cand = load_cloud(path)
        if cand.shape[1] != ref.shape[1]:
            raise InvalidArgument(f"{path} and the reference differ in dimension")
        n = min(len(cand), len(ref))
        # equal sizes for EMD: deterministic subsets of both clouds
        rng = np.random.default_rng(cfg.seed)
        c = cand if len(cand) == n else cand[np.sort(rng.permutation(len(cand))[:n])]
        r = ref if len(ref) == n else ref[np.sort(rng.permutation(len(ref))[:n])]
        reports.append(evaluate(c, r, mc["tau"], mc["emd_mode"], label=Path(path).name))
    if mc["oracle"]:
        n = min(len(ref) // 2, reports[0].n_points)
        reports.append(oracle_metrics(ref, n, mc["repeats"], cfg.seed, mc["tau"], mc["emd_mode"]))
    run.add("metrics.csv", lambda p: write_reports_csv(reports, p))
    run.add("metrics.json", lambda p: write_reports_json(reports, p))


def cmd_gradfield(cfg: RunConfig, run: Run) -> None:
    model, encoder = _load_model(cfg)
    gf = cfg.values["gradfield"]
    if model.arch.conditional:
        raise InvalidArgument("gradfield supports unconditional flows only")
    grid, g = _gradient_rows(model, gf["res"], gf["extent"])
    names = ["x", "y", "z"][:model.arch.data_dim]
    header = names + ["g" + c for c in names]
    run.add("gradfield.csv", lambda p: _write_rows(p, header, np.hstack([grid, g])))


HANDLERS = {
    "toy-circle": cmd_toy_circle, "train": cmd_train, "sample": cmd_sample,
    "project": cmd_project, "reconstruct": cmd_reconstruct, "eval": cmd_eval,
    "gradfield": cmd_gradfield,
}


# ---------------------------------------------------------------- argv

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag -> dotted config key
_FLAG_KEYS = {
    "seed": "seed", "out": "out_dir", "checkpoint": "checkpoint", "reference": "reference",
    "epochs": "train.epochs", "sigma": "train.noise.sigma", "n": "sample.n",
    "steps": "llm.steps", "lam": "llm.lam", "lr": "llm.lr", "analytic": "reconstruct.analytic",
    "k1": "poisson.k1", "grid_res": "poisson.grid_res", "manifold": "data.kind",
    "layers": "flow.num_layers", "hidden": "flow.hidden_dim",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mflow", description="Flow-based manifold sampling and surface tools.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--checkpoint")
        p.add_argument("--input", action="append", dest="inputs", help="input cloud (repeatable)")
        p.add_argument("--reference")
        p.add_argument("--manifold")
        p.add_argument("--epochs", type=int)
        p.add_argument("--sigma", type=float)
        p.add_argument("--layers", type=int)
        p.add_argument("--hidden", type=int)
        p.add_argument("--n", type=int, help="number of samples")
        p.add_argument("--steps", type=int)
        p.add_argument("--lam", type=float)
        p.add_argument("--lr", type=float)
        p.add_argument("--k1", type=int)
        p.add_argument("--grid-res", type=int, dest="grid_res")
        p.add_argument("--analytic", choices=["shell"])
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key, e.g. train.batch_size=64")
    return parser


def _overrides(args) -> list[tuple[str, object]]:
    out = []
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out.append((k.strip(), _parse_value(v.strip())))
    for flag, key in _FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            out.append((key, val))
    if args.inputs:
        out.append(("inputs", list(args.inputs)))
    return out


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _fail(code: int, msg: str) -> int:
    print(f"mflow: error: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args.config, _overrides(args))
        with _thread_limit():
            run = Run(cfg)
            HANDLERS[args.command](cfg, run)
            run.finish()
    except (UsageError, InvalidArgument, TypeError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    except (FormatError, OSError) as exc:
        return _fail(EXIT_IO, str(exc))
    except (NumericError, ReconstructionError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    except MflowError as exc:
        return _fail(EXIT_USAGE, str(exc))
    print(f"wrote {len(run.files)} files to {run.dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
