"""Command-line pipeline: surrogate data creation, encoding-plan fitting,
training, sampling, evaluation, and the five-variant baseline sweep.

Configuration is flat ``key = value`` text; command-line flags override
file values, and anything unspecified falls back to the package defaults.
Exit codes: 0 success, 1 usage error, 2 bad data or configuration,
3 numeric failure during training. Diagnostics go to standard error;
machine-readable output goes only to the requested files.
"""

import argparse
import dataclasses
import os
import struct
import sys

import numpy as np

from . import data, encoding, evalsuite, gan
from .rng import Stream

VARIANTS = ("crgan-cnet", "crgan-fc", "wgan-fc", "crgan-num", "wgan-num")

# variant -> (loss mode, categorical encoding, uses cross layers)
_VARIANT_SETTINGS = {
    "crgan-cnet": ("cramer", "embedding", True),
    "crgan-fc": ("cramer", "embedding", False),
    "wgan-fc": ("wgan", "embedding", False),
    "crgan-num": ("cramer", "band", False),
    "wgan-num": ("wgan", "band", False),
}


class ConfigError(ValueError):
    """Unknown key, unparseable value, or inconsistent variant settings."""


class UsageError(ValueError):
    """Missing required flag at the command level."""


# --------------------------------------------------------------- run config


@dataclasses.dataclass
class RunConfig:
    """Every tunable the pipeline accepts, pre-filled with the defaults the
    models were tuned at. `variant` must stay consistent with the
    (mode, encoding, cross_layers) triple; `resolve_variant` enforces it."""

    mode: str = "cramer"
    encoding: str = "embedding"
    noise_dim: int = 12
    gen_widths: tuple = (64, 128)
    h_widths: tuple = (64, 128, 128)
    h_out: int = 128
    gp_weight: float = 10.0
    n_critic: int = 5
    batch_size: int = 128
    learning_rate: float = 0.0001
    cross_layers: int = 2
    leaky_slope: float = 0.2
    iters: int = 2000
    seed: int = 0
    k_nn: int = 50
    runs: int = 1
    variant: str = "crgan-cnet"
    data: str = None
    test: str = None
    out: str = None


def _parse_int(raw: str, key: str, low=None) -> int:
    try:
        v = int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if low is not None and v < low:
        raise ConfigError(f"{key}: must be >= {low}, got {v}")
    return v


def _parse_float(raw: str, key: str, low=None) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if not np.isfinite(v):
        raise ConfigError(f"{key}: must be finite, got {raw!r}")
    if low is not None and v < low:
        raise ConfigError(f"{key}: must be >= {low}, got {v}")
    return v


def _parse_widths(raw: str, key: str) -> tuple:
    parts = [p.strip() for p in raw.split(",")]
    if not parts or any(p == "" for p in parts):
        raise ConfigError(f"{key}: expected comma-separated layer widths, got {raw!r}")
    return tuple(_parse_int(p, key, low=1) for p in parts)


def _parse_choice(raw: str, key: str, options: tuple) -> str:
    if raw not in options:
        raise ConfigError(f"{key}: expected one of {', '.join(options)}, got {raw!r}")
    return raw


# config-file key -> (RunConfig field, parser)
_KEYS = {
    "mode": ("mode", lambda r, k: _parse_choice(r, k, ("cramer", "wgan"))),
    "encoding": ("encoding", lambda r, k: _parse_choice(r, k, ("embedding", "band"))),
    "noise_dim": ("noise_dim", lambda r, k: _parse_int(r, k, low=1)),
    "gen_widths": ("gen_widths", _parse_widths),
    "h_widths": ("h_widths", _parse_widths),
    "h_out": ("h_out", lambda r, k: _parse_int(r, k, low=1)),
    "lambda": ("gp_weight", lambda r, k: _parse_float(r, k, low=0.0)),
    "n_critic": ("n_critic", lambda r, k: _parse_int(r, k, low=1)),
    "batch_size": ("batch_size", lambda r, k: _parse_int(r, k, low=2)),
    "lr": ("learning_rate", lambda r, k: _parse_float(r, k, low=0.0)),
    "cross_layers": ("cross_layers", lambda r, k: _parse_int(r, k, low=0)),
    "leaky_slope": ("leaky_slope", lambda r, k: _parse_float(r, k, low=0.0)),
    "iters": ("iters", lambda r, k: _parse_int(r, k, low=0)),
    "seed": ("seed", lambda r, k: _parse_int(r, k, low=0)),
    "k_nn": ("k_nn", lambda r, k: _parse_int(r, k, low=1)),
    "runs": ("runs", lambda r, k: _parse_int(r, k, low=1)),
    "variant": ("variant", lambda r, k: _parse_choice(r, k, VARIANTS)),
    "data": ("data", lambda r, k: r),
    "test": ("test", lambda r, k: r),
    "out": ("out", lambda r, k: r),
}

# flags whose values land in the run config when present
_FLAG_KEYS = ("data", "test", "seed", "iters", "n_critic", "variant", "out", "k_nn", "runs")


def resolve_variant(cfg: RunConfig, explicit: set) -> None:
    """Make `variant` and (mode, encoding, cross_layers) agree. An explicit
    variant fixes the others (rejecting explicit contradictions); otherwise
    the variant is inferred from the triple."""
    if "variant" in explicit:
        mode, enc, crossed = _VARIANT_SETTINGS[cfg.variant]
        for key, want in (("mode", mode), ("encoding", enc)):
            if key in explicit and getattr(cfg, key) != want:
                raise ConfigError(f"variant {cfg.variant} requires {key} = {want}")
        if crossed and cfg.cross_layers < 1:
            raise ConfigError(f"variant {cfg.variant} needs cross_layers >= 1")
        if not crossed and "cross_layers" in explicit and cfg.cross_layers != 0:
            raise ConfigError(f"variant {cfg.variant} does not use cross layers")
        cfg.mode, cfg.encoding = mode, enc
        if not crossed:
            cfg.cross_layers = 0
        return
    triple = (cfg.mode, cfg.encoding, cfg.cross_layers > 0)
    for name, settings in _VARIANT_SETTINGS.items():
        if settings == triple:
            cfg.variant = name
            return
    raise ConfigError(
        f"no variant matches mode={cfg.mode}, encoding={cfg.encoding}, "
        f"cross_layers={cfg.cross_layers}"
    )


def load_config(path=None, overrides: dict = None) -> RunConfig:
    """Defaults, then `key = value` lines from `path` (blank lines and
    `#` comments skipped), then flag overrides, then variant resolution."""
    cfg = RunConfig()
    explicit = set()
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().split("\n")
        for i, line in enumerate(lines):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{i + 1}: expected key = value, got {line!r}")
            key, _, raw = text.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in _KEYS:
                raise ConfigError(f"{path}:{i + 1}: unknown config key {key!r}")
            field, parse = _KEYS[key]
            setattr(cfg, field, parse(raw, key))
            explicit.add(field)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        setattr(cfg, key, value)
        explicit.add(key)
    resolve_variant(cfg, explicit)
    return cfg


_ECHO_KEYS = (
    "variant", "mode", "encoding", "noise_dim", "gen_widths", "h_widths",
    "h_out", "lambda", "n_critic", "batch_size", "lr", "cross_layers",
    "leaky_slope", "iters", "seed", "k_nn", "runs",
)


def save_config(cfg: RunConfig, path) -> None:
    """Echo the resolved settings as a reloadable `key = value` file
    (paths are omitted; they describe the invocation, not the model)."""
    lines = []
    for key in _ECHO_KEYS:
        v = getattr(cfg, _KEYS[key][0])
        if isinstance(v, tuple):
            v = ",".join(str(w) for w in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{key} = {v}")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(lines) + "\n")


def gan_config(cfg: RunConfig) -> gan.GanConfig:
    return gan.GanConfig(
        mode=cfg.mode,
        encoding=cfg.encoding,
        noise_dim=cfg.noise_dim,
        gen_widths=tuple(cfg.gen_widths),
        h_widths=tuple(cfg.h_widths),
        h_out=cfg.h_out,
        gp_weight=cfg.gp_weight,
        n_critic=cfg.n_critic,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        cross_layers=cfg.cross_layers,
        leaky_slope=cfg.leaky_slope,
        iters=cfg.iters,
    )


# --------------------------------------------------------- checkpoint files

_MAGIC = b"PNRGAN01"


def save_tensors(tensors: dict, path) -> None:
    """Name-sorted binary container: magic, count, then per tensor the
    utf-8 name, shape, and little-endian float64 data. Byte-stable for
    identical inputs."""
    chunks = [_MAGIC, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        a = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f8"))
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}q", *a.shape))
        chunks.append(a.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load_tensors(path) -> dict:
    with open(path, "rb") as f:
        buf = f.read()

    def take(n, what):
        nonlocal off
        if off + n > len(buf):
            raise data.DataError(f"{path}: truncated checkpoint ({what})")
        out = buf[off:off + n]
        off += n
        return out

    off = 0
    if take(len(_MAGIC), "magic") != _MAGIC:
        raise data.DataError(f"{path}: not a checkpoint file")
    (count,) = struct.unpack("<I", take(4, "count"))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        name = take(nlen, "name").decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4, "rank"))
        shape = struct.unpack(f"<{ndim}q", take(8 * ndim, "shape"))
        size = 1
        for s in shape:
            if s < 0:
                raise data.DataError(f"{path}: negative dimension in {name!r}")
            size *= s
        raw = take(8 * size, f"data for {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    if off != len(buf):
        raise data.DataError(f"{path}: trailing bytes after checkpoint payload")
    return tensors


# ------------------------------------------------------------- dataset io


def _load_dataset(path) -> data.Dataset:
    """CSV plus its `.schema` sidecar; files written without one are read
    with the surrogate schema."""
    sidecar = f"{path}.schema"
    if os.path.exists(sidecar):
        schema = data.load_schema(sidecar)
    else:
        schema = data.surrogate_schema()
    return data.load_csv(path, schema)


def _write_dataset(d: data.Dataset, path) -> None:
    data.write_csv(d, path)
    data.save_schema(d.schema, f"{path}.schema")


def _load_model(prefix: str) -> gan.GanModel:
    cfg = load_config(f"{prefix}.cfg")
    gcfg = gan_config(cfg)
    plan = encoding.load_plan(f"{prefix}.plan.txt")
    codec = None
    if gcfg.encoding == "band":
        codec = encoding.load_band_codec(f"{prefix}.band.txt")
    return gan.model_from_tensors(gcfg, plan, load_tensors(f"{prefix}.params"), codec)


def _save_metrics(metrics, path) -> None:
    lines = ["iter,loss_g,loss_d,gp"]
    for it, lg, ld, gp in metrics:
        lines.append(f"{int(it)},{float(lg)!r},{float(ld)!r},{float(gp)!r}")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(lines) + "\n")


# ------------------------------------------------------------- subcommands


def _say(quiet: bool, message: str) -> None:
    if not quiet:
        print(message, file=sys.stderr)


def _progress(quiet: bool, total: int, label: str = ""):
    if quiet:
        return None

    def on_iteration(it, model):
        if it % 100 == 0:
            print(f"{label}iter {it}/{total}", file=sys.stderr)

    return on_iteration


def _require(cfg: RunConfig, *fields) -> None:
    for f in fields:
        if getattr(cfg, f) is None:
            raise UsageError(f"missing required flag --{f}")


def _overrides(args, keys=_FLAG_KEYS) -> dict:
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


def _cmd_synth_data(args) -> int:
    d = data.make_surrogate(args.rows, args.seed)
    _write_dataset(d, args.out)
    _say(args.quiet, f"wrote {len(d)} rows to {args.out}")
    return 0


def _cmd_fit_plan(args) -> int:
    d = _load_dataset(args.data)
    plan = encoding.fit_plan(d)
    encoding.save_plan(plan, f"{args.out}.plan.txt")
    made = [f"{args.out}.plan.txt"]
    variant = args.variant or RunConfig().variant
    if _VARIANT_SETTINGS[variant][1] == "band":
        codec = encoding.fit_band_codec(d, plan)
        encoding.save_band_codec(codec, f"{args.out}.band.txt")
        made.append(f"{args.out}.band.txt")
    _say(args.quiet, "wrote " + ", ".join(made))
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    _require(cfg, "data", "out")
    train_data = _load_dataset(cfg.data)
    gcfg = gan_config(cfg)
    plan = encoding.fit_plan(train_data)
    model, metrics = gan.train(train_data, gcfg, plan, cfg.seed,
                               on_iteration=_progress(args.quiet, gcfg.iters))
    save_tensors(model.tensors(), f"{cfg.out}.params")
    save_config(cfg, f"{cfg.out}.cfg")
    encoding.save_plan(plan, f"{cfg.out}.plan.txt")
    if model.codec is not None:
        encoding.save_band_codec(model.codec, f"{cfg.out}.band.txt")
    _save_metrics(metrics, f"{cfg.out}.metrics.csv")
    _say(args.quiet, f"trained {cfg.variant} for {gcfg.iters} iterations -> {cfg.out}.*")
    return 0


def _cmd_generate(args) -> int:
    model = _load_model(args.prefix)
    d = gan.generate(model, args.rows, args.seed)
    _write_dataset(d, args.out)
    _say(args.quiet, f"wrote {len(d)} rows to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = load_config(None, _overrides(args))
    _require(cfg, "data", "test", "out")
    model = _load_model(args.prefix)
    train_data = _load_dataset(cfg.data)
    test_data = _load_dataset(cfg.test)
    evalsuite.full_report(train_data, test_data, model, seed=cfg.seed,
                          runs=cfg.runs, out_dir=cfg.out, k_nn=cfg.k_nn)
    _say(args.quiet, f"wrote report.json and sidecars to {cfg.out}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    _require(cfg, "data", "test", "out")
    train_data = _load_dataset(cfg.data)
    test_data = _load_dataset(cfg.test)
    rows = ["variant,two_sample_rf"]
    for variant in VARIANTS:
        vcfg = dataclasses.replace(cfg, variant=variant, cross_layers=RunConfig().cross_layers)
        resolve_variant(vcfg, {"variant"})
        gcfg = gan_config(vcfg)
        _say(args.quiet, f"[{variant}] training for {gcfg.iters} iterations")
        plan = encoding.fit_plan(train_data)
        model, _ = gan.train(train_data, gcfg, plan, cfg.seed,
                             on_iteration=_progress(args.quiet, gcfg.iters, f"[{variant}] "))
        synth = gan.generate(model, len(test_data), Stream(cfg.seed).child(f"gen_{variant}"))
        score = evalsuite.two_sample_score(test_data, synth, "rf",
                                           seed=Stream(cfg.seed).child(f"score_{variant}"))
        _say(args.quiet, f"[{variant}] two_sample_rf = {score:.4f}")
        rows.append(f"{variant},{float(score)!r}")
    with open(cfg.out, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(rows) + "\n")
    _say(args.quiet, f"wrote {cfg.out}")
    return 0


# ------------------------------------------------------------------ driver


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pnrgan",
        description="Synthetic booking-record generation and evaluation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("synth-data", help="write a surrogate dataset")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("fit-plan", help="fit and save an encoding plan")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_fit_plan)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--n-critic", dest="n_critic", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--out", help="checkpoint prefix")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="sample rows from a checkpoint")
    p.add_argument("prefix", help="checkpoint prefix written by train")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("evaluate", help="run the evaluation battery")
    p.add_argument("prefix", help="checkpoint prefix written by train")
    p.add_argument("--data", help="training CSV (memorization reference)")
    p.add_argument("--test", help="held-out CSV")
    p.add_argument("--seed", type=int)
    p.add_argument("--k-nn", dest="k_nn", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--out", help="report directory")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="train every variant and tabulate scores")
    p.add_argument("--data")
    p.add_argument("--test")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--n-critic", dest="n_critic", type=int)
    p.add_argument("--out", help="output table CSV")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage: pnrgan {args.command}: {exc}", file=sys.stderr)
        return 1
    except gan.TrainingError as exc:
        print(f"pnrgan {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"pnrgan {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
