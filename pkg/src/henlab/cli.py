"""Command-line entry point: ``henlab <command> [options]``.

Every command writes into a fresh run directory
``<out>/<stamp>-<hash>/{weights,tables,images}`` next to ``config.snapshot``,
``log.txt`` and ``run_meta.json``. Inputs are validated before the directory
is created.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import platform
import sys
import time

import numpy as np

from . import __version__, analysis, config, raster
from .datagen import Corpus, GssSource, dump_samples, generate_gss_image
from .errors import ConfigError, EmptyCorpus, HenLabError
from .hen.core import build_hen
from .hen.train import OptState, train
from .hen.weights import load_checkpoint, load_weights, save_checkpoint, save_weights

log = logging.getLogger("henlab")

GSS_TOKEN = "gss"
EXPERIMENTS = ("domain", "shapes", "blur", "selected2gap")


# --------------------------------------------------------------------------- run directory

class Run:
    def __init__(self, cfg: config.RunConfig, command: str):
        stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
        base = os.path.join(cfg.out, f"{stamp}-{config.config_hash(cfg)}")
        path, n = base, 1
        while os.path.exists(path):
            path, n = f"{base}.{n}", n + 1
        self.path = path
        for sub in ("weights", "tables", "images"):
            os.makedirs(os.path.join(path, sub))
        with open(self.file("config.snapshot"), "w") as fh:
            fh.write(config.snapshot(cfg))
        self._handler = logging.FileHandler(self.file("log.txt"))
        self._handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logging.getLogger().addHandler(self._handler)
        meta = {"command": command, "version": __version__, "seed": cfg.seed,
                "profile": cfg.profile, "config_hash": config.config_hash(cfg),
                "python": platform.python_version(), "numpy": np.__version__,
                "seeds": {s: getattr(cfg, s).seed for s in ("gen", "gss", "train", "ransac")}}
        try:
            import scipy
            meta["scipy"] = scipy.__version__
        except ImportError:  # pragma: no cover
            pass
        with open(self.file("run_meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        log.info("run directory %s", path)

    def file(self, *parts) -> str:
        return os.path.join(self.path, *parts)

    def close(self):
        logging.getLogger().removeHandler(self._handler)
        self._handler.close()


# --------------------------------------------------------------------------- helpers

def make_source(spec: str, cfg: config.RunConfig, split: str | None = None):
    """Corpus directory, or ``gss`` / ``gssN`` for generated shape images."""
    if spec.lower().startswith(GSS_TOKEN) and not os.path.isdir(spec):
        rest = spec[len(GSS_TOKEN):]
        gss = cfg.gss
        if rest:
            if not rest.isdigit():
                raise ConfigError(f"bad GSS source {spec!r}; use gss or gssN")
            gss = dataclasses.replace(gss, n_shapes=int(rest))
        return GssSource(gss, cfg.gen)
    if not os.path.isdir(spec):
        raise EmptyCorpus(f"corpus directory {spec!r} does not exist")
    return Corpus(spec, cfg.gen, split=split or cfg.split)


def _sources(cfg, default_gss: bool = False):
    specs = cfg.sources() or ([GSS_TOKEN] if default_gss else [])
    if not specs:
        raise ConfigError("no corpus given (use --corpus or eval_corpora=...)")
    return [make_source(s, cfg) for s in specs]


def _model(cfg):
    if not cfg.weights:
        raise ConfigError("this command needs --weights")
    if not os.path.isfile(cfg.weights):
        raise ConfigError(f"weight file {cfg.weights!r} not found")
    return load_weights(cfg.weights, cfg.train.loss_scale, cfg.gen.patch_size)


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for r in rows:
            w.writerow(r)


# --------------------------------------------------------------------------- commands

def cmd_gss_gen(cfg):
    run = Run(cfg, "gss-gen")
    out = run.file("images")
    rows = [("filename", "seed", "index", "n_shapes")]
    for i in range(cfg.n_images):
        rng = np.random.default_rng([cfg.gss.seed, i])
        name = f"gss_{i:06d}.pgm"
        raster.write_pgm(os.path.join(out, name), generate_gss_image(cfg.gss, rng))
        rows.append((name, cfg.gss.seed, i, cfg.gss.n_shapes))
    _write_rows(os.path.join(out, "manifest.csv"), rows)
    return run


def cmd_pairs_gen(cfg):
    source = _sources(cfg, default_gss=True)[0]
    run = Run(cfg, "pairs-gen")
    dump_samples(source.take(cfg.samples, cfg.gen.seed), run.file("images", "pairs"))
    return run


def cmd_train(cfg):
    if not cfg.corpus:
        raise EmptyCorpus("train needs --corpus")
    source = make_source(cfg.corpus, cfg)
    if cfg.resume:
        model, state, start = load_checkpoint(cfg.resume, cfg.train.loss_scale, cfg.gen.patch_size)
        if state.kind != cfg.train.optimizer:
            raise ConfigError(f"checkpoint optimizer {state.kind!r} != {cfg.train.optimizer!r}")
    else:
        model = build_hen(cfg.model.channels, cfg.model.strides, seed=cfg.train.seed,
                          loss_scale=cfg.train.loss_scale, input_size=cfg.gen.patch_size)
        state, start = OptState.fresh(model, cfg.train.optimizer), 0
    run = Run(cfg, "train")
    log_path = run.file("tables", "loss.csv")
    fh = open(log_path, "w", newline="")
    writer = csv.writer(fh)
    writer.writerow(("step", "loss", "lr", "wall_ms"))

    def on_step(step, rec, m, st):
        writer.writerow((rec.step, repr(rec.loss), repr(rec.lr), f"{rec.wall_ms:.3f}"))
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            fh.flush()
            save_checkpoint(run.file("weights", f"ckpt_{step:07d}"), m, st, step)

    try:
        train(model, source, cfg.train, state, start_step=start, on_step=on_step,
              log_every=cfg.log_every)
    finally:
        fh.close()
    save_weights(model, run.file("weights", "final.hen"))
    save_checkpoint(run.file("weights", "last"), model, state, max(start, cfg.train.total_steps) - 1)
    return run


def cmd_eval(cfg):
    model = _model(cfg)
    sources = _sources(cfg)
    run = Run(cfg, "eval")
    pred = analysis.HENPredictor(model)
    reports = [analysis.evaluate(pred, s, cfg.samples, cfg.seed) for s in sources]
    analysis.write_csv(reports, run.file("tables", "eval.csv"))
    return run


def cmd_baseline(cfg):
    sources = _sources(cfg)
    run = Run(cfg, "baseline")
    pred = analysis.BaselinePredictor(cfg.baseline)
    reports = [analysis.evaluate(pred, s, cfg.samples, cfg.seed) for s in sources]
    analysis.write_csv(reports, run.file("tables", "baseline.csv"))
    return run


def cmd_visualize(cfg, count: int | None = None):
    model = _model(cfg)
    source = _sources(cfg, default_gss=True)[0]
    run = Run(cfg, "visualize")
    n = min(cfg.samples, 16) if count is None else count
    samples = source.take(n, cfg.seed)
    preds, _ = analysis.HENPredictor(model)(samples)
    for i, (s, p) in enumerate(zip(samples, preds)):
        focus = analysis.focus_maps(model, s)
        raster.write_pgm(run.file("images", f"focus_{i:04d}.pgm"), analysis.focus_grid(s, focus, cfg.alpha))
        raster.write_rgb_ppm(run.file("images", f"focus_{i:04d}_color.ppm"),
                             analysis.focus_grid_rgb(s, focus, cfg.alpha))
        raster.write_rgb_ppm(run.file("images", f"corners_{i:04d}.ppm"), analysis.corner_overlay(s, p))
    return run


def cmd_experiment(cfg, which: str):
    if which not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {which!r}")
    model = _model(cfg)
    if which in ("domain", "blur"):
        sources = _sources(cfg)
    else:
        sources = [make_source(cfg.corpus or GSS_TOKEN, cfg)]
        if not isinstance(sources[0], GssSource) and which == "shapes":
            raise ConfigError("the shapes experiment generates its own GSS streams; drop --corpus")
    run = Run(cfg, f"experiment {which}")
    n, seed = cfg.samples, cfg.seed
    if which == "domain":
        preds = [analysis.HENPredictor(model), analysis.BaselinePredictor(cfg.baseline)]
        reports = analysis.run_domain_eval(preds, sources, n, seed)
    elif which == "shapes":
        reports = analysis.run_shape_sweep(model, cfg.shape_counts, n, cfg.gen, cfg.gss, seed)
    elif which == "blur":
        reports = []
        for pair in analysis.run_blur_sweep(model, sources, n, seed):
            reports += pair
    else:
        normal = analysis.evaluate(analysis.HENPredictor(model, label="normal2gap"), sources[0], n, seed)
        selected = analysis.evaluate(analysis.HENPredictor(model, cfg.keep_fraction, label="selected2gap"),
                                     sources[0], n, seed)
        reports = [normal, selected]
    analysis.write_csv(reports, run.file("tables", f"{which}.csv"))
    return run


# --------------------------------------------------------------------------- argument parsing

COMMON = {"seed": "seed", "out": "out", "profile": "profile", "corpus": "corpus",
          "weights": "weights", "samples": "samples"}


def _add_common(p):
    p.add_argument("--config", metavar="PATH", help="key=value config file")
    p.add_argument("--seed", type=int, metavar="U64")
    p.add_argument("--out", metavar="DIR", help="parent of the run directory (default runs)")
    p.add_argument("--profile", choices=sorted(config.PROFILES))
    p.add_argument("--corpus", metavar="DIR", help="image directory, or gss / gssN")
    p.add_argument("--weights", metavar="PATH")
    p.add_argument("--samples", type=int, metavar="N")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="henlab", description="Homography estimation toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("gss-gen", "write GSS shape images and a manifest"),
                        ("pairs-gen", "dump training pairs with their offsets"),
                        ("train", "train a HEN model"),
                        ("eval", "evaluate a weight file on one or more corpora"),
                        ("baseline", "evaluate the classical feature baseline"),
                        ("visualize", "write focus-map grids and corner overlays")):
        _add_common(sub.add_parser(name, help=help_))
    p = sub.add_parser("experiment", help="run one analysis sweep end to end")
    p.add_argument("which", choices=EXPERIMENTS)
    _add_common(p)
    return ap


def config_from_args(args) -> config.RunConfig:
    file_values = config.read_file(args.config) if args.config else {}
    cli = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cli[k.strip()] = v.strip()
    for attr, key in COMMON.items():
        v = getattr(args, attr)
        if v is not None:
            cli[key] = str(v)
    return config.build(file_values, cli)


COMMANDS = {"gss-gen": cmd_gss_gen, "pairs-gen": cmd_pairs_gen, "train": cmd_train,
            "eval": cmd_eval, "baseline": cmd_baseline, "visualize": cmd_visualize}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        cfg = config_from_args(args)
        if args.command == "experiment":
            run = cmd_experiment(cfg, args.which)
        else:
            run = COMMANDS[args.command](cfg)
        print(run.path)
        return 0
    except HenLabError as exc:
        print(f"henlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"henlab: I/O error: {exc}", file=sys.stderr)
        return 3
    finally:
        if run is not None:
            run.close()


if __name__ == "__main__":
    sys.exit(main())
