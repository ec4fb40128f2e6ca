"""``saeclab`` command line: synth, run, train, eval, config.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import NlmsState, WienerParams
from .config import OUTPUT_ENV, ConfigError, dump, load_config, output_root
from .dsp import ParameterError, read_wav, write_wav
from .experiments import BundleSpec, DatasetRecipe, evaluate, run_algorithm, synth_bundle
from .scenario import MixtureBundle

log = logging.getLogger("saeclab")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
DATASET_MANIFEST = "dataset.json"


class DataError(RuntimeError):
    """Missing or unreadable inputs (CLI exit code 3)."""


# --- synth -----------------------------------------------------------------------


def grid_specs(cfg: dict) -> list[tuple[str, BundleSpec]]:
    """Cartesian product of the grid, one spec per utterance draw, with stable ids and seeds."""
    g = cfg["grid"]
    out = []
    index = 0
    for mode in g["modes"]:
        sers = g["ser_db"] if mode == "double" else [None]
        for room, t60, ser, snr, noise, utt in itertools.product(
                g["rooms"], g["t60"], sers, g["snr_db"], g["noise"], range(g["utterances"])):
            seed = int(np.random.SeedSequence([cfg["seed"], index]).generate_state(1)[0])
            spec = BundleSpec(tuple(room), tuple(room), float(t60),
                              None if ser is None else float(ser), float(snr),
                              float(g["talker_distance"]), noise, seed, mode)
            out.append((f"b{index:04d}", spec))
            index += 1
    return out


def _recipe(cfg):
    d, c = cfg["dataset"], cfg["corpus"]
    return DatasetRecipe(d["duration"], d["utterances_per_far_end"], tuple(d["near_fraction"]),
                         d["sample_rate"], c["near_dir"], c["far_dir"], c["noise_dir"],
                         d["mic_level_dbfs"])


def _check_corpus(cfg):
    missing = [f"{k}={v}" for k, v in cfg["corpus"].items()
               if v is not None and not Path(v).is_dir()]
    if missing:
        raise DataError("missing corpus paths: " + ", ".join(missing))


def _synth_one(args):
    ident, spec, recipe, target = args
    bundle = synth_bundle(spec, recipe)
    bundle.info["id"] = ident
    bundle.save(Path(target) / ident)
    return ident, {k: bundle.info.get(k) for k in ("measured_ser_db", "measured_snr_db")}


def _map(fn, items, jobs):
    if jobs <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def cmd_synth(cfg, dataset: Path) -> Path:
    _check_corpus(cfg)
    specs = grid_specs(cfg)
    dataset.mkdir(parents=True, exist_ok=True)
    recipe = _recipe(cfg)
    results = dict(_map(_synth_one, [(i, s, recipe, dataset) for i, s in specs], cfg["jobs"]))
    entries = []
    for ident, s in specs:
        entries.append({"id": ident, "mode": s.mode, "room": list(s.room_far), "t60": s.t60,
                        "ser_db": s.ser_db, "snr_db": s.snr_db, "noise": s.noise,
                        "talker_distance": s.talker_distance, "seed": s.seed, **results[ident]})
    # jobs and output location do not change the data, so they stay out of the manifest
    recorded = {k: v for k, v in cfg.items() if k not in ("jobs", "output_dir")}
    manifest = {"version": __version__, "seed": cfg["seed"], "config": recorded, "bundles": entries}
    (dataset / DATASET_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    log.info("wrote %d bundles to %s", len(entries), dataset)
    return dataset


def read_dataset(dataset: Path) -> list[dict]:
    path = Path(dataset) / DATASET_MANIFEST
    if not path.is_file():
        raise DataError(f"{dataset} is not a dataset directory (no {DATASET_MANIFEST})")
    try:
        return json.loads(path.read_text())["bundles"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"{path}: unreadable manifest ({exc})") from None


def _load_bundle(dataset, ident):
    try:
        return MixtureBundle.load(Path(dataset) / ident)
    except (FileNotFoundError, ParameterError, ValueError) as exc:
        raise DataError(f"bundle {ident}: {exc}") from None


# --- run -------------------------------------------------------------------------


def _load_model(path):
    from .neural import load_checkpoint
    if path is None:
        raise ConfigError("algo.checkpoint is required for neural algorithms")
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint {path} not found") from None


def _run_one(args):
    dataset, ident, algo, cfg, out_dir = args
    a = cfg["algo"]
    bundle = _load_bundle(dataset, ident)
    model = _load_model(a["checkpoint"]) if algo.startswith("neural") else None
    nlms = NlmsState(**a["nlms"])
    wiener = WienerParams(**a["wiener"])
    enhanced = run_algorithm(algo, bundle, model, nlms, wiener)
    write_wav(Path(out_dir) / f"{ident}.wav", enhanced)
    return {"id": ident, "samples": len(enhanced),
            "finite": bool(np.all(np.isfinite(enhanced.samples)))}


def cmd_run(cfg, dataset: Path, out_dir: Path) -> Path:
    algo = cfg["algo"]["name"]
    entries = read_dataset(dataset)
    if algo.startswith("neural"):
        _load_model(cfg["algo"]["checkpoint"])  # fail before any work
    out_dir.mkdir(parents=True, exist_ok=True)
    items = [(dataset, e["id"], algo, cfg, out_dir) for e in entries]
    logs = _map(_run_one, items, cfg["jobs"])
    record = {"algo": algo, "params": cfg["algo"], "dataset": str(dataset), "outputs": logs}
    (out_dir / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True))
    log.info("%s: enhanced %d bundles into %s", algo, len(logs), out_dir)
    return out_dir


# --- train -----------------------------------------------------------------------


def cmd_train(cfg, dataset: Path, checkpoint: Path) -> Path:
    from .neural import SaesModel, Schedule, make_config, save_checkpoint, train_two_stage
    t = cfg["train"]
    entries = read_dataset(dataset)
    examples = [_load_bundle(dataset, e["id"]) for e in entries]
    model = SaesModel(make_config(t["scale"], t["taps"]), seed=t["seed"])

    def progress(stage, epoch, means):
        log.info("stage %d epoch %d loss %.5f", stage, epoch, means[0])

    res = train_two_stage(examples, model, Schedule(t["stage1_epochs"], t["stage2_epochs"], t["lr"],
                                                    batch_size=t["batch_size"], seed=t["seed"]),
                          progress)
    save_checkpoint(model, checkpoint, extra={"train": t, "dataset": str(dataset)})
    curve = checkpoint.with_suffix(".loss.csv")
    with curve.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "epoch", "loss"])
        for i, v in enumerate(res.stage1_loss):
            w.writerow([1, i, repr(v)])
        for i, v in enumerate(res.stage2_loss):
            w.writerow([2, i, repr(v)])
    return checkpoint


# --- eval ------------------------------------------------------------------------


def _algo_dirs(enhanced: Path):
    if (enhanced / "run.json").is_file():
        return [enhanced]
    dirs = sorted(p for p in enhanced.iterdir() if (p / "run.json").is_file()) \
        if enhanced.is_dir() else []
    if not dirs:
        raise DataError(f"{enhanced} holds no run output (run.json)")
    return dirs


def summarize(reports) -> list[dict]:
    """Mean ERLE / ESTOI per (algo, noise, snr_db) group, in first-seen order."""
    groups = {}
    for r in reports:
        groups.setdefault((r.algo, r.noise, r.snr_db), []).append(r)
    rows = []
    for (algo, noise, snr), rs in groups.items():
        erles = [r.erle_db for r in rs if r.erle_db is not None]
        stois = [r.estoi for r in rs if r.estoi is not None]
        rows.append({"algo": algo, "noise": noise, "snr_db": snr, "n": len(rs),
                     "pesq": "unavailable",
                     "estoi": float(np.mean(stois)) if stois else "",
                     "erle_db": float(np.mean(erles)) if erles else ""})
    return rows


def _write_csv(path, fields, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def cmd_eval(dataset: Path, enhanced: Path, out_dir: Path) -> list:
    entries = read_dataset(dataset)
    reports = []
    for adir in _algo_dirs(enhanced):
        algo = json.loads((adir / "run.json").read_text())["algo"]
        for e in entries:
            bundle = _load_bundle(dataset, e["id"])
            wav = adir / f"{e['id']}.wav"
            if not wav.is_file():
                raise DataError(f"missing enhanced file {wav}")
            try:
                est = read_wav(wav, bundle.sample_rate)
            except ParameterError as exc:
                raise DataError(str(exc)) from None
            reports.append(evaluate(bundle, est, algo, e["id"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    from .metrics import MetricsReport
    _write_csv(out_dir / "metrics.csv", MetricsReport.CSV_FIELDS, [r.row() for r in reports])
    _write_csv(out_dir / "summary.csv", ["algo", "noise", "snr_db", "n", "pesq", "estoi", "erle_db"],
               summarize(reports))
    tidy = []
    for r in reports:
        for metric, value in (("estoi", r.estoi), ("erle_db", r.erle_db)):
            if value is not None:
                tidy.append({"id": r.id, "algo": r.algo, "mode": r.mode, "noise": r.noise,
                             "snr_db": r.snr_db, "ser_db": "" if r.ser_db is None else r.ser_db,
                             "metric": metric, "value": value})
    _write_csv(out_dir / "plot_data.csv",
               ["id", "algo", "mode", "noise", "snr_db", "ser_db", "metric", "value"], tidy)
    return reports


# --- argument handling -----------------------------------------------------------


def _overrides(args) -> dict:
    o = {}
    if getattr(args, "jobs", None) is not None:
        o["jobs"] = args.jobs
    if getattr(args, "seed", None) is not None:
        o["seed"] = args.seed
    algo = {}
    if getattr(args, "algo", None) is not None:
        algo["name"] = args.algo
    nlms = {k: v for k, v in (("filter_len", getattr(args, "filter_len", None)),
                              ("mu", getattr(args, "mu", None)),
                              ("delta", getattr(args, "delta", None))) if v is not None}
    wiener = {k: v for k, v in (("alpha_psd", getattr(args, "alpha_psd", None)),
                                ("gain_floor", getattr(args, "gain_floor", None))) if v is not None}
    if nlms:
        algo["nlms"] = nlms
    if wiener:
        algo["wiener"] = wiener
    if getattr(args, "checkpoint", None) is not None and args.command == "run":
        algo["checkpoint"] = str(args.checkpoint)
    if algo:
        o["algo"] = algo
    train = {k: getattr(args, k) for k in ("stage1_epochs", "stage2_epochs", "lr", "scale")
             if getattr(args, k, None) is not None}
    if train:
        o["train"] = train
    return o


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saeclab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("-c", "--config", type=Path, help="YAML or JSON config file")
        sp.add_argument("--jobs", type=int, help="bundle-level worker processes")
        sp.add_argument("-v", "--verbose", action="store_true", help="log progress")

    sp = sub.add_parser("synth", help="synthesize a mixture dataset over the config grid")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", type=Path, help=f"dataset dir (default <output root>/dataset; root from {OUTPUT_ENV})")

    sp = sub.add_parser("run", help="apply one algorithm to every bundle")
    common(sp)
    sp.add_argument("--dataset", type=Path)
    sp.add_argument("--out", type=Path, help="default <output root>/enhanced/<algo>")
    sp.add_argument("--algo", choices=["none", "nlms", "wiener", "neural", "neural-stage1"])
    sp.add_argument("--filter-len", type=int)
    sp.add_argument("--mu", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--alpha-psd", type=float)
    sp.add_argument("--gain-floor", type=float)
    sp.add_argument("--checkpoint", type=Path)

    sp = sub.add_parser("train", help="two-stage training of the neural suppressor")
    common(sp)
    sp.add_argument("--dataset", type=Path)
    sp.add_argument("--checkpoint", type=Path, help="output stem (default <output root>/model)")
    sp.add_argument("--stage1-epochs", type=int)
    sp.add_argument("--stage2-epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--scale", type=int)

    sp = sub.add_parser("eval", help="score enhanced outputs; writes metrics, summary and plot CSVs")
    common(sp)
    sp.add_argument("--dataset", type=Path)
    sp.add_argument("--enhanced", type=Path, help="one run dir or a parent of several")
    sp.add_argument("--out", type=Path, help="default <output root>/eval")

    sp = sub.add_parser("config", help="inspect configuration")
    sp.add_argument("action", choices=["print-defaults", "validate", "show"])
    sp.add_argument("file", nargs="?", type=Path)
    sp.add_argument("--format", choices=["yaml", "json"], default="yaml")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "config":
            if args.action == "print-defaults":
                print(dump(load_config(), args.format), end="")
            else:
                if args.file is None:
                    raise ConfigError(f"config {args.action} needs a file")
                cfg = load_config(args.file)
                if args.action == "show":
                    print(dump(cfg, args.format), end="")
                else:
                    print(f"{args.file}: ok")
            return EXIT_OK
        cfg = load_config(args.config, _overrides(args))
        root = output_root(cfg)
        dataset = getattr(args, "dataset", None) or root / "dataset"
        if args.command == "synth":
            cmd_synth(cfg, args.out or root / "dataset")
        elif args.command == "run":
            cmd_run(cfg, dataset, args.out or root / "enhanced" / cfg["algo"]["name"])
        elif args.command == "train":
            cmd_train(cfg, dataset, args.checkpoint or root / "model")
        elif args.command == "eval":
            cmd_eval(dataset, args.enhanced or root / "enhanced", args.out or root / "eval")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
