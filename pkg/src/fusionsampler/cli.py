"""Command-line front end: self-checks, configured runs, and report rollup.

verify prints one CSV row per check on stdout and exits nonzero when any
fails. run executes one mode from a JSON config; every mode stages its
artifacts in memory and writes them only after the whole mode finishes, so a
failed run leaves no partial files. report scans a directory (and its
immediate subdirectories) for run_record.json files and rolls them up into
summary.csv, naming unreadable records in warnings instead of aborting.

Output directory precedence for run: --out, then the config's out_dir, then
the PROFUSION_OUT environment variable, then ./runs. report resolves the
directory to scan the same way, minus the config. The sweep.seeds list does
double duty as the seed list for the ablate and compare modes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from fusionsampler.artifacts import (
    load_json,
    render_csv,
    render_json,
    render_scatter_svg,
)
from fusionsampler.conditions import ConditionSet
from fusionsampler.denoiser import train_denoiser
from fusionsampler.encoder import promptnet_loss_and_grads, train_promptnet
from fusionsampler.evaluate import (
    ABLATION_COLUMNS,
    SWEEP_COLUMNS,
    AblationConfig,
    SweepConfig,
    ablation_suite,
    degeneration_benchmark,
    regularization_sweep,
    spearman,
)
from fusionsampler.mixture import MixtureOracle
from fusionsampler.runconfig import ConfigError, RunConfig, validate_config
from fusionsampler.sampler import sample_trajectory
from fusionsampler.verify import run_checks
from fusionsampler.worlds import product_world

__all__ = ["main", "RUN_MODES"]

_ENV_OUT = "PROFUSION_OUT"
_DEFAULT_OUT = "runs"


def _resolve_out(flag: str | None, config_dir: str | None = None) -> str:
    if flag is not None:
        return flag
    if config_dir is not None:
        return config_dir
    return os.environ.get(_ENV_OUT) or _DEFAULT_OUT


# ---------------------------------------------------------------- run modes


def _sample_rows(samples: np.ndarray) -> list[dict]:
    return [{f"x{j}": float(v) for j, v in enumerate(row)} for row in samples]


def _moment_metrics(samples: np.ndarray) -> dict:
    metrics: dict = {"n_samples": int(samples.shape[0])}
    for j in range(samples.shape[1]):
        metrics[f"mean_x{j}"] = float(np.mean(samples[:, j]))
        metrics[f"std_x{j}"] = float(np.std(samples[:, j]))
    return metrics


def _mode_sample(cfg: RunConfig) -> tuple[dict, dict]:
    world = cfg.world if cfg.world is not None else product_world()
    cond = cfg.condition if cfg.condition is not None else ConditionSet()
    predictor = MixtureOracle(world, cfg.schedule)
    rec = sample_trajectory(cond, cfg.fusion, predictor, cfg.schedule,
                            cfg.n_samples, seed=cfg.seed)
    metrics = _moment_metrics(rec.samples)
    files = {
        "samples.csv": render_csv(_sample_rows(rec.samples)),
        "metrics.csv": render_csv([metrics]),
    }
    return metrics, {**files, "record": rec.to_jsonable()}


def _encoder_heldout(world, den, net, seed: int, n: int = 1000):
    """Reconstruction error and mean embedding norm on fresh prior draws."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 13))))
    flat = world.prior().reshape(-1)
    cells = rng.choice(flat.size, size=n, p=flat)
    x0 = world.cell_means().reshape(-1, world.d)[cells] \
        + world.s * rng.standard_normal((n, world.d))
    t = rng.integers(1, den.T + 1, size=n)
    eps = rng.standard_normal((n, world.d))
    ab = den.schedule.alpha_bar[t]
    x_t = np.sqrt(ab)[:, None] * x0 + np.sqrt(1.0 - ab)[:, None] * eps
    text = np.eye(world.n_styles)[cells % world.n_styles]
    recon, _ = promptnet_loss_and_grads(net, den, x0, x_t, t, eps, text, 0.0)
    s = net.encode(x0, x_t, t)
    return float(recon), float(np.mean(np.linalg.norm(s, axis=1)))


def _mode_train_encoder(cfg: RunConfig) -> tuple[dict, dict]:
    world = cfg.world if cfg.world is not None else product_world()
    den = train_denoiser(world, cfg.schedule, cfg.denoiser_steps, seed=cfg.seed)
    net = train_promptnet(world, den, cfg.training)
    recon, norm = _encoder_heldout(world, den, net, cfg.seed)
    metrics = {"recon_error": recon, "embed_norm": norm,
               "lam": float(cfg.training.lam), "steps": int(cfg.training.steps)}
    files = {
        "encoder.json": render_json(net.to_jsonable()),
        "denoiser.json": render_json(den.to_jsonable()),
        "metrics.csv": render_csv([metrics]),
    }
    return metrics, files


def _mode_sweep(cfg: RunConfig) -> tuple[dict, dict]:
    sweep_cfg = SweepConfig(
        denoiser_steps=cfg.denoiser_steps,
        encoder_steps=cfg.training.steps,
        batch=cfg.training.batch,
        lr=cfg.training.lr,
        augment=cfg.training.augment,
        n_samples=cfg.n_samples,
        fusion=cfg.fusion,
    )
    rows = regularization_sweep(cfg.lambdas, cfg.sweep_seeds, sweep_cfg,
                                world=cfg.world, schedule=cfg.schedule)
    ok = [r for r in rows if r["status"] == "ok"]
    metrics: dict = {"n_rows": len(rows), "n_failed": len(rows) - len(ok)}
    if len(cfg.lambdas) >= 2:
        rec_trends, norm_trends = [], []
        for seed in cfg.sweep_seeds:
            cells = [r for r in ok if r["seed"] == seed]
            if len(cells) == len(cfg.lambdas):
                lams = np.array([r["lam"] for r in cells])
                rec_trends.append(spearman(lams, np.array([r["recon_error"]
                                                           for r in cells])))
                norm_trends.append(spearman(lams, np.array([r["embed_norm"]
                                                            for r in cells])))
        if rec_trends:
            metrics["spearman_recon"] = float(np.mean(rec_trends))
            metrics["spearman_norm"] = float(np.mean(norm_trends))
    points = []
    for lam in cfg.lambdas:
        cells = [r for r in ok if r["lam"] == lam]
        if cells:
            points.append((float(np.mean([r["identity_score"] for r in cells])),
                           float(np.mean([r["style_score"] for r in cells])),
                           f"lam={lam:g}"))
    files = {
        "metrics.csv": render_csv(rows, columns=SWEEP_COLUMNS),
        "sweep.svg": render_scatter_svg(points, "adherence by regularization"),
    }
    return metrics, {**files, "rows": rows}


def _ablation_config(cfg: RunConfig) -> AblationConfig:
    # both set: the config describes the protocol; neither: the built-in
    # conflicting-condition benchmark runs verbatim. One without the other
    # is ambiguous, so it is refused.
    if cfg.world is not None and cfg.condition is not None:
        return AblationConfig(world=cfg.world, condition=cfg.condition,
                              base=cfg.fusion, schedule=cfg.schedule,
                              n_samples=cfg.n_samples, seeds=cfg.sweep_seeds)
    if cfg.world is not None or cfg.condition is not None:
        raise ValueError(
            "ablate and compare need both world and condition (or neither,"
            " which runs the built-in benchmark)"
        )
    return degeneration_benchmark()


def _variant_summary(rows: list[dict]) -> list[dict]:
    order = []
    for row in rows:
        if row["variant"] not in order:
            order.append(row["variant"])
    out = []
    for name in order:
        ids = [r["identity_score"] for r in rows if r["variant"] == name]
        sty = [r["style_score"] for r in rows if r["variant"] == name]
        i_mean, s_mean = float(np.mean(ids)), float(np.mean(sty))
        out.append({"variant": name, "identity_score": i_mean,
                    "style_score": s_mean, "min_score": min(i_mean, s_mean)})
    return out


def _variant_svg(summary: list[dict]) -> str:
    points = [(row["identity_score"], row["style_score"], row["variant"])
              for row in summary]
    return render_scatter_svg(points, "sampler variants")


def _mode_ablate(cfg: RunConfig) -> tuple[dict, dict]:
    rows = ablation_suite(_ablation_config(cfg))
    summary = _variant_summary(rows)
    best = max(summary, key=lambda row: row["min_score"])
    metrics = {"n_rows": len(rows), "best_variant": best["variant"],
               "best_min_score": best["min_score"]}
    files = {
        "metrics.csv": render_csv(rows, columns=ABLATION_COLUMNS),
        "variants.svg": _variant_svg(summary),
    }
    return metrics, {**files, "rows": rows}


def _mode_compare(cfg: RunConfig) -> tuple[dict, dict]:
    rows = ablation_suite(_ablation_config(cfg))
    summary = _variant_summary(rows)
    best = max(summary, key=lambda row: row["min_score"])
    metrics = {"best_variant": best["variant"],
               "best_min_score": best["min_score"],
               "n_variants": len(summary)}
    files = {
        "metrics.csv": render_csv(summary),
        "variants.svg": _variant_svg(summary),
    }
    return metrics, {**files, "rows": rows}


RUN_MODES = {
    "sample": _mode_sample,
    "train-encoder": _mode_train_encoder,
    "sweep-lambda": _mode_sweep,
    "ablate": _mode_ablate,
    "compare": _mode_compare,
}


# ----------------------------------------------------------------- commands


def cmd_verify(args) -> int:
    results = run_checks(args.filter)
    if not results:
        print(f"warning: no check matches filter {args.filter!r}", file=sys.stderr)
        return 0
    print("check,passed,detail")
    for r in results:
        print(f"{r.name},{'true' if r.passed else 'false'},{r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failed checks: " + " ".join(failed), file=sys.stderr)
        return 1
    return 0


def cmd_run(args) -> int:
    try:
        payload = load_json(args.config)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as err:
        print(f"error: config is not valid JSON: {err}", file=sys.stderr)
        return 2
    if args.seed is not None:
        if not isinstance(payload, dict):
            print("error: config: expected a mapping", file=sys.stderr)
            return 2
        payload = {**payload, "seed": args.seed}
    try:
        cfg = validate_config(payload)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    try:
        metrics, files = RUN_MODES[args.mode](cfg)
    except Exception as err:  # noqa: BLE001 - a failed mode must not leave files
        print(f"error: run failed: {type(err).__name__}: {err}", file=sys.stderr)
        return 1

    record = {"mode": args.mode, "seed": cfg.seed, "config": cfg.payload,
              "metrics": metrics}
    for key in ("record", "rows"):
        if key in files:
            record[key] = files.pop(key)
    files["run_record.json"] = render_json(record)

    out_dir = _resolve_out(args.out, cfg.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    for name in sorted(files):
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            fh.write(files[name])
        print(path)
    return 0


def _record_paths(root: str) -> list[str]:
    paths = []
    direct = os.path.join(root, "run_record.json")
    if os.path.isfile(direct):
        paths.append(direct)
    if os.path.isdir(root):
        for entry in sorted(os.listdir(root)):
            nested = os.path.join(root, entry, "run_record.json")
            if os.path.isfile(nested):
                paths.append(nested)
    return paths


def cmd_report(args) -> int:
    root = _resolve_out(args.out)
    paths = _record_paths(root)
    rows = []
    unreadable = 0
    for path in paths:
        try:
            obj = load_json(path)
            row = {"path": os.path.relpath(path, root),
                   "mode": obj["mode"], "seed": obj["seed"]}
        except (json.JSONDecodeError, KeyError, OSError) as err:
            print(f"warning: skipping {path}: {type(err).__name__}: {err}",
                  file=sys.stderr)
            unreadable += 1
            continue
        for key in sorted(obj.get("metrics", {})):
            value = obj["metrics"][key]
            if isinstance(value, (int, float, str, bool)) or value is None:
                row[key] = value
        rows.append(row)

    if not paths:
        print(f"warning: no run records found under {root}", file=sys.stderr)
    columns = ["path", "mode", "seed"]
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    summary_path = os.path.join(root, "summary.csv")
    os.makedirs(root, exist_ok=True)
    with open(summary_path, "w") as fh:
        fh.write(render_csv(rows, columns=columns))

    print(f"{len(rows)} run record(s) under {root}"
          + (f" ({unreadable} unreadable)" if unreadable else ""))
    for row in rows:
        print(f"  {row['path']}: mode={row['mode']} seed={row['seed']}")
    print(summary_path)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fusionsampler",
        description="two-stage guided sampling on tractable mixtures",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="run the numerical self-checks")
    p_verify.add_argument("--filter", default=None, metavar="NAME",
                          help="only run checks whose name contains NAME")

    p_run = sub.add_parser("run", help="execute one mode from a JSON config")
    p_run.add_argument("--config", required=True, help="path to the JSON config")
    p_run.add_argument("--mode", required=True, choices=sorted(RUN_MODES))
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config seed")

    p_report = sub.add_parser("report", help="aggregate run records")
    p_report.add_argument("--out", default=None, help="directory to scan")

    args = parser.parse_args(argv)
    return {"verify": cmd_verify, "run": cmd_run, "report": cmd_report}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
