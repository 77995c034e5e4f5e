"""Command-line interface: ``pepo-lab <subcommand>``.

Exit codes: 0 success, 2 configuration error, 3 at least one failed cell.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .datagen import build_counts, generate_dataset, load_dataset, partition, save_dataset
from .ensemble import PessimisticAggregate, output_policy, tie_upper_bound
from .experiments import child_seed, resolve_B, resolve_L, run_algorithm
from .figures import plot_panels
from .member import MemberFit, fit_ensemble, load_member, save_member
from .presets import FIGURES, reproduce
from .runner import run_experiment, write_csv
from .sampler import rejection_sample, sampling_numerator
from .tabular import HyperParams, concentrability, j_beta, kl_divergence, optimal_policy

EXIT_OK, EXIT_CONFIG, EXIT_CELL = 0, 2, 3

log = logging.getLogger("pepo_lab")


def _out_dir(args, cfg: ExperimentConfig | None = None) -> Path:
    if args.out:
        out = Path(args.out)
    elif cfg is not None:
        out = Path(cfg.output_dir)
    else:
        out = Path("results")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required for this subcommand")
    return load_config(args.config, args.seed)


def _first(cfg: ExperimentConfig, name: str | None):
    specs = cfg.algorithms if name is None else [a for a in cfg.algorithms if a.name == name]
    if not specs:
        raise ConfigError(f"algorithm {name!r} is not listed in the config")
    return specs[0]


def cmd_gen(args) -> int:
    cfg = _config(args)
    n = args.n if args.n is not None else cfg.N[-1]
    data = generate_dataset(cfg.env, n, child_seed(cfg.seed, cfg.seeds[0], n),
                            cfg.pipeline.label_rule)
    path = _out_dir(args, cfg) / f"dataset_N{n}.tsv"
    save_dataset(data, path, cfg.env)
    print(path)
    return EXIT_OK


def _write_table(path, header_line, columns, X, A):
    lines = [header_line, "# x\ta\t" + "\t".join(columns)]
    for x in range(X):
        for a in range(A):
            lines.append(f"{x}\t{a}\t" + "\t".join(repr(float(columns[c][x, a])) for c in columns))
    Path(path).write_text("\n".join(lines) + "\n")


def _read_table(path):
    meta, rows, cols = {}, [], None
    for line in Path(path).read_text().splitlines():
        if line.startswith("# x\t"):
            cols = line[2:].split("\t")[2:]
        elif line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
        elif line.strip():
            rows.append(line.split("\t"))
    if cols is None:
        raise ConfigError(f"{path}: missing column header")
    X = max(int(r[0]) for r in rows) + 1
    A = max(int(r[1]) for r in rows) + 1
    tables = {c: np.zeros((X, A)) for c in cols}
    for r in rows:
        for c, v in zip(cols, r[2:]):
            tables[c][int(r[0]), int(r[1])] = float(v)
    return meta, tables


def cmd_fit(args) -> int:
    cfg = _config(args)
    data = load_dataset(args.data)
    spec = _first(cfg, args.algorithm)
    out = _out_dir(args, cfg)
    hp = spec.hp
    if spec.name in ("pepo", "pepo-meanstd"):
        L = resolve_L(cfg.env, hp, cfg.pipeline.resolve())
        shards = partition(data, L, child_seed(cfg.seed, cfg.seeds[0], len(data), L, 1))
        members = fit_ensemble(shards, cfg.env, hp, cfg.pipeline.resolve().fit_mode,
                               cfg.pipeline.centering)
        for i, (m, s) in enumerate(zip(members, shards)):
            path = out / f"member_{i}.tsv"
            save_member(m, path, s, name=f"member{i}")
            print(path)
        return EXIT_OK
    res = run_algorithm(spec.name, data, cfg.env, hp, cfg.pipeline, hp.L,
                        child_seed(cfg.seed, cfg.seeds[0], len(data), hp.L, 1))
    path = out / f"{spec.name}.tsv"
    X, A = cfg.env.pi_ref.shape
    _write_table(path, f"# pepo-lab baseline name={spec.name} beta={hp.beta!r}",
                 {"policy": res["policy"]}, X, A)
    print(path)
    return EXIT_OK


def cmd_aggregate(args) -> int:
    cfg = _config(args)
    if not args.members:
        raise ConfigError("aggregate needs --members files")
    try:
        members = [load_member(p) for p in args.members]
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read member file: {exc}") from exc
    spec = _first(cfg, "pepo")
    hp, pipe = spec.hp, cfg.pipeline.resolve()
    if pipe.p_bar == "theoretical":
        if not args.data:
            raise ConfigError("the theoretical tie bound needs --data")
        counts = build_counts(load_dataset(args.data), cfg.env)
        hpL = HyperParams(**{**hp.__dict__, "L": len(members)})
        p_bar = tie_upper_bound(counts, hpL, cfg.env, "theoretical")
    else:
        p_bar = np.full(cfg.env.pi_ref.shape, pipe.alpha)
    B = resolve_B(cfg.env, hp, pipe)
    agg = output_policy(members, cfg.env.pi_ref, hp.beta, p_bar, B, pipe.centering)
    X, A = agg.pi_out.shape
    samp = np.log(np.stack([sampling_numerator(agg, x) for x in range(X)]))
    path = _out_dir(args, cfg) / "aggregate.tsv"
    _write_table(path, f"# pepo-lab aggregate L={len(members)} beta={hp.beta!r} B={B!r} "
                       f"equivalence_error={agg.equivalence_error!r}",
                 {"log_f_sample": samp, "pi_out": agg.pi_out,
                  "proposal": members[0].policy, "r_minus": agg.r_minus}, X, A)
    print(path)
    return EXIT_OK


def cmd_sample(args) -> int:
    meta, t = _read_table(args.aggregate)
    X, A = t["pi_out"].shape
    agg = PessimisticAggregate([], np.full((X, A), 1.0 / A), float(meta.get("beta", 1.0)),
                               np.zeros((X, A)), 0.0, t["log_f_sample"], t["pi_out"],
                               t["r_minus"])
    prompts = [int(p) for p in args.prompts.split(",")] if args.prompts else list(range(X))
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    lines = []
    for x in prompts:
        for _ in range(args.n):
            o = rejection_sample(agg, x, t["proposal"], args.delta, rng=rng)
            lines.append(f"{x}\t{o.label()}\t{o.trials_used}")
    text = "\n".join(lines) + "\n"
    if args.out:
        path = _out_dir(args) / "samples.tsv"
        path.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    try:
        _, t = _read_table(args.policy)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read policy file: {exc}") from exc
    if "pi_out" in t:
        pi = t["pi_out"]
    elif "policy" in t:
        pi = t["policy"]
    elif "u" in t:
        m: MemberFit = load_member(args.policy)
        pi = m.policy
    else:
        raise ConfigError(f"{args.policy}: no policy columns")
    beta = cfg.eval_beta if cfg.eval_beta is not None else cfg.algorithms[0].hp.beta
    pi_star = optimal_policy(cfg.env, beta)
    c_star, c_all = concentrability(pi_star, cfg.env)
    best = np.argmax(cfg.env.r_star, axis=1)
    rows = [("j_beta", j_beta(pi, cfg.env, beta)),
            ("suboptimality", j_beta(pi_star, cfg.env, beta) - j_beta(pi, cfg.env, beta)),
            ("kl_to_ref", kl_divergence(pi, cfg.env.pi_ref, cfg.env.nu0)),
            ("prob_optimal_action", float(cfg.env.nu0 @ pi[np.arange(len(best)), best])),
            ("c_star", c_star), ("c_all", c_all)]
    for k, v in rows:
        print(f"{k}\t{v!r}")
    return EXIT_OK


def _finish(rows) -> int:
    failed = sum(r.status != "ok" for r in rows)
    if failed:
        print(f"{failed} of {len(rows)} cells failed", file=sys.stderr)
        return EXIT_CELL
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    rows = run_experiment(cfg, args.jobs)
    out = _out_dir(args, cfg)
    csv_path = out / cfg.csv_name
    write_csv(rows, csv_path, args.timing)
    print(csv_path)
    if cfg.plot:
        svg = plot_panels([(cfg.title or cfg.experiment, rows)], csv_path.with_suffix(".svg"),
                          cfg.metric)
        print(svg)
    return _finish(rows)


def cmd_reproduce(args) -> int:
    if args.figure_id not in FIGURES:
        raise ConfigError(f"unknown figure id {args.figure_id!r}; known: {', '.join(FIGURES)}")
    rows, csv_path, svg = reproduce(args.figure_id, _out_dir(args), args.seed, args.jobs,
                                    args.timing)
    print(csv_path)
    print(svg)
    return _finish(rows)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="master seed (overrides PEPO_LAB_SEED and the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pepo-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a preference dataset")
    g.add_argument("--n", type=int, help="number of comparisons (default: largest sweep N)")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", parents=[common], help="fit ensemble members or a baseline")
    f.add_argument("--data", required=True)
    f.add_argument("--algorithm", help="algorithm name from the config (default: first)")
    f.set_defaults(func=cmd_fit)

    a = sub.add_parser("aggregate", parents=[common], help="aggregate member files into pi_out")
    a.add_argument("--members", nargs="+")
    a.add_argument("--data", help="dataset (needed for the theoretical tie bound)")
    a.set_defaults(func=cmd_aggregate)

    s = sub.add_parser("sample", parents=[common], help="rejection-sample from an aggregate")
    s.add_argument("--aggregate", required=True)
    s.add_argument("--prompts", help="comma-separated prompt indices (default: all)")
    s.add_argument("--n", type=int, default=1, help="samples per prompt")
    s.add_argument("--delta", type=float, default=0.05)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", parents=[common], help="score a policy file against the env")
    e.add_argument("--policy", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("run", parents=[common], help="run a full config sweep")
    r.add_argument("--timing", action="store_true", help="write wall_time to the CSV")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("reproduce", parents=[common], help="run a pinned figure config")
    rp.add_argument("figure_id", help=", ".join(FIGURES))
    rp.add_argument("--timing", action="store_true", help="write wall_time to the CSV")
    rp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
