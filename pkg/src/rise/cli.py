"""``rise`` command line.

Exit codes: 0 success, 1 config error, 2 backend error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from rise import rng as rngmod
from rise.agents import BackendError, judge_validity, make_handles, verdict_bit, verify_answer
from rise.config import (
    ConfigError,
    ImageRef,
    ScheduleConfig,
    dump_config,
    load_config_file,
    resolve_config_path,
    validate_config,
)
from rise.curation import (
    PseudoSample,
    ShardSchemaError,
    build_candidates,
    curate,
    read_shard,
    write_shard,
)
from rise.grpo import ToyPolicy, grpo_update
from rise.orchestrator import Environment, PhaseTrace, reports_from_trace, run_evolution
from rise.telemetry import Confusion, emit_reports, fmt, supervisor_pr, write_csv

logger = logging.getLogger("rise")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_IO = 0, 1, 2, 3
DEFAULT_OUT = "rise-out"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".webp", ".gif", ".bmp"}
ABLATION_COLUMNS = ("b", "n", "seed", "cycle", "step", "mean_competence", "skill_entropy",
                    "valid_and_correct_rate", "mean_questioner_reward", "mean_solver_reward")


def _load(args) -> ScheduleConfig:
    path = resolve_config_path(args.config)
    if path is None:
        raise ConfigError("no config: pass --config, set RISE_CONFIG or create ./rise.toml")
    try:
        cfg = load_config_file(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
        problems = validate_config(cfg)
        if problems:
            raise ConfigError(problems)
    return cfg


def _snapshot(cfg: ScheduleConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_config(cfg), encoding="utf-8")


def _images(args) -> list[ImageRef]:
    if not args.images:
        raise ConfigError("--backend remote needs --images DIR")
    root = Path(args.images)
    if not root.is_dir():
        raise FileNotFoundError(f"image directory {root} does not exist")
    files = sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ConfigError(f"no images found under {root}")
    return [ImageRef.file(p) for p in files]


def _environment(cfg: ScheduleConfig, args) -> Environment:
    if args.backend == "toy":
        return Environment.toy(cfg)
    return Environment.remote(cfg, _images(args))


def cmd_evolve(args) -> int:
    cfg = _load(args)
    out = Path(args.out or DEFAULT_OUT)
    _snapshot(cfg, out)
    env = _environment(cfg, args)
    result = run_evolution(cfg, env, cfg.seed, out)
    last = result.reports[-1] if result.reports else None
    if last is not None:
        print(f"{len(result.reports)} cycles; final shard {last.sampled} samples; run in {out}")
    return EXIT_OK


def cmd_construct(args) -> int:
    cfg = _load(args)
    out = Path(args.out or DEFAULT_OUT)
    _snapshot(cfg, out)
    env = _environment(cfg, args)
    if env.world is not None:
        env.world.write_registry(out / "scenes.jsonl")
    rng = rngmod.stream(cfg.seed, "construct-images", 0)
    idx = rng.choice(len(env.images), size=min(cfg.candidates_per_construct, len(env.images)), replace=False)
    images = [env.images[int(i)] for i in idx]
    pool = build_candidates(images, env.questioner, env.solver, env.supervisor, cfg, cfg.seed, 0, env.oracle())
    if pool.generated and pool.failures == pool.generated:
        raise BackendError("every construct item failed")
    tau, judged, sampled = curate(pool.entries, cfg, rngmod.stream(cfg.seed, "stratify", 0))
    write_shard([PseudoSample.from_candidate(c, 0, 0) for c in sampled], out / "shard.jsonl")
    write_csv(out / "funnel.csv", ("generated", "parsed", "tau_passed", "judge_passed", "sampled"),
              [[fmt(pool.generated), fmt(pool.parsed), fmt(len(tau)), fmt(len(judged)), fmt(len(sampled))]])
    print(f"funnel {pool.generated} -> {pool.parsed} -> {len(tau)} -> {len(judged)} -> {len(sampled)}")
    return EXIT_OK


def cmd_judge(args) -> int:
    cfg = _load(args)
    out = Path(args.out or DEFAULT_OUT)
    samples = read_shard(args.shard)
    _snapshot(cfg, out)
    if args.backend == "toy":
        env = Environment.toy(cfg)
        sup = env.supervisor
    else:
        from rise.agents import RemoteBackend

        backend = RemoteBackend.from_env(cfg)
        _, _, sup = make_handles(backend, backend, cfg)
        env = None
    rejudged, pairs = [], []
    for s in samples:
        v = judge_validity(sup, s.image, s.question).verdict
        u = verify_answer(sup, s.image, s.question.text, s.pseudo_label).verdict
        rejudged.append(PseudoSample(s.image, s.question, s.pseudo_label, s.consistency_c, v, u,
                                     s.cycle, s.step, s.tie))
        if env is not None and env.world is not None:
            ok = env.world.valid_and_correct(s.image, s.question.skill, s.question.text,
                                             s.pseudo_label.normalized)
            pairs.append((not ok, not (verdict_bit(v) and verdict_bit(u))))
    write_shard(rejudged, out / "judged.jsonl")
    v_pass = sum(verdict_bit(s.verdict_v) for s in rejudged)
    u_pass = sum(verdict_bit(s.verdict_u) for s in rejudged)
    both = sum(verdict_bit(s.verdict_v) & verdict_bit(s.verdict_u) for s in rejudged)
    header = ["judged", "v_passed", "u_passed", "both_passed"]
    row = [fmt(len(rejudged)), fmt(v_pass), fmt(u_pass), fmt(both)]
    if pairs:
        conf = Confusion.tally(pairs)
        precision, recall = supervisor_pr(conf)
        header += ["tp", "fp", "fn", "tn", "precision", "recall"]
        row += [fmt(conf.tp), fmt(conf.fp), fmt(conf.fn), fmt(conf.tn), fmt(precision), fmt(recall)]
    write_csv(out / "judge_summary.csv", header, [row])
    print(f"judged {len(rejudged)}: {both} pass both checks")
    return EXIT_OK


def cmd_stats(args) -> int:
    run = Path(args.run)
    trace_path = run / "trace.jsonl"
    if not trace_path.is_file():
        raise FileNotFoundError(f"{trace_path} not found")
    out = Path(args.out) if args.out else run
    if out != run:
        snap = run / "config.toml"
        cfg = load_config_file(snap) if snap.is_file() else _load(args)
        _snapshot(cfg, out)
    reports = reports_from_trace(PhaseTrace.read(trace_path))
    emit_reports(reports, out)
    print(f"{len(reports)} cycle reports written to {out}")
    return EXIT_OK


def grpo_demo(cfg: ScheduleConfig, steps: int, n_groups: int, step_size: float,
              n_actions: int = 8) -> list[tuple[int, float, float, int]]:
    """Bandit with Bernoulli payoffs rising in the action index; returns
    (step, expected reward, max probability, argmax) per step."""
    payoff = np.linspace(0.1, 0.9, n_actions)
    policy = ToyPolicy.uniform(n_actions)
    rows = []
    for t in range(steps):
        policy = policy.snapshot()
        rng = rngmod.stream(cfg.seed, "grpo-demo", t)
        groups = []
        for _ in range(n_groups):
            actions = policy.sample(rng, cfg.rollouts_G)
            rewards = (rng.random(cfg.rollouts_G) < payoff[actions]).astype(float)
            groups.append((list(actions), list(rewards)))
        policy = grpo_update(policy, groups, cfg, step_size)
        probs = policy.probs()
        rows.append((t + 1, float(probs @ payoff), float(probs.max()), int(probs.argmax())))
    return rows


def cmd_grpo_demo(args) -> int:
    cfg = _load(args)
    out = Path(args.out or DEFAULT_OUT)
    _snapshot(cfg, out)
    step_size = args.step_size if args.step_size is not None else cfg.step_size
    rows = grpo_demo(cfg, args.steps, args.groups, step_size)
    write_csv(out / "grpo_demo.csv", ("step", "expected_reward", "max_prob", "argmax"),
              ([fmt(s), fmt(r), fmt(m), fmt(a)] for s, r, m, a in rows))
    print(f"expected reward {rows[0][1]:.3f} -> {rows[-1][1]:.3f} after {len(rows)} steps")
    return EXIT_OK


def ablation_configs(cfg: ScheduleConfig, b_values: Sequence[int], seeds: Sequence[int]):
    """Granularity sweep at fixed B with skill balancing removed."""
    B = cfg.total_budget_B
    bad = [b for b in b_values if b <= 0 or B % b]
    if bad:
        raise ConfigError([f"b = {b} does not divide B = {B}" for b in bad])
    for b in b_values:
        for seed in seeds:
            yield b, seed, cfg.replace(cycles_n=B // b, phase_len_b=b, lambda_s=0.0,
                                       stratify=False, seed=seed)


def cmd_ablate(args) -> int:
    cfg = _load(args)
    if args.backend != "toy":
        raise ConfigError("ablate runs in the toy world only")
    out = Path(args.out or DEFAULT_OUT)
    _snapshot(cfg, out)
    base = cfg.seed
    seeds = [base + i for i in range(args.seeds)]
    rows = []
    for b, seed, c in ablation_configs(cfg, args.b_values, seeds):
        result = run_evolution(c, Environment.toy(c), seed)
        for r in result.reports:
            rows.append([fmt(b), fmt(c.cycles_n), fmt(seed), fmt(r.cycle), fmt(r.cycle * b),
                         fmt(r.mean_competence), fmt(r.entropy), fmt(r.valid_and_correct_rate),
                         fmt(r.mean_questioner_reward), fmt(r.mean_solver_reward)])
        logger.info("b=%d seed=%d done", b, seed)
    write_csv(out / "ablation.csv", ABLATION_COLUMNS, rows)
    print(f"{len(rows)} ablation rows written to {out / 'ablation.csv'}")
    return EXIT_OK


def _b_values(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat TOML config (default: $RISE_CONFIG, then ./rise.toml)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--backend", choices=("remote", "toy"), default="toy")
    common.add_argument("--out", help=f"output directory (default: {DEFAULT_OUT}; stats: the run directory)")
    common.add_argument("--images", help="image directory (remote backend)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rise", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("evolve", parents=[common], help="run the full alternation schedule")
    sub.add_parser("construct", parents=[common], help="build one curated pseudo-label shard")
    p = sub.add_parser("judge", parents=[common], help="re-judge an existing shard")
    p.add_argument("--shard", required=True)
    p = sub.add_parser("stats", parents=[common], help="recompute telemetry from a run directory")
    p.add_argument("--run", required=True)
    p = sub.add_parser("grpo-demo", parents=[common], help="toy GRPO bandit convergence run")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--groups", type=int, default=16)
    p.add_argument("--step-size", type=float, default=None)
    p = sub.add_parser("ablate", parents=[common], help="alternation granularity sweep (toy)")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--b-values", type=_b_values, default=[1, 5, 10, 20])
    return parser


COMMANDS = {
    "evolve": cmd_evolve,
    "construct": cmd_construct,
    "judge": cmd_judge,
    "stats": cmd_stats,
    "grpo-demo": cmd_grpo_demo,
    "ablate": cmd_ablate,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (OSError, ShardSchemaError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
