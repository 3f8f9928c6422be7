"""Command-line front end.

Subcommands select the valuation method; the game comes either from a
synthetic family (``--game``) or from CSV datasets (``--train/--test``).
A flat key=value config file can hold any option, with command-line
flags taking precedence.  Results go to stdout or, with ``--output``, to
CSV plus a JSON metadata sibling (or a single JSON document).
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import analytics, compressive, group_testing, knn, permutation
from .datasets import load_labeled_csv, signed_labels
from .errors import ConfigError, ShapvalError, SizeGuardError, UnknownMethodError
from .games import (
    Game,
    ValueVector,
    exact_shapley_subsets,
    make_additive_game,
    make_glove_game,
    make_random_game,
    make_symmetric_game,
    make_voting_game,
)
from .results import ResultRecord, write_record

METHODS = (
    "exact",
    "perm",
    "group-test",
    "compressive",
    "knn",
    "uniform",
    "loo-influence",
    "sweep",
)
GAME_KINDS = ("additive", "symmetric", "glove", "voting", "random")
ORACLE_GUARD = 20

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_UNKNOWN_METHOD = 3
EXIT_BAD_CONFIG = 4
EXIT_UNREADABLE = 5
EXIT_SIZE_GUARD = 6


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment run needs; exactly one game source."""

    method: str
    game_kind: str | None = None
    weights: tuple[float, ...] | None = None
    quota: float | None = None
    players: int | None = None
    size_values: tuple[float, ...] | None = None
    game_seed: int = 0
    range_r: float = 1.0
    train: str | None = None
    test: str | None = None
    k: int | None = None
    epsilon: float | None = None
    delta: float | None = None
    seed: int = 0
    permutations: int | None = None
    tests: int | None = None
    measurements: int | None = None
    recovery: str = "feasibility"
    l2: float = 1e-3
    with_oracle: bool = False
    output: str | None = None
    fmt: str = "csv"
    threads: int | None = None
    budgets: tuple[int, ...] = ()
    sweep_method: str | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise UnknownMethodError(f"unknown method {self.method!r}")
        synthetic = self.game_kind is not None
        dataset = self.train is not None or self.test is not None
        if synthetic and dataset:
            raise ConfigError("give either a synthetic game or dataset paths, not both")
        if not synthetic and not dataset and self.method != "sweep":
            raise ConfigError("no game specified: use --game or --train/--test")
        if dataset and (self.train is None or self.test is None):
            raise ConfigError("dataset games need both --train and --test")
        if self.fmt not in ("csv", "json"):
            raise ConfigError(f"unknown output format {self.fmt!r}")
        if self.recovery not in ("feasibility", "baseline"):
            raise ConfigError(f"unknown recovery route {self.recovery!r}")


def build_game(config: ExperimentConfig) -> Game:
    """Materialize the configured game (synthetic family or KNN dataset)."""
    if config.game_kind is not None:
        kind = config.game_kind
        if kind not in GAME_KINDS:
            raise ConfigError(f"unknown game kind {kind!r}")
        if kind == "additive":
            if config.weights is None:
                raise ConfigError("additive games need --weights")
            return make_additive_game(config.weights)
        if kind == "symmetric":
            if config.players is None:
                raise ConfigError("symmetric games need --players")
            return make_symmetric_game(config.players, config.size_values)
        if kind == "glove":
            return make_glove_game()
        if kind == "voting":
            if config.weights is None or config.quota is None:
                raise ConfigError("voting games need --weights and --quota")
            return make_voting_game(config.weights, config.quota)
        if config.players is None:
            raise ConfigError("random games need --players")
        return make_random_game(config.players, config.game_seed, config.range_r)
    instances = load_knn_instances(config)
    return knn.knn_game(instances)


def load_knn_instances(config: ExperimentConfig) -> list[knn.KnnInstance]:
    if config.k is None:
        raise ConfigError("dataset games need --k")
    x_train, y_train = load_labeled_csv(config.train)
    x_test, y_test = load_labeled_csv(config.test)
    if x_test.shape[1] != x_train.shape[1]:
        raise ConfigError("train and test files must share the feature width")
    return [
        knn.KnnInstance(x_train, y_train, x_test[i], y_test[i], config.k)
        for i in range(x_test.shape[0])
    ]


def _looinfluence_values(config: ExperimentConfig) -> ValueVector:
    """Largest-coalition heuristic fed by influence-approximated marginals.

    Utility convention: a coalition is worth the drop in mean test log
    loss relative to the untrained (zero-parameter) model, so the total
    is ln 2 - test loss of the full model.
    """
    x, labels = load_labeled_csv(config.train)
    y = signed_labels(labels)
    xt, labels_t = load_labeled_csv(config.test)
    yt = signed_labels(labels_t)
    model = analytics.fit_logistic(x, y, l2=config.l2)
    margins_t = yt * (xt @ model.theta)
    misfit = 1.0 / (1.0 + np.exp(np.clip(margins_t, -500, 500)))
    test_grad = -(xt.T @ (misfit * yt)) / xt.shape[0]
    marginals = np.array(
        [
            -float(test_grad @ analytics.influence_removal_logistic(model, i))
            for i in range(x.shape[0])
        ]
    )
    u_total = math.log(2.0) - analytics.logistic_loss(model.theta, xt, yt)
    vv = analytics.largest_s_values(marginals, u_total)
    return ValueVector(vv.values, method="loo-influence", eval_count=0, seed=config.seed)


def _estimator_values(config: ExperimentConfig, game: Game) -> ValueVector:
    method = config.method
    if method == "exact":
        return exact_shapley_subsets(game)
    if method == "perm":
        if config.permutations is not None:
            budget = permutation.PermutationBudget(
                config.permutations, epsilon=config.epsilon, delta=config.delta
            )
        else:
            if config.epsilon is None or config.delta is None:
                raise ConfigError("perm needs --permutations or --epsilon/--delta")
            budget = permutation.PermutationBudget.from_accuracy(
                game.range_r, game.n_players, config.epsilon, config.delta
            )
        return permutation.estimate_permutation(game, budget, config.seed, threads=config.threads)
    if method == "group-test":
        if config.epsilon is None or config.delta is None:
            raise ConfigError("group-test needs --epsilon and --delta")
        return group_testing.estimate_group_testing(
            game,
            config.epsilon,
            config.delta,
            config.seed,
            recovery=config.recovery,
            t_tests=config.tests,
            threads=config.threads,
        )
    if method == "compressive":
        if config.measurements is None:
            raise ConfigError("compressive needs --measurements")
        if config.epsilon is None:
            raise ConfigError("compressive needs --epsilon")
        if config.permutations is not None:
            t = config.permutations
        else:
            if config.delta is None:
                raise ConfigError("compressive needs --permutations or --delta")
            t = compressive.required_t_compressive(
                game.range_r, config.epsilon, config.delta, config.measurements
            )
        return compressive.estimate_compressive(
            game, config.measurements, t, config.epsilon, config.seed, threads=config.threads
        )
    if method == "uniform":
        return analytics.uniform_division(game.u_total, game.n_players)
    raise UnknownMethodError(f"unknown method {method!r}")


def run_experiment(config: ExperimentConfig) -> ResultRecord:
    """Dispatch to the configured method; optionally attach oracle error metrics."""
    start = time.perf_counter()
    oracle_game: Game | None = None
    if config.method == "loo-influence":
        if config.with_oracle:
            raise ConfigError("--with-oracle is not supported for loo-influence")
        vv = _looinfluence_values(config)
    elif config.method == "knn":
        instances = load_knn_instances(config)
        vv = knn.knn_shapley_testset(instances)
        vv = ValueVector(vv.values, method="knn", eval_count=0, seed=config.seed)
        if config.with_oracle:
            oracle_game = knn.knn_game(instances)
    else:
        game = build_game(config)
        vv = _estimator_values(config, game)
        oracle_game = game
    l2_err = linf_err = None
    if config.with_oracle and config.method != "loo-influence":
        assert oracle_game is not None
        if oracle_game.n_players > ORACLE_GUARD:
            raise SizeGuardError(
                f"oracle error metrics are limited to {ORACLE_GUARD} players"
            )
        oracle = exact_shapley_subsets(oracle_game)
        diff = vv.values - oracle.values
        l2_err = float(np.linalg.norm(diff))
        linf_err = float(np.max(np.abs(diff)))
    wall = time.perf_counter() - start
    return ResultRecord(
        values=tuple(float(v) for v in vv.values),
        method=config.method,
        n_players=len(vv),
        seed=config.seed,
        eval_count=vv.eval_count,
        wall_time_s=wall,
        epsilon=config.epsilon,
        delta=config.delta,
        flags=vv.flags,
        l2_error=l2_err,
        linf_error=linf_err,
    )


def sweep_budgets(config: ExperimentConfig, budget_list) -> list[ResultRecord]:
    """One record per budget entry, for the method named in the sweep config."""
    method = config.sweep_method or config.method
    if method in ("sweep",) or method not in METHODS:
        raise UnknownMethodError(f"sweep needs a concrete method, got {method!r}")
    records = []
    for budget in budget_list:
        if budget < 1:
            raise ConfigError("budgets must be positive")
        override: dict = {"method": method, "budgets": (), "sweep_method": None}
        if method in ("perm", "compressive"):
            override["permutations"] = int(budget)
        elif method == "group-test":
            override["tests"] = int(budget)
        else:
            raise ConfigError(f"method {method!r} takes no sampling budget")
        records.append(run_experiment(replace(config, **override)))
    return records


# -- configuration plumbing -------------------------------------------------

_CONFIG_KEYS = {
    "method",
    "game",
    "weights",
    "quota",
    "players",
    "size_values",
    "game_seed",
    "range",
    "train",
    "test",
    "k",
    "epsilon",
    "delta",
    "seed",
    "permutations",
    "tests",
    "measurements",
    "recovery",
    "l2",
    "with_oracle",
    "output",
    "format",
    "threads",
    "budgets",
}


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment."""
    entries: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        entries[key] = value.strip()
    return entries


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def _bool(text: str) -> bool:
    val = text.strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def config_from_sources(method: str, file_entries: dict[str, str], args: argparse.Namespace) -> ExperimentConfig:
    """Merge config file entries with CLI flags; flags win."""

    def pick(flag_value, key: str, convert):
        if flag_value is not None:
            return flag_value
        if key in file_entries:
            try:
                return convert(file_entries[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
        return None

    if "method" in file_entries:
        file_method = file_entries["method"]
        if file_method not in METHODS:
            raise UnknownMethodError(f"unknown method {file_method!r} in config")
        if file_method != method:
            raise ConfigError(
                f"config file method {file_method!r} conflicts with subcommand {method!r}"
            )
    kwargs = dict(
        method=method,
        game_kind=pick(getattr(args, "game", None), "game", str),
        weights=pick(getattr(args, "weights", None), "weights", _floats),
        quota=pick(getattr(args, "quota", None), "quota", float),
        players=pick(getattr(args, "players", None), "players", int),
        size_values=pick(getattr(args, "size_values", None), "size_values", _floats),
        train=pick(getattr(args, "train", None), "train", str),
        test=pick(getattr(args, "test", None), "test", str),
        k=pick(getattr(args, "k", None), "k", int),
        epsilon=pick(getattr(args, "epsilon", None), "epsilon", float),
        delta=pick(getattr(args, "delta", None), "delta", float),
        permutations=pick(getattr(args, "permutations", None), "permutations", int),
        tests=pick(getattr(args, "tests", None), "tests", int),
        measurements=pick(getattr(args, "measurements", None), "measurements", int),
        output=pick(getattr(args, "output", None), "output", str),
        threads=pick(getattr(args, "threads", None), "threads", int),
        sweep_method=pick(getattr(args, "sweep_target", None), "method", str)
        if method == "sweep"
        else None,
    )
    kwargs["game_seed"] = pick(getattr(args, "game_seed", None), "game_seed", int) or 0
    kwargs["range_r"] = pick(getattr(args, "range", None), "range", float) or 1.0
    kwargs["seed"] = pick(getattr(args, "seed", None), "seed", int) or 0
    kwargs["recovery"] = pick(getattr(args, "recovery", None), "recovery", str) or "feasibility"
    l2 = pick(getattr(args, "l2", None), "l2", float)
    kwargs["l2"] = 1e-3 if l2 is None else l2
    kwargs["fmt"] = pick(getattr(args, "format", None), "format", str) or "csv"
    oracle_flag = True if getattr(args, "with_oracle", False) else None
    kwargs["with_oracle"] = bool(pick(oracle_flag, "with_oracle", _bool))
    kwargs["budgets"] = pick(getattr(args, "budgets", None), "budgets", _ints) or ()
    if method == "sweep" and kwargs["sweep_method"] == "sweep":
        raise ConfigError("sweep cannot target itself")
    return ExperimentConfig(**kwargs)


# -- argument parsing --------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key=value config file; flags override it")
    sub.add_argument("--epsilon", type=float)
    sub.add_argument("--delta", type=float)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--output", help="output path (CSV gets a .json metadata sibling)")
    sub.add_argument("--format", choices=("csv", "json"))
    sub.add_argument("--with-oracle", dest="with_oracle", action="store_true", default=False)
    sub.add_argument("--threads", type=int)


def _add_game(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--game", choices=GAME_KINDS)
    sub.add_argument("--weights", type=lambda s: _floats(s))
    sub.add_argument("--quota", type=float)
    sub.add_argument("--players", type=int)
    sub.add_argument("--size-values", dest="size_values", type=lambda s: _floats(s))
    sub.add_argument("--game-seed", dest="game_seed", type=int)
    sub.add_argument("--range", type=float)


def _add_dataset(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--train", help="training CSV: f1,...,fd,label per row")
    sub.add_argument("--test", help="test CSV, same shape")
    sub.add_argument("--k", type=int, help="neighborhood size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapval", description="Shapley value computation and estimation"
    )
    subs = parser.add_subparsers(dest="command", required=True)
    specs = {
        "exact": "exact values by subset enumeration",
        "perm": "Monte Carlo permutation sampling",
        "group-test": "pooled-test estimation of pairwise differences",
        "compressive": "compressed sensing over permutation marginals",
        "knn": "closed-form values for the KNN utility",
        "uniform": "uniform division of the total utility",
        "loo-influence": "largest-coalition influence heuristic",
        "sweep": "run one method across a list of sampling budgets",
    }
    for name, help_text in specs.items():
        sub = subs.add_parser(name, help=help_text)
        _add_common(sub)
        if name != "loo-influence":
            _add_game(sub)
        _add_dataset(sub)
        if name in ("perm", "compressive", "sweep"):
            sub.add_argument("--permutations", type=int)
        if name in ("group-test", "sweep"):
            sub.add_argument("--tests", type=int)
            sub.add_argument("--recovery", choices=("feasibility", "baseline"))
        if name in ("compressive", "sweep"):
            sub.add_argument("--measurements", type=int)
        if name == "loo-influence":
            sub.add_argument("--l2", type=float, help="ridge strength (default 1e-3)")
        if name == "sweep":
            sub.add_argument("--method", dest="sweep_target", choices=METHODS[:-1])
            sub.add_argument("--budgets", type=lambda s: _ints(s))
    return parser


def _emit(record: ResultRecord, config: ExperimentConfig, budget: int | None = None) -> None:
    if config.output:
        path = Path(config.output)
        if budget is not None:
            path = path.with_name(f"{path.stem}_b{budget}{path.suffix}")
        write_record(record, path, config.fmt)
        summary = f"{record.method}: wrote {path} ({record.eval_count} evaluations)"
        if record.has_oracle_metrics:
            summary += f", l2 error {record.l2_error:.6g}"
        print(summary, file=sys.stderr)
    else:
        sys.stdout.write("player,value\n")
        for i, v in enumerate(record.values):
            sys.stdout.write(f"{i},{v:.17g}\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_entries = parse_config_file(args.config) if args.config else {}
        config = config_from_sources(args.command, file_entries, args)
        if config.method == "sweep":
            if not config.budgets:
                print("sweep: empty budget list, nothing to do", file=sys.stderr)
                return EXIT_OK
            for budget, record in zip(
                config.budgets, sweep_budgets(config, config.budgets)
            ):
                _emit(record, config, budget=budget)
        else:
            _emit(run_experiment(config), config)
        return EXIT_OK
    except UnknownMethodError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_METHOD
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNREADABLE
    except SizeGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIZE_GUARD
    except (ShapvalError, ValueError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
