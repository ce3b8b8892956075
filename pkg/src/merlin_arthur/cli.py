"""Command-line entry point: ``merlin-arthur <command> [options]``.

Commands
--------
validate            check a data-space file against the axioms
metrics             precision and entropy of a Merlin table
game solve          exhaustive (or local-search) min-max Arthur
certify afc|alpha   exact AFC constant / context impact
bound eval|sweep    closed-form bound; randomized no-violation sweep
exemplar NAME       write a canonical data space (and strategies)
train               Algorithm-1 training of a neural Arthur
evaluate            bound-versus-measured report for a checkpoint
prove               Frank-Wolfe mask for one image
report              train and evaluate in one run

Options can also come from a YAML file (``--config``); flags win. The
resolved options are written next to the outputs as ``<command>.config.yaml``
and load back through ``--config`` unchanged. numpy is imported lazily so that
``--threads`` can cap the BLAS and numba pools before they start.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import yaml

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
               "NUMBA_NUM_THREADS")

EXEMPLARS = ("fish-fruit", "debate-chain", "red-blue", "subset-sum", "cheating")

# option defaults per command; YAML and flags override these
DEFAULTS = {
    "common": {"seed": 0, "out": "out", "threads": None},
    "validate": {"space": None},
    "metrics": {"space": None, "merlin": None, "delta": 0.1},
    "game": {"space": None, "merlin": None, "method": "exhaustive", "budget": 200, "cap": 14},
    "certify": {"space": None, "merlin": None, "morgana": None, "arthur": None, "cap": 16},
    "bound": {"eps_c": None, "eps_s": None, "kappa": 1.0, "alpha": 1.0, "B": 1.0,
              "seeds": 500, "max_points": 8, "max_features": 6},
    "exemplar": {"n": 8, "d": 4, "m": 2, "k": 2, "target": 5},
    "train": {"data": "bars", "mnist_dir": None, "classes": None, "k": 8, "gamma": 0.75,
              "epochs": 5, "pretrain_epochs": 1, "batch_size": 128, "arthur_lr": 1e-3,
              "hidden": [64, 64], "conv_channels": 0, "train_iterations": 50,
              "eval_iterations": 200, "n_train": 2000, "n_test": 500, "eval_ks": None},
    "prove": {"arthur": None, "image": None, "direction": "merlin", "k": 8,
              "iterations": 200},
}
DEFAULTS["evaluate"] = dict(DEFAULTS["train"], arthur=None)
DEFAULTS["report"] = dict(DEFAULTS["train"])


class CliError(Exception):
    """A user-facing error: printed without a traceback, exit status 2."""


# ---------------------------------------------------------------------------
# configuration


def _section(cmd: str) -> str:
    return cmd.split()[0]


def resolve(cmd: str, args: argparse.Namespace) -> dict:
    """Defaults, then the YAML file, then explicit flags."""
    section = _section(cmd)
    out = dict(DEFAULTS["common"], **DEFAULTS[section])
    if getattr(args, "config", None):
        doc = yaml.safe_load(Path(args.config).read_text()) or {}
        if not isinstance(doc, dict):
            raise CliError(f"{args.config}: expected a mapping of options")
        doc.pop("command", None)
        unknown = set(doc) - set(out)
        if unknown:
            raise CliError(f"{args.config}: unknown options {sorted(unknown)} for '{cmd}'")
        out.update(doc)
    for key in out:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def write_config(cmd: str, opts: dict, out_dir: Path) -> Path:
    path = out_dir / f"{_section(cmd)}.config.yaml"
    path.write_text(yaml.safe_dump({"command": cmd, **opts}, sort_keys=True))
    return path


def set_threads(n) -> None:
    if n:
        for var in THREAD_VARS:
            os.environ[var] = str(int(n))


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _require(opts: dict, *keys) -> None:
    missing = [k for k in keys if opts.get(k) is None]
    if missing:
        raise CliError("missing required option(s): " + ", ".join("--" + k.replace("_", "-")
                                                               for k in missing))


# ---------------------------------------------------------------------------
# tabular actors


def _read_table(path, key: str):
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        if key not in doc:
            raise CliError(f"{path}: expected a '{key}' list")
        doc = doc[key]
    if not isinstance(doc, list) or not all(isinstance(v, int) for v in doc):
        raise CliError(f"{path}: '{key}' must be a list of integers")
    return doc


def load_actors(space_path, merlin=None, morgana=None, arthur=None):
    """Load a space and any of the table actors, cross-validated against it.

    Selector files hold ``{"choice": [...]}`` (one feature index per point),
    classifier files ``{"verdict": [...]}`` (one verdict per feature); bare
    lists are accepted too. Returns a dict with keys ``space``, ``merlin``,
    ``morgana``, ``arthur`` (``None`` where no file was given).
    """
    from .dataspace import Classifier, FeatureSelector, InvalidSelector, load_space

    try:
        space = load_space(space_path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"{space_path}: {exc}") from None
    out = {"space": space, "merlin": None, "morgana": None, "arthur": None}
    for name, path in (("merlin", merlin), ("morgana", morgana)):
        if path is None:
            continue
        sel = FeatureSelector(_read_table(path, "choice"))
        try:
            sel.check(space)
        except InvalidSelector as exc:
            raise CliError(f"{path}: {exc}") from None
        except ValueError as exc:
            raise CliError(f"{path}: {exc}") from None
        out[name] = sel
    if arthur is not None:
        try:
            clf = Classifier(_read_table(arthur, "verdict"))
            clf.check(space)
        except ValueError as exc:
            raise CliError(f"{arthur}: {exc}") from None
        out["arthur"] = clf
    return out


def save_selector(selector, path) -> None:
    Path(path).write_text(_dump({"choice": [int(j) for j in selector.choice]}))


def save_classifier(classifier, path) -> None:
    Path(path).write_text(_dump({"verdict": [int(v) for v in classifier.verdict]}))


# ---------------------------------------------------------------------------
# commands on finite spaces


def cmd_validate(opts, out: Path) -> int:
    from .dataspace import FiniteDataSpace, validate

    _require(opts, "space")
    try:
        space = FiniteDataSpace.from_json(json.loads(Path(opts["space"]).read_text()))
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"{opts['space']}: {exc}") from None
    rep = validate(space)
    doc = {"ok": rep.ok, "axiom": rep.axiom, "message": rep.message,
           "witness": list(rep.witness), "n_points": space.n_points,
           "n_features": space.n_features}
    (out / "validate.json").write_text(_dump(doc))
    print("valid" if rep.ok else f"invalid: {rep.axiom}: {rep.message}")
    return 0 if rep.ok else 1


def cmd_metrics(opts, out: Path) -> int:
    from .dataspace import class_imbalance, max_features_per_point
    from .metrics import (average_conditional_entropy, average_precision, class_entropy,
                          mutual_information, precision_fraction)

    _require(opts, "space", "merlin")
    a = load_actors(opts["space"], merlin=opts["merlin"])
    space, merlin = a["space"], a["merlin"]
    mi = {}
    for j in range(1, space.n_features):
        if space.feature_mass(j) > 0:
            mi[str(j)] = mutual_information(space, j)
    q = average_precision(space, merlin)
    doc = {"average_precision": q.average, "per_point_precision": q.per_point.tolist(),
           "average_conditional_entropy": average_conditional_entropy(space, merlin),
           "class_entropy": class_entropy(space), "mutual_information": mi,
           "class_imbalance": class_imbalance(space), "K": max_features_per_point(space),
           "delta": opts["delta"],
           "precision_fraction": precision_fraction(space, merlin, opts["delta"])}
    (out / "metrics.json").write_text(_dump(doc))
    print(f"average_precision = {q.average!r}")
    return 0


def cmd_game_solve(opts, out: Path) -> int:
    from .bounds import completeness, soundness
    from .game import InstanceTooLarge, optimal_morgana, solve_minmax

    _require(opts, "space", "merlin")
    a = load_actors(opts["space"], merlin=opts["merlin"])
    space, merlin = a["space"], a["merlin"]
    try:
        sol = solve_minmax(space, merlin, method=opts["method"], budget=opts["budget"],
                           cap=opts["cap"], seed=opts["seed"])
    except InstanceTooLarge as exc:
        raise CliError(str(exc)) from None
    morgana = optimal_morgana(space, sol.arthur)
    doc = sol.to_json()
    doc["eps_c"] = completeness(space, sol.arthur, merlin)[0]
    doc["eps_s"] = soundness(space, sol.arthur, morgana)[0]
    doc["seed"] = opts["seed"]
    (out / "solution.json").write_text(_dump(doc))
    save_classifier(sol.arthur, out / "arthur.json")
    save_selector(morgana, out / "morgana.json")
    print(f"epsilon_M = {sol.epsilon_M!r}")
    return 0


def cmd_certify(which: str, opts, out: Path) -> int:
    from .certificates import afc_exact, context_impact_exact
    from .game import InstanceTooLarge, optimal_morgana

    _require(opts, "space")
    try:
        if which == "afc":
            space = load_actors(opts["space"])["space"]
            rep = afc_exact(space, cap=opts["cap"])
            doc = rep.to_json()
            print(f"kappa = {rep.kappa!r} (K = {rep.K})")
        else:
            _require(opts, "merlin", "arthur")
            a = load_actors(opts["space"], opts["merlin"], opts["morgana"], opts["arthur"])
            morgana = a["morgana"] or optimal_morgana(a["space"], a["arthur"])
            rep = context_impact_exact(a["space"], a["arthur"], a["merlin"], morgana,
                                       cap=opts["cap"])
            doc = rep.to_json()
            print(f"alpha = {'inf' if rep.unbounded else repr(rep.alpha)}")
    except InstanceTooLarge as exc:
        raise CliError(str(exc)) from None
    (out / f"{which}.json").write_text(_dump(doc))
    return 0


def cmd_bound(which: str, opts, out: Path) -> int:
    from .bounds import SWEEP_COLUMNS, BoundUnavailable, GuaranteeInputs, main_bound, sweep_case

    if which == "eval":
        _require(opts, "eps_c", "eps_s")
        try:
            inputs = GuaranteeInputs(opts["eps_c"], opts["eps_s"], opts["kappa"], opts["alpha"],
                                     opts["B"])
            value = main_bound(inputs)
        except (BoundUnavailable, ValueError) as exc:
            raise CliError(str(exc)) from None
        (out / "bound.json").write_text(_dump({"bound": value, **inputs.__dict__}))
        print(f"bound = {value!r}")
        return 0
    import csv

    rows = [sweep_case(opts["seed"] + i, opts["max_points"], opts["max_features"])
            for i in range(opts["seeds"])]
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("schema_version",) + SWEEP_COLUMNS)
        for r in rows:
            writer.writerow([1] + [_cell(r[c]) for c in SWEEP_COLUMNS])
    bad = sum(r["violated"] for r in rows)
    print(f"{len(rows)} cases, {bad} violations")
    return 0 if bad == 0 else 1


def _cell(v) -> str:
    if isinstance(v, bool) or type(v).__name__ == "bool_":
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    return repr(round(float(v), 12))


def cmd_exemplar(name: str, opts, out: Path) -> int:
    from . import dataspace as ds

    strategies = ()
    if name == "fish-fruit":
        space = ds.make_fish_fruit()
        strategies = ds.fish_fruit_strategy(space)
    elif name == "debate-chain":
        space = ds.make_debate_chain(opts["n"])
        strategies = (ds.FeatureSelector.lowest_index(space),)
    elif name == "red-blue":
        space = ds.make_red_blue(opts["d"], opts["m"])
    elif name == "subset-sum":
        space = ds.make_subset_sum(opts["d"], opts["k"], opts["target"], seed=opts["seed"])
    elif name == "cheating":
        space = ds.make_cheating_space()
        strategies = ds.cheating_strategy(space)
    else:
        raise CliError(f"unknown exemplar {name!r}; choose from {', '.join(EXEMPLARS)}")
    path = out / f"{name}.json"
    ds.save_space(space, path)
    if strategies:
        save_selector(strategies[0], out / f"{name}.merlin.json")
    if len(strategies) > 1:
        save_classifier(strategies[1], out / f"{name}.arthur.json")
    print(path)
    return 0


# ---------------------------------------------------------------------------
# commands on images


def _train_config(opts):
    from .harness import TrainConfig
    from .provers import ProverConfig

    classes = opts["classes"]
    if classes is None:
        classes = [0, 1] if opts["data"] == "bars" else [2, 4]
    if isinstance(classes, str):
        classes = [int(c) for c in classes.split(",")]
    return TrainConfig(classes=tuple(classes), k=opts["k"], gamma=opts["gamma"],
                       epochs=opts["epochs"], pretrain_epochs=opts["pretrain_epochs"],
                       batch_size=opts["batch_size"], arthur_lr=opts["arthur_lr"],
                       hidden=tuple(opts["hidden"]), conv_channels=opts["conv_channels"],
                       prover=ProverConfig(max_iterations=opts["train_iterations"]),
                       eval_prover=ProverConfig(max_iterations=opts["eval_iterations"]),
                       seed=opts["seed"], n_train=opts["n_train"], n_test=opts["n_test"])


def _datasets(opts, config):
    from .harness import bars_dataset, mnist_subset

    if opts["data"] == "bars":
        return (bars_dataset(config.n_train, seed=config.seed + 1),
                bars_dataset(config.n_test, seed=config.seed + 2))
    if opts["data"] == "mnist":
        directory = opts["mnist_dir"] or os.environ.get("MNIST_DIR")
        if not directory:
            raise CliError("MNIST needs --mnist-dir or the MNIST_DIR environment variable")
        try:
            return mnist_subset(directory, config.classes, config.n_train, config.n_test,
                                seed=config.seed)
        except (OSError, ValueError) as exc:
            raise CliError(str(exc)) from None
    raise CliError(f"unknown dataset {opts['data']!r} (bars or mnist)")


def _eval_ks(opts, config):
    ks = opts["eval_ks"]
    if ks is None:
        return (config.k,)
    if isinstance(ks, str):
        ks = [int(k) for k in ks.split(",")]
    return tuple(ks)


def cmd_train(opts, out: Path) -> int:
    from .harness import log_to_jsonl, train
    from .neural import save_checkpoint

    config = _train_config(opts)
    train_set, _ = _datasets(opts, config)
    net, log = train(config, train_set)
    save_checkpoint(net, out / "arthur.bin")
    (out / "train_log.jsonl").write_text(log_to_jsonl(log))
    print(out / "arthur.bin")
    return 0


def _corpus(train_set, test_set):
    import numpy as np

    from .harness import ImageDataset

    return ImageDataset(np.concatenate([train_set.images, test_set.images]),
                        np.concatenate([train_set.labels, test_set.labels]),
                        train_set.shape, train_set.class_values)


def cmd_evaluate(opts, out: Path) -> int:
    from .harness import evaluate, reports_to_csv
    from .neural import CheckpointError, load_checkpoint

    _require(opts, "arthur")
    config = _train_config(opts)
    try:
        net = load_checkpoint(opts["arthur"])
    except (OSError, CheckpointError) as exc:
        raise CliError(f"{opts['arthur']}: {exc}") from None
    train_set, test_set = _datasets(opts, config)
    corpus = _corpus(train_set, test_set)
    reports = [evaluate(net, test_set, corpus, k, config.eval_prover, config.gamma, config.seed,
                        test_offset=len(train_set)) for k in _eval_ks(opts, config)]
    (out / "report.csv").write_text(reports_to_csv(reports))
    print(out / "report.csv")
    return 0


def cmd_report(opts, out: Path) -> int:
    from .harness import log_to_jsonl, reports_to_csv, run_experiment
    from .neural import save_checkpoint

    config = _train_config(opts)
    train_set, test_set = _datasets(opts, config)
    net, log, reports = run_experiment(config, train_set, test_set, _eval_ks(opts, config))
    save_checkpoint(net, out / "arthur.bin")
    (out / "train_log.jsonl").write_text(log_to_jsonl(log))
    (out / "report.csv").write_text(reports_to_csv(reports))
    print(out / "report.csv")
    return 0


def _load_image(ref: str):
    """``PATH#i``: image ``i`` of an IDX file, or of the synthetic bars set for ``bars#i``."""
    import numpy as np

    from .idx import IdxError, read_idx_images

    path, _, index = ref.rpartition("#")
    if not path or not index.isdigit():
        raise CliError(f"image must look like PATH#INDEX, got {ref!r}")
    i = int(index)
    if path == "bars":
        from .harness import bars_dataset

        data = bars_dataset(i + 1, seed=0)
        return data.images[i], int(data.labels[i])
    try:
        images = read_idx_images(path)
    except (OSError, IdxError) as exc:
        raise CliError(f"{path}: {exc}") from None
    if i >= images.shape[0]:
        raise CliError(f"{path} holds {images.shape[0]} images")
    return np.asarray(images[i]).ravel(), None


def cmd_prove(opts, out: Path) -> int:
    from .neural import CheckpointError, load_checkpoint
    from .provers import ProverConfig, frank_wolfe_mask

    _require(opts, "arthur", "image")
    try:
        net = load_checkpoint(opts["arthur"])
    except (OSError, CheckpointError) as exc:
        raise CliError(f"{opts['arthur']}: {exc}") from None
    x, label = _load_image(opts["image"])
    if x.size != net.d_in:
        raise CliError(f"image has {x.size} pixels, Arthur expects {net.d_in}")
    if label is None:
        label = int(opts.get("label") or 0)
    config = ProverConfig(max_iterations=opts["iterations"], seed=opts["seed"])
    res = frank_wolfe_mask(net, x, [label], opts["k"], opts["direction"], config)
    mask = res.mask[0]
    verdict = int(net.predict(x * mask + (1 - mask) * config.baseline))
    doc = {"image": opts["image"], "label": label, "direction": opts["direction"],
           "k": opts["k"], "seed": opts["seed"], "support": [int(i) for i in mask.nonzero()[0]],
           "loss": float(res.loss[0]), "verdict": verdict - 1 if verdict else None}
    (out / "mask.json").write_text(_dump(doc))
    print(f"support = {doc['support']}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML file of options (flags override it)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="cap BLAS / numba worker threads")
    p.add_argument("--out", help="output directory (default: out)")


def _actors(p, *names):
    for n in names:
        p.add_argument(f"--{n}")


def _image_opts(p):
    p.add_argument("--data", choices=("bars", "mnist"))
    p.add_argument("--mnist-dir", dest="mnist_dir")
    p.add_argument("--classes", help="comma-separated class labels")
    p.add_argument("--k", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--arthur-lr", dest="arthur_lr", type=float)
    p.add_argument("--train-iterations", dest="train_iterations", type=int)
    p.add_argument("--eval-iterations", dest="eval_iterations", type=int)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--eval-ks", dest="eval_ks", help="comma-separated mask sizes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="merlin-arthur", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a data-space file")
    _common(p)
    _actors(p, "space")

    p = sub.add_parser("metrics", help="precision and entropy of a Merlin table")
    _common(p)
    _actors(p, "space", "merlin")
    p.add_argument("--delta", type=float)

    game = sub.add_parser("game", help="min-max game on a finite space")
    gsub = game.add_subparsers(dest="action", required=True)
    p = gsub.add_parser("solve", help="optimal Arthur for a fixed Merlin")
    _common(p)
    _actors(p, "space", "merlin")
    p.add_argument("--method", choices=("exhaustive", "search", "local-search"))
    p.add_argument("--budget", type=int)
    p.add_argument("--cap", type=int)

    cert = sub.add_parser("certify", help="exact AFC or context impact")
    csub = cert.add_subparsers(dest="action", required=True)
    for name in ("afc", "alpha"):
        p = csub.add_parser(name)
        _common(p)
        _actors(p, "space", "merlin", "morgana", "arthur")
        p.add_argument("--cap", type=int)

    bound = sub.add_parser("bound", help="precision bound")
    bsub = bound.add_subparsers(dest="action", required=True)
    p = bsub.add_parser("eval")
    _common(p)
    p.add_argument("--eps-c", dest="eps_c", type=float)
    p.add_argument("--eps-s", dest="eps_s", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--B", type=float)
    p = bsub.add_parser("sweep")
    _common(p)
    p.add_argument("--seeds", type=int)
    p.add_argument("--max-points", dest="max_points", type=int)
    p.add_argument("--max-features", dest="max_features", type=int)

    p = sub.add_parser("exemplar", help="write a canonical data space")
    p.add_argument("name", choices=EXEMPLARS)
    _common(p)
    for opt in ("n", "d", "m", "k", "target"):
        p.add_argument(f"--{opt}", type=int)

    for name, helptext in (("train", "train a neural Arthur"),
                           ("evaluate", "report for a trained Arthur"),
                           ("report", "train and report in one run")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        _image_opts(p)
        if name == "evaluate":
            p.add_argument("--arthur", help="checkpoint file")

    p = sub.add_parser("prove", help="Frank-Wolfe mask for one image")
    _common(p)
    p.add_argument("--arthur", help="checkpoint file")
    p.add_argument("--image", help="PATH#INDEX (IDX file) or bars#INDEX")
    p.add_argument("--label", type=int)
    p.add_argument("--direction", choices=("merlin", "morgana"))
    p.add_argument("--k", type=int)
    p.add_argument("--iterations", type=int)
    return parser


def _command_name(args) -> str:
    action = getattr(args, "action", None)
    return f"{args.command} {action}" if action else args.command


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cmd = _command_name(args)
    try:
        opts = resolve(cmd, args)
        if args.command == "prove":
            opts["label"] = args.label
        set_threads(opts["threads"])
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        echo = {k: v for k, v in opts.items() if k != "label"}
        write_config(cmd, echo, out)
        if args.command == "validate":
            return cmd_validate(opts, out)
        if args.command == "metrics":
            return cmd_metrics(opts, out)
        if args.command == "game":
            return cmd_game_solve(opts, out)
        if args.command == "certify":
            return cmd_certify(args.action, opts, out)
        if args.command == "bound":
            return cmd_bound(args.action, opts, out)
        if args.command == "exemplar":
            return cmd_exemplar(args.name, opts, out)
        if args.command == "train":
            return cmd_train(opts, out)
        if args.command == "evaluate":
            return cmd_evaluate(opts, out)
        if args.command == "report":
            return cmd_report(opts, out)
        return cmd_prove(opts, out)
    except CliError as exc:
        print(f"merlin-arthur: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
