"""Command-line entry point: ``transw train | eval lp|tc|unknown | score | inspect | toy``.

Exit codes
----------
0  success
1  internal error
2  usage error (bad flags)
3  input-missing       a named input file does not exist
4  labels-required     triple classification without labeled valid/test files
5  capability          model kind cannot perform the request
6  format-error        malformed data, word-vector or model file
7  config-invalid      bad config key or value
8  training-diverged   non-finite loss during training

Failures print one line to stderr: ``error: <class>: <message>``.
"""

import argparse
import datetime
import hashlib
import json
import logging
import os
import sys

from . import __version__
from . import config as cfgmod
from . import evaluation as ev
from . import model as kge
from . import report
from .data import (DataFormatError, RelationFoldPlan, Vocab, build_index, load_dataset,
                   load_name_map, split_relations_kfold, tokenize, tokenize_entity)
from .serialize import ModelFormatError, atomic_write, read_header
from .trainer import TrainingDiverged, epoch_rng, train
from .words import WordVectorError, load_word_vectors

logger = logging.getLogger("transw")

EXIT_CODES = {
    "internal": 1,
    "usage": 2,
    "input-missing": 3,
    "labels-required": 4,
    "capability": 5,
    "format-error": 6,
    "config-invalid": 7,
    "training-diverged": 8,
}

STREAM_EVAL = 3


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _require(path, what):
    if path is None:
        raise CliError("input-missing", f"no {what} given")
    if not os.path.exists(path):
        raise CliError("input-missing", f"{what} not found: {path}")
    return path


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _limit_threads(n):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(limits=n)


# -- dataset helpers ------------------------------------------------------------------------

def _load_data(args_or_cfg, entities=None, relations=None):
    get = args_or_cfg.get
    directory = get("data.dir")
    paths = {k: get(f"data.{k}") for k in ("train", "valid", "test")}
    if directory is not None:
        _require(directory, "data directory")
    elif not any(paths.values()):
        raise CliError("input-missing", "no dataset given (data.dir or data.train/valid/test)")
    for k, p in paths.items():
        if p is not None:
            _require(p, f"{k} split")
    names = get("data.names")
    if names is not None:
        _require(names, "name map")
    manifest = get("data.manifest")
    if manifest is not None:
        _require(manifest, "manifest")
    return load_dataset(directory, names=names, manifest=manifest, entities=entities, relations=relations, **paths)


def _attach_dataset(model, ds, words=None):
    """Give the model ids for every surface of ``ds`` that it has not seen."""
    new_e = ds.entities.surfaces[model.n_entities:]
    new_r = ds.relations.surfaces[model.n_relations:]
    if not new_e and not new_r:
        return
    if not isinstance(model, kge.TransW):
        raise CliError("capability", f"TransE cannot score {len(new_e)} entities and {len(new_r)} relations "
                                     "absent from its training data; use a TransW model")
    model.add_items("entity", new_e, [tokenize_entity(s, ds.names) for s in new_e], words)
    model.add_items("relation", new_r, [tokenize(s) for s in new_r], words)


def _data_spec(args):
    return {"data.dir": args.data, "data.train": args.train, "data.valid": args.valid,
            "data.test": args.test, "data.names": args.names, "data.manifest": None}


def _load_model(path):
    _require(path, "model file")
    return kge.load(path)


def _dataset_name(args):
    if args.name:
        return args.name
    if args.data:
        return os.path.basename(os.path.normpath(args.data))
    return "dataset"


# -- commands -------------------------------------------------------------------------------

def cmd_train(args):
    if args.config and "=" in args.config and not os.path.exists(args.config):
        args.overrides.insert(0, args.config)
        args.config = None
    cfg = cfgmod.resolve(_require(args.config, "config file") if args.config else None, args.overrides)
    tcfg = cfgmod.train_config(cfg)
    kind = cfg["model.kind"]
    words_path = cfg["words.path"]
    if kind == "transw":
        _require(words_path, "word-vector file")
    elif words_path is not None:
        _require(words_path, "word-vector file")
    ds = _load_data(cfg)
    if not len(ds.train):
        raise CliError("input-missing", "training split is empty")
    words = None
    if words_path is not None:
        needed = {w for i in range(len(ds.entities)) for w in ds.entity_tokens(i)}
        needed |= {w for i in range(len(ds.relations)) for w in ds.relation_tokens(i)}
        words = load_word_vectors(words_path, oov=cfg["words.oov"], restrict_to=needed)

    out = cfg["output.dir"]
    os.makedirs(out, exist_ok=True)
    manifest = {
        "toolkit_version": __version__,
        "config": {k: v for k, v in sorted(cfg.items())},
        "seed": tcfg.seed,
        "dataset_fingerprint": ds.fingerprint(),
        "word_table_fingerprint": words.fingerprint() if words is not None else None,
        "word_file_digest": _file_digest(words_path) if words_path else None,
        "started": _now(),
    }
    atomic_write(os.path.join(out, "manifest.json"), (json.dumps(manifest, indent=2) + "\n").encode())
    atomic_write(os.path.join(out, "config.resolved"), cfgmod.dumps(cfg).encode())

    ckpt_dir = os.path.join(out, "checkpoints") if tcfg.checkpoint_interval else None
    resume = _require(args.resume, "checkpoint") if args.resume else None
    with _limit_threads(args.threads) or _Null():
        model, stats = train(tcfg, ds, words, kind=kind, dim=cfg["model.dim"], checkpoint_dir=ckpt_dir,
                             resume=resume)
    model_path = os.path.join(out, "model.bin")
    model.save(model_path)

    lines = ["epoch\tmean_loss\tactive_fraction\tvalid_loss\tseconds\tcheckpoint"]
    for e in stats.epochs:
        lines.append(f"{e.epoch}\t{e.mean_loss:.8g}\t{e.active_fraction:.6f}\t"
                     f"{'' if e.valid_loss is None else f'{e.valid_loss:.8g}'}\t{e.seconds:.4f}\t{e.checkpoint or ''}")
    atomic_write(os.path.join(out, "stats.tsv"), ("\n".join(lines) + "\n").encode())
    if not args.no_figures:
        from .plotting import save_figure, training_curve
        save_figure(training_curve(stats), os.path.join(out, "training_loss.png"))
    finished = {"finished": _now(), "epochs_run": len(stats.epochs), "stopped_early": stats.stopped_early,
                "model_digest": _file_digest(model_path)}
    atomic_write(os.path.join(out, "finished.json"), (json.dumps(finished, indent=2) + "\n").encode())
    print(f"trained {kind} for {len(stats.epochs)} epochs, final loss {stats.epochs[-1].mean_loss:.6f}")
    print(f"model: {model_path}")
    return 0


class _Null:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _eval_setup(args):
    model = _load_model(args.model)
    if args.model_kind and args.model_kind != model.kind:
        raise CliError("capability", f"--model-kind {args.model_kind} does not match the model file ({model.kind})")
    words = None
    if args.words:
        words = load_word_vectors(_require(args.words, "word-vector file"), expected_dim=model.dim)
    ds = _load_data(_data_spec(args), model.entity_vocab(), model.relation_vocab())
    _attach_dataset(model, ds, words)
    return model, ds


def cmd_eval_lp(args):
    model, ds = _eval_setup(args)
    test = ds.test.positives()
    if not len(test):
        raise CliError("input-missing", "test split is empty")
    index = build_index(ds.splits.values(), len(ds.entities), len(ds.relations))
    with _limit_threads(args.threads) or _Null():
        rep = ev.link_prediction_eval(model, test, index)
    name = _dataset_name(args)
    fig = None
    if not args.no_figures:
        from .plotting import link_prediction_figure
        fig = link_prediction_figure(rep, name)
    table = report.link_prediction_table(rep, name)
    paths = report.write_report(args.out, "lp", report.link_prediction_records(rep, name), table, fig)
    sys.stdout.write(table)
    print(f"records: {paths['records']}")
    return 0


def cmd_eval_tc(args):
    model, ds = _eval_setup(args)
    if ds.valid.labels is None or ds.test.labels is None or not len(ds.valid) or not len(ds.test):
        raise CliError("labels-required", "triple classification needs labeled valid and test files "
                                          "(h<TAB>r<TAB>t<TAB>1|-1)")
    thresholds = ev.fit_relation_thresholds(model, ds.valid)
    rep = ev.triple_classification_eval(model, thresholds, ds.test)
    name = _dataset_name(args)
    rel_names = ds.relations.surfaces
    fig = None
    if not args.no_figures:
        from .plotting import classification_figure
        fig = classification_figure(rep, name, rel_names)
    table = report.classification_table(rep, name, rel_names)
    paths = report.write_report(args.out, "tc", report.classification_records(rep, name, rel_names), table, fig)
    if args.store_thresholds:
        per_rel = {rel_names[r]: s for r, s in thresholds.per_relation.items()}
        model.save(args.model, {"thresholds": {"per_relation": per_rel, "fallback": thresholds.fallback}})
    sys.stdout.write(table)
    print(f"records: {paths['records']}")
    return 0


def _read_fold_plan(path, relations: Vocab) -> RelationFoldPlan:
    folds = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                folds.append(sorted(relations.id_of(s) for s in line.split("\t")))
            except KeyError as exc:
                raise DataFormatError(f"{path}:{lineno}: unknown relation {exc.args[0]!r}") from None
    return RelationFoldPlan(folds)


def cmd_eval_unknown(args):
    kind = args.model_kind
    template = None
    if args.model:
        template = _load_model(args.model)
        kind = kind or template.kind
        if args.model_kind and args.model_kind != template.kind:
            raise CliError("capability", f"--model-kind {args.model_kind} does not match the model file")
    kind = kind or "transw"
    if kind != "transw":
        raise CliError("capability", "unknown-fact detection holds relations out of training entirely; TransE "
                                     "learns one vector per relation id and has nothing to score an unseen "
                                     "relation with, so only TransW (which composes relations from words) applies")
    cfg = cfgmod.resolve(_require(args.config, "config file") if args.config else None, args.overrides)
    for key, value in _data_spec(args).items():
        if value is not None:
            cfg[key] = value
    if template is not None:
        cfg["train.norm"] = template.norm
        cfg["train.project"] = template.project
        cfg["train.fine_tune_words"] = template.fine_tune
    tcfg = cfgmod.train_config(cfg)
    words_path = _require(args.words or cfg["words.path"], "word-vector file")
    ds = _load_data(cfg)
    needed = {w for i in range(len(ds.entities)) for w in ds.entity_tokens(i)}
    needed |= {w for i in range(len(ds.relations)) for w in ds.relation_tokens(i)}
    words = load_word_vectors(words_path, oov=cfg["words.oov"], restrict_to=needed)
    if args.fold_plan:
        plan = _read_fold_plan(_require(args.fold_plan, "fold plan"), ds.relations)
    else:
        plan = split_relations_kfold(range(len(ds.relations)), args.folds, args.seed)

    def train_fold(triples, fold):
        logger.info("fold %d: training on %d facts", fold + 1, len(triples))
        return train(tcfg, ds, words, kind="transw", triples=triples)[0]

    with _limit_threads(args.threads) or _Null():
        rep = ev.unknown_fact_eval(plan, ds, train_fold, epoch_rng(args.seed, STREAM_EVAL),
                                   cap=args.cap, repeats=args.repeats)
    name = _dataset_name(args)
    fig = None
    if not args.no_figures:
        from .plotting import unknown_fact_figure
        fig = unknown_fact_figure(rep, name)
    table = report.unknown_fact_table(rep, name)
    paths = report.write_report(args.out, "unknown", report.unknown_fact_records(rep, name), table, fig)
    sys.stdout.write(table)
    print(f"records: {paths['records']}")
    return 0


def cmd_score(args):
    model = _load_model(args.model)
    names = load_name_map(_require(args.names, "name map")) if args.names else None
    words = load_word_vectors(_require(args.words, "word-vector file"), expected_dim=model.dim) if args.words else None
    if isinstance(model, kge.TransW):
        d = model.score_surfaces(args.head, args.relation, args.tail, names, words)
    else:
        try:
            d = model.score_surfaces(args.head, args.relation, args.tail)
        except kge.CapabilityError as exc:
            raise CliError("capability", str(exc)) from None
    print(f"distance\t{d!r}")
    sigma = args.sigma
    th = model.metadata.get("thresholds")
    if sigma is None and th:
        sigma = th["per_relation"].get(args.relation, th["fallback"])
    if sigma is not None:
        print(f"threshold\t{sigma!r}")
        print(f"verdict\t{'valid' if d <= sigma else 'invalid'}")
    return 0


def cmd_inspect(args):
    header = read_header(_require(args.model, "model file"))
    header.pop("sections", None)
    print(json.dumps(header, indent=2, sort_keys=True))
    return 0


def cmd_toy(args):
    from .synthetic import make_micro_kg, write_micro_kg
    kg = make_micro_kg(seed=args.seed)
    write_micro_kg(kg, args.out)
    conf = os.path.join(args.out, "run.cfg")
    with open(conf, "w", encoding="utf-8") as fh:
        fh.write(f"data.dir = {args.out}\nwords.path = {os.path.join(args.out, 'words.txt')}\n"
                 "model.kind = transw\ntrain.epochs = 300\ntrain.batch_size = 20\ntrain.patience = 0\n"
                 f"train.seed = {args.seed}\noutput.dir = {os.path.join(args.out, 'run')}\n")
    print(f"wrote micro knowledge graph and {conf}")
    return 0


# -- parser -------------------------------------------------------------------------------

def _add_data_args(p):
    p.add_argument("--data", help="dataset directory (train.txt, valid.txt|dev.txt, test.txt)")
    p.add_argument("--train", help="training split file")
    p.add_argument("--valid", help="validation split file")
    p.add_argument("--test", help="test split file")
    p.add_argument("--names", help="entity name map file")
    p.add_argument("--name", help="dataset name used in reports")


def _add_common(p):
    p.add_argument("--threads", type=int, default=1, help="numeric library threads (default 1, deterministic)")
    p.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")


def build_parser():
    parser = argparse.ArgumentParser(prog="transw", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"transw {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a TransW or TransE model from a config file")
    p.add_argument("config", nargs="?", help="flat key = value config file")
    p.add_argument("overrides", nargs="*", metavar="KEY=VALUE", help="config overrides, e.g. train.lr=0.01")
    p.add_argument("--resume", help="checkpoint to continue from")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run an evaluation protocol")
    esub = p.add_subparsers(dest="protocol", required=True)
    for proto, func, helptext in (("lp", cmd_eval_lp, "link prediction, HITS@{10,3,1} raw and filtered"),
                                  ("tc", cmd_eval_tc, "triple classification with per-relation thresholds"),
                                  ("unknown", cmd_eval_unknown, "unseen-relation detection over relation folds")):
        q = esub.add_parser(proto, help=helptext)
        q.add_argument("--model", required=proto != "unknown", help="model file")
        q.add_argument("--model-kind", choices=sorted(kge.MODEL_KINDS), help="expected model kind")
        q.add_argument("--words", help="word-vector file (composes unseen words; required for unknown)")
        q.add_argument("--out", default="reports", help="report directory")
        _add_data_args(q)
        _add_common(q)
        if proto == "tc":
            q.add_argument("--store-thresholds", action="store_true",
                           help="write the fitted thresholds into the model file")
        if proto == "unknown":
            q.add_argument("--config", help="training config file")
            q.add_argument("overrides", nargs="*", metavar="KEY=VALUE")
            q.add_argument("--folds", type=int, default=10)
            q.add_argument("--seed", type=int, default=0)
            q.add_argument("--fold-plan", help="file with one fold per line, relation surfaces tab-separated")
            q.add_argument("--cap", type=int, default=5000, help="test facts drawn per held-out relation")
            q.add_argument("--repeats", type=int, default=10, help="test subsamples per fold")
        q.set_defaults(func=func)

    p = sub.add_parser("score", help="distance of one triple given by surface forms")
    p.add_argument("--model", required=True)
    p.add_argument("head")
    p.add_argument("relation")
    p.add_argument("tail")
    p.add_argument("--names", help="entity name map")
    p.add_argument("--words", help="word-vector file for words the model has not stored")
    p.add_argument("--sigma", type=float, help="threshold for the verdict (default: stored thresholds)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("inspect", help="print a model file header")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("toy", help="write the synthetic micro knowledge graph and a run config")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        kind, msg = exc.kind, str(exc)
    except FileNotFoundError as exc:
        kind, msg = "input-missing", str(exc)
    except (DataFormatError, WordVectorError, ModelFormatError) as exc:
        kind, msg = "format-error", str(exc)
    except cfgmod.ConfigError as exc:
        kind, msg = "config-invalid", str(exc)
    except kge.CapabilityError as exc:
        kind, msg = "capability", str(exc)
    except TrainingDiverged as exc:
        kind, msg = "training-diverged", str(exc)
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        kind, msg = "internal", f"{type(exc).__name__}: {exc}"
    sys.stderr.write(f"error: {kind}: {' '.join(msg.split())}\n")
    return EXIT_CODES[kind]


if __name__ == "__main__":
    sys.exit(main())
