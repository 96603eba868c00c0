"""Command-line entry point: ``clozeslot <subcommand> [flags]``.

Every subcommand writes ``manifest.json`` into its output directory before
doing any work (resolved flags, seed, input paths with content hashes, start
time) and completes it with the finish time and status at the end. Flags
mirror the config dataclass fields; ``--config FILE.json`` supplies defaults
that explicit flags override.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import shutil
import sys
from pathlib import Path
from typing import Sequence

from . import __version__

log = logging.getLogger("clozeslot")

MANIFEST = "manifest.json"


class CliError(Exception):
    """A user-facing failure: bad input, missing artifact or empty output."""


# ---------------------------------------------------------------- manifest


def content_hash(path: str | Path) -> str:
    """sha256 of a file, or of every file under a directory (relative paths included)."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for f in sorted(p for p in path.rglob("*") if p.is_file() and p.name != MANIFEST):
            h.update(f.relative_to(path).as_posix().encode() + b"\0")
            h.update(f.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Manifest:
    def __init__(self, out_dir: Path, args: argparse.Namespace, inputs: dict[str, Path]):
        self.path = out_dir / MANIFEST
        config = {k: v for k, v in vars(args).items() if k not in ("func",)}
        self.data = {
            "subcommand": args.command,
            "version": __version__,
            "seed": getattr(args, "seed", None),
            "config": json.loads(json.dumps(config, default=str)),
            "inputs": {name: {"path": str(p), "sha256": content_hash(p)} for name, p in inputs.items()},
            "outputs": {},
            "started": _now(),
            "finished": None,
            "status": "running",
        }
        out_dir.mkdir(parents=True, exist_ok=True)
        self._write()

    def _write(self):
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def finish(self, outputs: dict[str, Path], status: str = "ok") -> None:
        for name, p in outputs.items():
            if not Path(p).exists() or (Path(p).is_file() and Path(p).stat().st_size == 0):
                raise CliError(f"output {name} was not written: {p}")
        self.data["outputs"] = {name: str(p) for name, p in outputs.items()}
        self.data["finished"] = _now()
        self.data["status"] = status
        self._write()


def _need(path: str | Path | None, what: str) -> Path:
    if path is None:
        raise CliError(f"missing required {what}")
    path = Path(path)
    if not path.exists():
        raise CliError(f"missing {what}: expected {path}")
    return path


def _required(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise CliError(f"--{name.replace('_', '-')} is required")


# ---------------------------------------------------------------- flag helpers


def _add_dataclass_flags(parser: argparse.ArgumentParser, cls, skip: Sequence[str] = ()) -> None:
    group = parser.add_argument_group(cls.__name__)
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        default = f.default
        if isinstance(default, bool):
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=default)
        elif default is None:
            group.add_argument(flag, dest=f.name, type=float, default=None)
        else:
            group.add_argument(flag, dest=f.name, type=type(default), default=default)


def _from_args(cls, args, **extra):
    names = {f.name for f in dataclasses.fields(cls)}
    values = {k: v for k, v in vars(args).items() if k in names}
    values.update(extra)
    return cls(**values)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON object of flag values (keys are flag names with underscores)")
    parser.add_argument("--seed", type=int, default=0, help="single source of randomness")
    parser.add_argument("--log-level", default="INFO")


def _slot_list(text: str | None) -> list[str] | None:
    return [s for s in text.split(",") if s] if text else None


# ---------------------------------------------------------------- subcommands


def cmd_synth_corpus(args) -> dict[str, Path]:
    from .synthetic import generate_corpus

    _required(args, "out")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    comments = generate_corpus(args.sentences, args.seed)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for c in comments:
            fh.write(f"{c.group_key}\t{c.text}\n")
    print(f"wrote {len(comments)} comments to {out}")
    return {"corpus": out}


def cmd_synth_slots(args) -> dict[str, Path]:
    from .labeled import write_labeled
    from .synthetic import DOMAINS, generate_slot_data

    _required(args, "out")
    if args.domain not in DOMAINS:
        raise CliError(f"unknown domain {args.domain!r}; choose from {sorted(DOMAINS)}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = write_labeled(generate_slot_data(
        args.domain, args.utterances, args.split, args.seed, holdout_frames=args.holdout_frames), out)
    print(f"wrote {n} labeled examples to {out}")
    return {"labeled": out}


def cmd_import_nested(args) -> dict[str, Path]:
    from .labeled import read_nested, write_labeled

    src = _need(args.input, "nested input file")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = write_labeled(read_nested(src, _slot_list(args.slots)), out)
    if n == 0:
        raise CliError(f"{src} produced no examples")
    print(f"wrote {n} labeled examples to {out}")
    return {"labeled": out}


def cmd_prepare_data(args) -> dict[str, Path]:
    from .pipeline import PrepareConfig, format_stats, prepare_pairs, write_prepared
    from .text_corpus import read_corpus
    from .tokenizer import train_vocab

    corpus = _need(args.corpus, "corpus file")
    out = Path(args.out)
    try:
        comments = list(read_corpus(corpus))
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot read corpus {corpus}: {exc}") from exc
    config = _from_args(PrepareConfig, args)
    data = prepare_pairs(comments, config)
    if not data.train:
        raise CliError("no training pairs were produced; is the corpus large and repetitive enough?")
    paths = write_prepared(data, out)
    vocab = train_vocab([s.text for s in data.sentences], args.vocab_size, args.oov_buckets)
    paths["vocab"] = out / "vocab.txt"
    vocab.save(paths["vocab"])
    print(format_stats(data.stats), end="")
    print(f"keyphrase threshold\t{data.threshold:.6f}")
    print(f"vocabulary size\t{vocab.size}")
    return paths


def cmd_pretrain(args) -> dict[str, Path]:
    from .model import ModelConfig, SpanExtractor
    from .pair_builder import read_jsonl
    from .plotting import plot_training_curve
    from .tokenizer import Vocabulary
    from .training import PretrainConfig, encode_pairs, heldout_eval_set, pretrain, write_metrics_csv

    data = _need(args.data, "prepared data directory")
    vocab_path = _need(data / "vocab.txt", "vocabulary")
    train_path = _need(data / "train.jsonl", "training pairs")
    vocab = Vocabulary.load(vocab_path)
    model_config = _from_args(ModelConfig, args, vocab_size=vocab.size)
    config = _from_args(PretrainConfig, args)
    train, stats = encode_pairs(read_jsonl(train_path), vocab, model_config.max_len)
    log.info("training pairs: %s", stats)
    heldout = []
    if (data / "test.jsonl").exists():
        test, _ = encode_pairs(read_jsonl(data / "test.jsonl"), vocab, model_config.max_len)
        heldout = heldout_eval_set(test[: args.heldout_size], args.seed)
    model = SpanExtractor(model_config, seed=args.seed)
    result = pretrain(model, train, config, heldout)
    out = Path(args.out)
    model.save(out, {"pretrain_config": dataclasses.asdict(config)})
    shutil.copyfile(vocab_path, out / "vocab.txt")
    write_metrics_csv(result.metrics, out / "metrics.csv")
    plot_training_curve(result.metrics, out / "metrics.png", "pretraining")
    last = result.metrics[-1] if result.metrics else {}
    if "eval_precision" in last:
        print(f"held-out exact-span precision {last['eval_precision']:.4f} recall {last['eval_recall']:.4f}")
    return {"encoder": out / "encoder", "decoder": out / "decoder", "vocab": out / "vocab.txt",
            "metrics": out / "metrics.csv"}


def _load_pretrained(model_dir):
    from .model import SpanExtractor
    from .tokenizer import Vocabulary

    model_dir = _need(model_dir, "pretrained model directory")
    _need(model_dir / "encoder", "encoder checkpoint")
    _need(model_dir / "decoder", "decoder checkpoint")
    vocab = Vocabulary.load(_need(model_dir / "vocab.txt", "vocabulary"))
    return SpanExtractor.load(model_dir), vocab


def _load_labeled(path, what):
    from .labeled import read_labeled

    examples = read_labeled(_need(path, what))
    if not examples:
        raise CliError(f"{path} contains no examples")
    return examples


def cmd_finetune(args) -> dict[str, Path]:
    from .evaluation import slots_of
    from .plotting import plot_training_curve
    from .training import EncoderCache, FinetuneConfig, finetune, write_metrics_csv

    pretrained, vocab = _load_pretrained(args.model)
    examples = _load_labeled(args.train, "labeled training file")
    slots = _slot_list(args.slots) or slots_of(examples)
    out = Path(args.out)
    cache = EncoderCache(pretrained)
    outputs = {}
    for slot in slots:
        slot_examples = [ex for ex in examples if ex.slot == slot]
        if not slot_examples:
            raise CliError(f"no training examples for slot {slot!r}")
        for j in range(args.decoders):
            config = _from_args(FinetuneConfig, args, seed=args.seed * 1000 + j)
            result = finetune(pretrained, slot_examples, vocab, config, cache, from_scratch=args.from_scratch)
            target = out / slot / f"decoder_{j}"
            result.model.save_decoder(target, {"slot": slot, "finetune_config": dataclasses.asdict(config)})
            write_metrics_csv(result.metrics, out / slot / f"metrics_{j}.csv")
            plot_training_curve(result.metrics, out / slot / f"metrics_{j}.png", f"fine-tuning: {slot}")
            outputs[f"{slot}/decoder_{j}"] = target
            log.info("slot %s decoder %d: %d steps, final loss %.5f", slot, j, result.steps,
                     result.metrics[-1]["loss"])
    info = {
        "model": str(Path(args.model).resolve()),
        "slots": slots,
        "decoders": args.decoders,
        "append_slot_name": args.append_slot_name,
        "use_extra_features": args.use_extra_features,
    }
    (out / "finetuned.json").write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    outputs["index"] = out / "finetuned.json"
    print(f"fine-tuned {len(slots)} slot(s) x {args.decoders} decoder(s) into {out}")
    return outputs


def _load_finetuned(directory):
    from .training import clone_decoder

    directory = _need(directory, "fine-tuned directory")
    info = json.loads(_need(directory / "finetuned.json", "fine-tuned index").read_text(encoding="utf-8"))
    pretrained, vocab = _load_pretrained(Path(info["model"]))
    decoders = {}
    for slot in info["slots"]:
        models = []
        for j in range(info["decoders"]):
            model = clone_decoder(pretrained)
            model.load_decoder(_need(directory / slot / f"decoder_{j}", f"decoder for slot {slot!r}"))
            models.append(model)
        decoders[slot] = models
    return info, pretrained, vocab, decoders


def _predict_slot(models, examples, vocab, info, cache):
    from .evaluation import ensemble_predict
    from .training import predict

    if len(models) == 1:
        return predict(models[0], examples, vocab, info["append_slot_name"], info["use_extra_features"], cache)
    return ensemble_predict(models, examples, vocab, append_slot_name=info["append_slot_name"],
                            use_extra_features=info["use_extra_features"], cache=cache)


def _write_report(report, out: Path, stem: str) -> dict[str, Path]:
    from .training import write_metrics_csv

    csv_path, txt_path = out / f"{stem}.csv", out / f"{stem}.txt"
    write_metrics_csv(report.rows(), csv_path)
    txt_path.write_text(report.table() + "\n", encoding="utf-8")
    print(report.table())
    return {f"{stem}_csv": csv_path, f"{stem}_table": txt_path}


def cmd_evaluate(args) -> dict[str, Path]:
    from .evaluation import finetune_and_score, fraction_curve, report_for
    from .plotting import plot_fraction_curve
    from .training import EncoderCache, FinetuneConfig, write_metrics_csv

    out = Path(args.out)
    test = _load_labeled(args.test, "labeled test file")
    if args.finetuned:
        info, pretrained, vocab, decoders = _load_finetuned(Path(args.finetuned))
        cache = EncoderCache(pretrained)
        predictions, gold = [], []
        for slot in sorted({ex.slot for ex in test}):
            slot_test = [ex for ex in test if ex.slot == slot]
            if slot not in decoders:
                raise CliError(f"no fine-tuned decoder for test slot {slot!r} in {args.finetuned}")
            predictions += _predict_slot(decoders[slot], slot_test, vocab, info, cache)
            gold += slot_test
        return _write_report(report_for(gold, predictions), out, "report")

    pretrained, vocab = _load_pretrained(args.model)
    train = _load_labeled(args.train, "labeled training file")
    config = _from_args(FinetuneConfig, args)
    outputs: dict[str, Path] = {}
    if args.fractions:
        fractions = [f.strip() for f in args.fractions.split(",") if f.strip()]
        rows = fraction_curve(pretrained, train, test, vocab, fractions, config, args.seed)
        write_metrics_csv(rows, out / "fractions.csv")
        plot_fraction_curve(rows, out / "fractions.png")
        for row in rows:
            print(f"fraction {row['fraction']:>8}  examples {row['examples']:>5}  macro F1 {row['macro_f1']:.4f}")
        outputs.update(fractions_csv=out / "fractions.csv", fractions_png=out / "fractions.png")
    else:
        run = finetune_and_score(pretrained, train, test, vocab, config, args.decoders,
                                 from_scratch=args.from_scratch, cache=EncoderCache(pretrained))
        outputs.update(_write_report(run.report, out, "report"))
    return outputs


def cmd_predict(args) -> dict[str, Path]:
    from .labeled import LabeledExample
    from .training import EncoderCache

    info, pretrained, vocab, decoders = _load_finetuned(Path(args.finetuned))
    if args.slot not in decoders:
        raise CliError(f"slot {args.slot!r} was not fine-tuned; available: {', '.join(sorted(decoders))}")
    lines = [line.rstrip("\n") for line in sys.stdin]
    examples = [LabeledExample(text, args.slot, None, args.requested, str(i)) for i, text in enumerate(lines)]
    preds = _predict_slot(decoders[args.slot], examples, vocab, info, EncoderCache(pretrained)) if examples else []
    for text, p in zip(lines, preds):
        if p.span is None:
            print(f"NONE\t-\t-\t{p.probability:.4f}")
        else:
            print(f"{text[p.span[0]:p.span[1]]}\t{p.span[0]}\t{p.span[1]}\t{p.probability:.4f}")
    sys.stdout.flush()
    return {}


# ---------------------------------------------------------------- parser


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    from .model import ModelConfig
    from .pipeline import PrepareConfig
    from .synthetic import DOMAINS
    from .training import FinetuneConfig, PretrainConfig

    parser = argparse.ArgumentParser(prog="clozeslot", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, func, help_text, inputs=(), out_dir=lambda a: Path(a.out)):
        p = commands.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func, _inputs=inputs, _out_dir=out_dir)
        _common(p)
        subs[name] = p
        return p

    p = add("synth-corpus", cmd_synth_corpus, "Write a synthetic forum-style corpus (group<TAB>text per line).",
            out_dir=lambda a: Path(a.out).parent)
    p.add_argument("--out", help="corpus file to write")
    p.add_argument("--sentences", type=int, default=5000)

    p = add("synth-slots", cmd_synth_slots, "Write synthetic labeled slot data (JSONL).",
            out_dir=lambda a: Path(a.out).parent)
    p.add_argument("--out", help="labeled JSONL file to write")
    p.add_argument("--domain", default="restaurants", choices=sorted(DOMAINS))
    p.add_argument("--split", default="train", choices=["train", "test", "all"])
    p.add_argument("--utterances", type=int, default=500)
    p.add_argument("--holdout-frames", action="store_true",
                   help="draw train and test utterances from disjoint sentence frames")

    p = add("import-nested", cmd_import_nested, "Convert restaurants-8k-style nested JSON to labeled JSONL.",
            inputs=("input",), out_dir=lambda a: Path(a.out).parent)
    p.add_argument("input", nargs="?")
    p.add_argument("--out")
    p.add_argument("--slots", help="comma-separated slot list (default: every slot seen)")

    p = add("prepare-data", cmd_prepare_data, "Corpus -> filtered, keyphrase-paired cloze data plus vocabulary.",
            inputs=("corpus",))
    p.add_argument("corpus", nargs="?", help="one comment per line, optionally group<TAB>text")
    p.add_argument("--out", help="output directory")
    _add_dataclass_flags(p, PrepareConfig, skip=("seed",))
    p.add_argument("--vocab-size", type=int, default=4000, help="subword pieces (including specials)")
    p.add_argument("--oov-buckets", type=int, default=100)

    p = add("pretrain", cmd_pretrain, "Pretrain encoder and decoder on cloze pairs.", inputs=("data",))
    p.add_argument("--data", help="directory written by prepare-data")
    p.add_argument("--out", help="checkpoint directory")
    p.add_argument("--heldout-size", type=int, default=1000, help="held-out positives to score")
    _add_dataclass_flags(p, ModelConfig, skip=("vocab_size", "aux_d"))
    _add_dataclass_flags(p, PretrainConfig, skip=("seed",))

    p = add("finetune", cmd_finetune, "Fine-tune decoders (one per slot) with the encoder frozen.",
            inputs=("model", "train"))
    p.add_argument("--model", help="pretrained checkpoint directory")
    p.add_argument("--train", help="labeled JSONL")
    p.add_argument("--out", help="directory for the fine-tuned decoders")
    p.add_argument("--slots", help="comma-separated slots (default: every slot in the training file)")
    p.add_argument("--decoders", type=int, default=1, help="decoders per slot (ensembled at prediction time)")
    p.add_argument("--from-scratch", action="store_true", help="random decoder init (ablation)")
    _add_dataclass_flags(p, FinetuneConfig, skip=("seed",))

    p = add("evaluate", cmd_evaluate, "Span-F1 evaluation: of fine-tuned decoders, or fine-tune-and-score per "
            "training fraction.", inputs=("test", "finetuned", "model", "train"))
    p.add_argument("--test", help="labeled JSONL test set")
    p.add_argument("--out", help="report directory")
    p.add_argument("--finetuned", help="directory written by finetune (score it on --test)")
    p.add_argument("--model", help="pretrained checkpoint (fine-tune-and-score mode)")
    p.add_argument("--train", help="labeled JSONL training set (fine-tune-and-score mode)")
    p.add_argument("--fractions", help="comma-separated training fractions, e.g. 1,1/16,1/128")
    p.add_argument("--decoders", type=int, default=1)
    p.add_argument("--from-scratch", action="store_true")
    _add_dataclass_flags(p, FinetuneConfig, skip=("seed",))

    p = add("predict", cmd_predict, "Read utterances from stdin; print value, start, end, probability (or NONE).",
            inputs=("finetuned",), out_dir=lambda a: None)
    p.add_argument("--finetuned", help="directory written by finetune")
    p.add_argument("--slot", help="slot to extract")
    p.add_argument("--requested", action="store_true", help="mark the slot as requested by the system")
    return parser, subs


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        path = _need(args.config, "config file")
        try:
            values = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            parser.error(f"config {path}: {exc}")
        if not isinstance(values, dict):
            parser.error(f"config {path} must hold a JSON object")
        known = {a.dest for a in subs[args.command]._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            parser.error(f"config {path}: unknown keys {unknown}")
        subs[args.command].set_defaults(**values)
        args = parser.parse_args(argv)  # explicit flags still win
    return args


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        for name in ("out",):
            if hasattr(args, name) and args._out_dir is not None and getattr(args, name) is None:
                raise CliError(f"--{name} is required")
        for name in args._inputs:
            value = getattr(args, name, None)
            if value is not None:
                _need(value, name)
        out_dir = args._out_dir(args)
        inputs = {name: Path(getattr(args, name)) for name in args._inputs if getattr(args, name, None) is not None}
        manifest = Manifest(out_dir, _clean(args), inputs) if out_dir is not None else None
        outputs = args.func(args)
        if manifest is not None:
            manifest.finish(outputs)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _clean(args: argparse.Namespace) -> argparse.Namespace:
    return argparse.Namespace(**{k: v for k, v in vars(args).items() if not k.startswith("_")})


if __name__ == "__main__":
    sys.exit(main())
