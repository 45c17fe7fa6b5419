"""Command-line entry point: ``im2markup <command> ...``.

Exit codes: 0 success, 1 configuration or input error, 2 unwritable output
path, 3 training aborted on a non-finite value.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from collections import Counter

import numpy as np

from . import attention, heatmap
from .checkpoint import load_checkpoint, save_checkpoint
from .config import SynthConfig, TrainConfig, load_config
from .dataset import (Record, Vocab, build_vocab, filter_dataset, load_image, read_manifest,
                      save_image, split_validation, write_manifest)
from .decoding import beam_search, bestpath_decode, strip_eos
from .errors import ConfigError, ContractError
from .metrics import corpus_score
from .model import Im2MarkupModel
from .synth import synth_generate, synth_vocab_tokens
from .training import SampleSet, TrainingAborted, train

log = logging.getLogger("im2markup")

EXIT_CONFIG, EXIT_UNWRITABLE, EXIT_NUMERIC = 1, 2, 3


class UnwritablePath(OSError):
    pass


def _writable_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
        probe = os.path.join(path, ".write-probe")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        raise UnwritablePath(f"cannot write to {path}: {exc.strerror or exc}") from None
    return path


def _writable_file(path):
    _writable_dir(os.path.dirname(os.path.abspath(path)))
    return path


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        with open(_writable_file(out), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def _configs(args):
    if args.config:
        return load_config(args.config)
    return None, TrainConfig(), SynthConfig()


# dataset ---------------------------------------------------------------------

def cmd_dataset_gen(args):
    _, _, synth = _configs(args)
    out = _writable_dir(args.out or "dataset")
    img_dir = _writable_dir(os.path.join(out, "images"))
    samples = synth_generate(args.n, synth, seed=args.seed, unique=args.unique)
    records = []
    for i, s in enumerate(samples):
        path = os.path.join(img_dir, f"{i:06d}.png")
        save_image(path, s.image)
        records.append(Record(path, s.tokens, "train", s.image.shape[1], s.image.shape[0]))
    vocab = Vocab(synth_vocab_tokens(synth))
    kept, report = filter_dataset(records, vocab)
    write_manifest(os.path.join(out, "manifest.jsonl"), kept)
    vocab.save(os.path.join(out, "vocab.txt"))
    _emit({"written": len(kept), "filter": report, "vocab_size": vocab.size})


def cmd_dataset_filter(args):
    records = read_manifest(args.manifest)
    vocab = Vocab.load(args.vocab) if args.vocab else build_vocab(records, args.freq_threshold)
    kept, report = filter_dataset(records, vocab, args.max_width, args.max_height, args.max_tokens)
    out = _writable_dir(args.out or os.path.dirname(os.path.abspath(args.manifest)))
    write_manifest(os.path.join(out, "filtered.jsonl"), kept)
    vocab.save(os.path.join(out, "vocab.txt"))
    _emit({"filter": report, "vocab_size": vocab.size})


def cmd_dataset_stats(args):
    records = read_manifest(args.manifest)
    lengths = [len(r.tokens.split()) for r in records]
    vocab = build_vocab(records) if records else None
    hist = Counter(lengths)
    _emit({
        "samples": len(records),
        "vocab_size": vocab.size if vocab else 0,
        "tokens": sum(lengths),
        "length_histogram": {str(k): hist[k] for k in sorted(hist)},
        "max_length": max(lengths, default=0),
    }, args.out_file)


# train / infer / evaluate ----------------------------------------------------

def _load_set(records, vocab, cfg):
    images = [load_image(r.image) for r in records]
    return SampleSet.from_images(images, [r.tokens for r in records], vocab, cfg.canvas, cfg.dtype)


def cmd_train(args):
    out = _writable_dir(args.out or "run")
    if args.fixture == "overfit":
        from .fixtures import overfit_fixture

        fx = overfit_fixture(args.seed)
        model_cfg, tcfg, vocab, train_set, valid_set = (
            fx.model_config, fx.train_config, fx.vocab, fx.data, None)
    else:
        if not args.manifest:
            raise ConfigError("train needs --manifest (or --fixture overfit)")
        model_cfg, tcfg, _ = _configs(args)
        if model_cfg is None:
            raise ConfigError("train needs --config with a model section")
        tcfg = dataclasses.replace(tcfg, seed=args.seed)
        records = read_manifest(args.manifest)
        vocab = Vocab.load(args.vocab) if args.vocab else build_vocab(records)
        model_cfg = dataclasses.replace(model_cfg, vocab_size=vocab.size).validate()
        records, report = filter_dataset(records, vocab, model_cfg.canvas[1], model_cfg.canvas[0],
                                         tcfg.max_len - 1)
        log.info("filter: %s", report)
        valid = [r for r in records if r.split == "valid"]
        train_recs = [r for r in records if r.split == "train"]
        if not valid:
            train_recs, valid = split_validation(train_recs, tcfg.valid_fraction,
                                                 np.random.default_rng(tcfg.seed))
        train_set, valid_set = _load_set(train_recs, vocab, model_cfg), _load_set(valid, vocab, model_cfg)
    if args.max_steps is not None:
        tcfg = dataclasses.replace(tcfg, max_steps=args.max_steps)
    vocab.save(os.path.join(out, "vocab.txt"))
    model = Im2MarkupModel.initialize(model_cfg, args.seed)
    log_path = os.path.join(out, "train_log.jsonl")
    if os.path.exists(log_path):
        os.remove(log_path)
    result = train(model, tcfg, train_set, valid_set, out_dir=out, log_path=log_path, vocab=vocab)
    if result.best_params is not None:
        model.restore(result.best_params)
    save_checkpoint(os.path.join(out, "final.ckpt"), model, vocab, meta={"step": result.steps})
    _emit({"steps": result.steps, "epochs": result.epochs, "best_step": result.best_step,
           "best_valid_bleu": result.best_valid_bleu,
           "checkpoint": os.path.join(out, "best.ckpt")})


def _input_images(args):
    if args.manifest:
        return [(r.image, load_image(r.image)) for r in read_manifest(args.manifest)]
    if not args.images:
        raise ConfigError("infer needs --images or --manifest")
    return [(p, load_image(p)) for p in args.images]


def cmd_infer(args):
    if not args.checkpoint:
        raise ConfigError("infer needs --checkpoint")
    model, vocab, _ = load_checkpoint(args.checkpoint)
    if vocab is None:
        raise ConfigError(f"{args.checkpoint}: checkpoint carries no vocabulary")
    cfg = model.cfg
    if args.emit_attention:
        _writable_dir(args.emit_attention)
    from .encoder import standardize_whiten

    lines, results = [], []
    for i, (path, image) in enumerate(_input_images(args)):
        canvas = standardize_whiten(image, cfg.canvas, cfg.dtype)
        if args.beam_width == 1:
            hyp = bestpath_decode(model, canvas, args.max_len)[0]
        else:
            hyp = beam_search(model, canvas, args.beam_width, args.max_len)
        text = vocab.to_text(strip_eos(hyp.ids))
        lines.append(text)
        entry = {"image": path, "prediction": text, "logprob": hyp.logprob}
        if args.emit_attention:
            trace = os.path.join(args.emit_attention, f"trace_{i:06d}.jsonl")
            attention.write_trace(trace, vocab.decode(hyp.ids), hyp.alphas)
            entry["trace"] = trace
        results.append(entry)
    if args.out:
        with open(_writable_file(args.out), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))
    for r in results:
        print(json.dumps(r))


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _image_dir(path):
    names = sorted(n for n in os.listdir(path) if n.lower().endswith((".png", ".pgm")))
    return [load_image(os.path.join(path, n)) for n in names]


def cmd_evaluate(args):
    hyps, refs = _read_lines(args.hyp_file), _read_lines(args.ref_file)
    if len(hyps) != len(refs):
        raise ContractError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    imgs_a = imgs_b = None
    if args.image_dir_a and args.image_dir_b:
        imgs_a, imgs_b = _image_dir(args.image_dir_a), _image_dir(args.image_dir_b)
        if len(imgs_a) != len(imgs_b):
            raise ContractError(f"image dirs hold {len(imgs_a)} and {len(imgs_b)} images")
    _emit(corpus_score(hyps, refs, imgs_a, imgs_b).to_dict(), args.out)


def cmd_heatmap(args):
    if args.checkpoint:
        cfg = load_checkpoint(args.checkpoint)[0].cfg
    elif args.config:
        cfg = load_config(args.config)[0]
    else:
        raise ConfigError("heatmap needs --checkpoint or --config for the grid geometry")
    tokens, alphas = attention.read_trace(args.trace)
    paths = heatmap.emit_heatmaps(load_image(args.image), tokens, alphas, cfg,
                                  _writable_dir(args.out or "heatmaps"))
    _emit({"written": paths})


# parser ----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output directory or file")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="im2markup", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="synthetic corpus generation and manifests")
    dsub = ds.add_subparsers(dest="action", required=True)
    g = dsub.add_parser("gen", parents=[common], help="render a synthetic corpus")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--unique", action="store_true")
    g.set_defaults(func=cmd_dataset_gen)
    f = dsub.add_parser("filter", parents=[common], help="apply the corpus filters")
    f.add_argument("--manifest", required=True)
    f.add_argument("--vocab")
    f.add_argument("--freq-threshold", type=int, default=1)
    f.add_argument("--max-width", type=int, default=1086)
    f.add_argument("--max-height", type=int, default=126)
    f.add_argument("--max-tokens", type=int, default=150)
    f.set_defaults(func=cmd_dataset_filter)
    s = dsub.add_parser("stats", parents=[common], help="vocabulary size and length histogram")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-file")
    s.set_defaults(func=cmd_dataset_stats)

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--manifest")
    t.add_argument("--vocab")
    t.add_argument("--fixture", choices=["overfit"])
    t.add_argument("--max-steps", type=int)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", parents=[common], help="decode images with a checkpoint")
    i.add_argument("--checkpoint")
    i.add_argument("--images", "--image", nargs="*", help="image files to decode")
    i.add_argument("--manifest")
    i.add_argument("--beam-width", type=int, default=10)
    i.add_argument("--max-len", type=int, default=160)
    i.add_argument("--emit-attention", metavar="DIR", help="write one attention trace per image")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("evaluate", parents=[common], help="BLEU / edit distance / visual match")
    e.add_argument("--hyp-file", required=True)
    e.add_argument("--ref-file", required=True)
    e.add_argument("--image-dir-a")
    e.add_argument("--image-dir-b")
    e.set_defaults(func=cmd_evaluate)

    h = sub.add_parser("heatmap", parents=[common], help="attention overlays for one trace")
    h.add_argument("--trace", required=True)
    h.add_argument("--image", required=True)
    h.add_argument("--checkpoint")
    h.set_defaults(func=cmd_heatmap)
    return p


def _thread_limit():
    raw = os.environ.get("IM2MARKUP_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"IM2MARKUP_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("IM2MARKUP_THREADS must be >= 1")
    return n


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limit = _thread_limit()
        if limit:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=limit):
                args.func(args)
        else:
            args.func(args)
    except UnwritablePath as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNWRITABLE
    except TrainingAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ContractError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PermissionError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNWRITABLE
    return 0


if __name__ == "__main__":
    sys.exit(main())
