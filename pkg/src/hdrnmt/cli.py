"""Command-line pipeline: data generation, pre-training, training, translation,
evaluation, and representation inspection.

Every command prints one JSON metrics object to stdout on success; progress
goes to stderr. Exit codes: 1 configuration error, 2 data error, 3 runtime or
numerical error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import checkpoint as ckpt
from . import data as D
from . import report as R
from .errors import ConfigError, DataError, HdrnmtError
from .evaluation import bleu, export_token_vectors, homograph_prf, similarity_heatmap
from .model import ModelConfig
from .pretrain import SrHead, build_encoder, sr_train, wdr_train
from .training import TrainSettings, train_nmt, translate

COMMANDS = ("gen-data", "pretrain-sr", "pretrain-wdr", "train", "translate",
            "evaluate", "inspect")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _need(args, *names) -> None:
    for name in names:
        if getattr(args, name.replace("-", "_"), None) in (None, ""):
            raise ConfigError(f"missing required flag --{name}")


def _check_paths(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise DataError(f"file not found: {p}")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--enc-layers", type=int, default=2)
    p.add_argument("--dec-layers", type=int, default=2)
    p.add_argument("--d-ff", type=int, default=256)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.1)


def build_parser():
    parser = argparse.ArgumentParser(prog="hdrnmt", description=__doc__)
    sub = parser.add_subparsers(dest="command")
    parsers = {}

    p = sub.add_parser("gen-data", help="emit a synthetic homograph corpus")
    p.add_argument("--pairs", type=int)
    p.add_argument("--homographs", type=int, default=4)
    p.add_argument("--fillers", type=int, default=120)
    p.add_argument("--nli", type=int, default=300)
    parsers["gen-data"] = p

    p = sub.add_parser("pretrain-sr", help="sentence-level encoder pre-training")
    p.add_argument("--nli")
    p.add_argument("--src", help="corpus source side used to build the shared vocabulary")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--concat-feature", action="store_true",
                   help="append both sentence vectors to the |difference| feature")
    _add_model_flags(p)
    parsers["pretrain-sr"] = p

    p = sub.add_parser("pretrain-wdr", help="word-level encoder fine-tuning")
    p.add_argument("--wordnet")
    p.add_argument("--annotations")
    p.add_argument("--init", help="sentence-stage checkpoint to start from")
    p.add_argument("--src", help="corpus source side (from-scratch runs only)")
    p.add_argument("--out")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    _add_model_flags(p)
    parsers["pretrain-wdr"] = p

    p = sub.add_parser("train", help="train a translation model")
    p.add_argument("--src")
    p.add_argument("--tgt")
    p.add_argument("--tsv")
    p.add_argument("--scheme", default="baseline",
                   choices=["baseline", "add", "gate", "cascade", "selection"])
    p.add_argument("--gate", default="fixed:0.5", help="fixed:<g> or sigmoid")
    p.add_argument("--second-encoder", default="hdr_pretrained",
                   choices=["hdr_pretrained", "random", "nmt_copy"])
    p.add_argument("--hdr", help="pretrained encoder checkpoint")
    p.add_argument("--init-from", help="model checkpoint to warm start from")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--max-tokens", type=int, default=1024)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup", type=int, default=400)
    p.add_argument("--label-smoothing", type=float, default=0.1)
    p.add_argument("--eval-every", type=int, default=0,
                   help="evaluation interval in steps (0 = once per epoch)")
    p.add_argument("--patience", type=int, default=3,
                   help="early-stopping patience in evaluations (0 disables)")
    p.add_argument("--heldout", type=float, default=0.1)
    p.add_argument("--bleu-cap", type=int, default=200)
    _add_model_flags(p)
    parsers["train"] = p

    p = sub.add_parser("translate", help="decode sentences with a trained model")
    p.add_argument("--model")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--strategy", default="greedy", help="greedy or beam:<width>")
    parsers["translate"] = p

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    p.add_argument("--hyp")
    p.add_argument("--ref")
    p.add_argument("--src")
    p.add_argument("--annotations")
    p.add_argument("--eval-list")
    parsers["evaluate"] = p

    p = sub.add_parser("inspect", help="emit homograph-state similarity data")
    p.add_argument("--model", help="encoder or model checkpoint")
    p.add_argument("--which", default="second", choices=["nmt", "second"],
                   help="which encoder of a model checkpoint to inspect")
    p.add_argument("--sentences")
    p.add_argument("--lemma")
    p.add_argument("--annotations")
    parsers["inspect"] = p

    for name, sp in parsers.items():
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out-dir")
        sp.add_argument("--config", help="key=value file supplying any flag")
    return parser, parsers


def _apply_config_file(parsers, command: str, path: str) -> None:
    """Load key=value defaults; command-line flags still override."""
    sp = parsers[command]
    actions = {a.dest: a for a in sp._actions if a.dest != "help"}
    defaults = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in actions or dest == "config":
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        action = actions[dest]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = value.lower() in ("1", "true", "yes")
        elif action.type is not None:
            try:
                defaults[dest] = action.type(value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{n}: bad value for {key!r}: {exc}") from exc
        else:
            defaults[dest] = value
        if action.choices and defaults[dest] not in action.choices:
            raise ConfigError(f"{path}:{n}: {key!r} must be one of {action.choices}")
    sp.set_defaults(**defaults)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> dict:
    _need(args, "pairs", "out-dir")
    out = _out_dir(args)
    corpus = D.generate_synthetic_homograph_corpus(
        args.pairs, args.homographs, args.seed, n_fillers=args.fillers
    )
    files = {
        "src": out / "train.src",
        "tgt": out / "train.tgt",
        "wordnet": out / "wordnet.jsonl",
        "annotations": out / "annotations.jsonl",
        "eval_list": out / "eval_list.jsonl",
    }
    D.write_lines(corpus.src_sentences, files["src"])
    D.write_lines(corpus.tgt_sentences, files["tgt"])
    D.save_wordnet(corpus.wordnet, files["wordnet"])
    D.save_annotations(corpus.annotations, files["annotations"])
    D.save_eval_list(corpus.eval_list, files["eval_list"])
    counts = {
        "pairs": len(corpus.src_sentences),
        "homographs": len(corpus.homographs),
        "synsets": len(corpus.wordnet),
    }
    if args.nli > 0:
        files["nli"] = out / "nli.tsv"
        D.write_nli(D.generate_synthetic_nli(args.nli, args.seed + 1), files["nli"])
        counts["nli_examples"] = args.nli
    return {"command": "gen-data", **counts,
            "files": {k: str(v) for k, v in files.items()}}


def _vocab_from_sources(args) -> D.Vocab:
    if args.src:
        _check_paths(args.src)
        return D.build_vocab(Path(args.src).read_text().splitlines())
    raise ConfigError("need --src to build the shared source vocabulary")


def cmd_pretrain_sr(args) -> dict:
    _need(args, "nli", "out")
    _check_paths(args.nli, args.src)
    examples = D.load_nli(args.nli)
    if not examples:
        raise DataError(f"{args.nli}: no examples")
    if args.src:
        vocab = _vocab_from_sources(args)
    else:
        sentences = [" ".join(ex.premise) for ex in examples]
        sentences += [" ".join(ex.hypothesis) for ex in examples]
        vocab = D.build_vocab(sentences)
    encoder = build_encoder(len(vocab), args.d_model, args.heads, args.enc_layers,
                            args.d_ff, args.max_len, args.dropout, args.seed)
    feature_dim = 3 * args.d_model if args.concat_feature else args.d_model
    head = SrHead(feature_dim, np.random.default_rng(args.seed))
    _log(f"sentence stage: {len(examples)} examples, vocab {len(vocab)}")
    result = sr_train(examples, encoder, head, vocab, epochs=args.epochs,
                      seed=args.seed, lr=args.lr, batch_size=args.batch_size,
                      patience=args.patience or None,
                      concat_feature=args.concat_feature)
    ckpt.save_encoder_checkpoint(encoder, vocab.to_list(), args.out,
                                 seed=args.seed, head=head, stage="sr")
    last = result.history[-1]
    return {"command": "pretrain-sr", "epochs_run": len(result.history),
            "heldout_accuracy": last["heldout_accuracy"],
            "heldout_loss": last["heldout_loss"], "checkpoint": str(args.out)}


def cmd_pretrain_wdr(args) -> dict:
    _need(args, "wordnet", "annotations", "out")
    _check_paths(args.wordnet, args.annotations, args.init, args.src)
    wn = D.load_wordnet(args.wordnet)
    annotations = D.load_annotations(args.annotations)
    pairs, skipped = D.prepare_disambiguation_set(annotations, wn)
    if not pairs:
        raise DataError("disambiguation set is empty")
    if args.init:
        encoder, vocab_list, _ = ckpt.build_encoder_from_checkpoint(
            args.init, dropout=args.dropout
        )
        vocab = D.Vocab.from_list(vocab_list)
    else:
        vocab = _vocab_from_sources(args)
        encoder = build_encoder(len(vocab), args.d_model, args.heads,
                                args.enc_layers, args.d_ff, args.max_len,
                                args.dropout, args.seed)
        _log("word stage from scratch (no sentence-stage checkpoint)")
    _log(f"word stage: {len(pairs)} pairs ({skipped} skipped)")
    result = wdr_train(pairs, encoder, vocab, steps=args.steps, seed=args.seed,
                       lr=args.lr, batch_size=args.batch_size)
    ckpt.save_encoder_checkpoint(encoder, vocab.to_list(), args.out,
                                 seed=args.seed, stage="wdr")
    curve = result.loss_curve
    return {"command": "pretrain-wdr", "pairs": len(pairs), "skipped": skipped,
            "steps_run": len(curve),
            "first_loss": curve[0] if curve else None,
            "final_loss": curve[-1] if curve else None,
            "diagnostics": result.diagnostics, "checkpoint": str(args.out)}


def _load_corpus(args):
    if args.tsv:
        _check_paths(args.tsv)
        return D.load_parallel(tsv_path=args.tsv)
    _need(args, "src", "tgt")
    _check_paths(args.src, args.tgt)
    return D.load_parallel(args.src, args.tgt)


def cmd_train(args) -> dict:
    _need(args, "out-dir")
    pairs = _load_corpus(args)
    out = _out_dir(args)
    config = ModelConfig(
        d_model=args.d_model, n_heads=args.heads, n_enc_layers=args.enc_layers,
        n_dec_layers=args.dec_layers, d_ff=args.d_ff, max_len=args.max_len,
        dropout=args.dropout, fusion_scheme=args.scheme, gate_mode=args.gate,
        second_encoder_source=args.second_encoder,
    )
    settings = TrainSettings(
        steps=args.steps, max_tokens=args.max_tokens, lr=args.lr,
        warmup=args.warmup, label_smoothing=args.label_smoothing,
        eval_every=args.eval_every or None, patience=args.patience or None,
        heldout_fraction=args.heldout, bleu_cap=args.bleu_cap, seed=args.seed,
    )
    hdr_state = hdr_vocab = None
    if args.hdr:
        _check_paths(args.hdr)
        _, hdr_state, hdr_vocab, _ = ckpt.load_encoder_checkpoint(args.hdr)
    init_state = None
    if args.init_from:
        _check_paths(args.init_from)
        init_state = ckpt.load_state(args.init_from)
    _log(f"training {args.scheme} on {len(pairs)} pairs for {args.steps} steps")
    result = train_nmt(pairs, config, settings, hdr_state=hdr_state,
                       hdr_vocab=hdr_vocab, init_state=init_state)
    model_path = out / "model.ckpt"
    metrics_path = out / "metrics.jsonl"
    curves_path = out / "curves.png"
    ckpt.save_model_checkpoint(result.model, result.src_vocab.to_list(),
                               result.tgt_vocab.to_list(), model_path,
                               seed=args.seed)
    R.write_metrics_jsonl(result.records, metrics_path)
    R.render_training_curves(result.records, curves_path)
    last = result.records[-1]
    return {
        "command": "train", "scheme": args.scheme,
        "steps_run": last["step"],
        "heldout_loss": last["heldout_loss"],
        "heldout_bleu": last["heldout_bleu"],
        "parameters": result.model.parameter_count(),
        "init": result.init_report,
        "files": {"model": str(model_path), "metrics": str(metrics_path),
                  "curves": str(curves_path)},
    }


def cmd_translate(args) -> dict:
    _need(args, "model", "input", "output")
    _check_paths(args.model, args.input)
    model, src_list, tgt_list, _ = ckpt.load_model_checkpoint(args.model)
    sentences = [l for l in Path(args.input).read_text().splitlines() if l.strip()]
    if args.strategy == "greedy":
        strategy, width = "greedy", 1
    elif args.strategy.startswith("beam:"):
        strategy, width = "beam", int(args.strategy.split(":", 1)[1])
    else:
        raise ConfigError(f"unknown strategy {args.strategy!r}")
    outputs = translate(model, D.Vocab.from_list(src_list),
                        D.Vocab.from_list(tgt_list), sentences,
                        strategy=strategy, beam_width=width)
    D.write_lines(outputs, args.output)
    return {"command": "translate", "sentences": len(outputs),
            "strategy": args.strategy, "output": str(args.output)}


def cmd_evaluate(args) -> dict:
    _need(args, "hyp", "ref")
    _check_paths(args.hyp, args.ref, args.src, args.annotations, args.eval_list)
    hyps = Path(args.hyp).read_text().splitlines()
    refs = Path(args.ref).read_text().splitlines()
    report = bleu(hyps, refs)
    result = {
        "command": "evaluate",
        "bleu": {
            "score": report.score, "precisions": report.precisions,
            "brevity_penalty": report.brevity_penalty,
            "sys_len": report.sys_len, "ref_len": report.ref_len,
        },
    }
    prf = None
    if args.annotations and args.eval_list:
        sources = Path(args.src).read_text().splitlines() if args.src else [""] * len(hyps)
        annotations = D.load_annotations(args.annotations)
        eval_list = D.load_eval_list(args.eval_list)
        prf = homograph_prf(hyps, sources, annotations, eval_list)
        result["homograph"] = prf.to_dict()
    if args.out_dir:
        out = _out_dir(args)
        (out / "metrics.json").write_text(json.dumps(result, sort_keys=True, indent=2))
        result.setdefault("files", {})["metrics"] = str(out / "metrics.json")
        if prf is not None and prf.per_homograph:
            R.render_sense_accuracy(prf, out / "sense_accuracy.png")
            result["files"]["sense_accuracy"] = str(out / "sense_accuracy.png")
    return result


def _encoder_for_inspection(args):
    kind = ckpt.checkpoint_kind(args.model)
    if kind == "encoder":
        encoder, vocab_list, _ = ckpt.build_encoder_from_checkpoint(args.model)
        return encoder, vocab_list, kind
    model, src_list, _, _ = ckpt.load_model_checkpoint(args.model)
    if args.which == "second":
        if model.second_encoder is None:
            raise ConfigError("model has no second encoder; use --which nmt")
        return model.second_encoder, src_list, kind
    return model.encoder, src_list, kind


def cmd_inspect(args) -> dict:
    _need(args, "model", "sentences", "lemma", "out-dir")
    _check_paths(args.model, args.sentences, args.annotations)
    encoder, vocab_list, kind = _encoder_for_inspection(args)
    vocab = D.Vocab.from_list(vocab_list)
    sentences = [l for l in Path(args.sentences).read_text().splitlines()
                 if l.strip()]
    annotations = D.load_annotations(args.annotations) if args.annotations else None
    out = _out_dir(args)
    matrix, labels = similarity_heatmap(encoder, vocab, sentences, args.lemma)
    records, points = export_token_vectors(encoder, vocab, sentences, args.lemma,
                                           annotations=annotations,
                                           project=len(sentences) >= 2)
    files = {
        "heatmap_tsv": out / "heatmap.tsv",
        "heatmap_png": out / "heatmap.png",
        "vectors_tsv": out / "vectors.tsv",
    }
    R.write_heatmap_tsv(matrix, labels, files["heatmap_tsv"])
    R.render_heatmap(matrix, labels, files["heatmap_png"])
    R.write_vectors_tsv(records, files["vectors_tsv"])
    if points is not None:
        files["projection_tsv"] = out / "projection.tsv"
        files["projection_png"] = out / "projection.png"
        R.write_projection_tsv(points, records, files["projection_tsv"])
        R.render_projection(points, records, files["projection_png"])
    off_diag = matrix[~np.eye(len(labels), dtype=bool)]
    return {
        "command": "inspect", "checkpoint_kind": kind,
        "sentences": len(sentences),
        "mean_offdiagonal_similarity": float(off_diag.mean()) if off_diag.size else None,
        "files": {k: str(v) for k, v in files.items()},
    }


HANDLERS = {
    "gen-data": cmd_gen_data,
    "pretrain-sr": cmd_pretrain_sr,
    "pretrain-wdr": cmd_pretrain_wdr,
    "train": cmd_train,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, parsers = build_parser()
    try:
        command = next((a for a in argv if not a.startswith("-")), None)
        if command is not None and command in parsers:
            pre = argparse.ArgumentParser(add_help=False)
            pre.add_argument("--config")
            pre_args, _ = pre.parse_known_args(argv)
            if pre_args.config:
                _check_paths(pre_args.config)
                _apply_config_file(parsers, command, pre_args.config)
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        _emit(HANDLERS[args.command](args))
        return 0
    except ConfigError as exc:
        _log(f"configuration error: {exc}")
        return 1
    except DataError as exc:
        _log(f"data error: {exc}")
        return 2
    except HdrnmtError as exc:
        _log(f"runtime error: {exc}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
