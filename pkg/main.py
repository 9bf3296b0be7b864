import argparse
import os
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from schemas.config import HashKind, ModelConfig, RunConfig
from services.corpus import (
    MaskedExample,
    Page,
    entity_frequencies,
    load_corpus,
    load_examples,
    load_vocab,
    make_eval_set,
    save_corpus,
    save_examples,
    split_train_test,
)
from services.evaluation import evaluate, format_table, predict, write_report
from services.evaluation.studies import beam_width_sweep, depth_study, hashing_comparison
from services.hashing import (
    MASK,
    HashScheme,
    VocabSpec,
    bucket_histogram,
    build_coherent_scheme,
    build_random_scheme,
    hash_entity,
    load_scheme,
    save_scheme,
    scheme_fingerprint,
)
from services.inference import BeamParams, beam_search, exhaustive_rank, format_ranked, get_score_function
from services.model import forward, load_checkpoint
from services.synthetic import generate_synthetic_corpus
from services.training import CorpusExampleSource, FixedExampleSource, Trainer
from utils.config import config_fingerprint, echo_config, load_config, run_dir
from utils.errors import ArtifactError, ConfigError, SuperbloomError
from utils.log import logger, set_console_level


def _flag_overrides(args: argparse.Namespace, mapping: Sequence[Tuple[str, str]]) -> List[str]:
    """Turn explicitly given flags into ``section.key=value`` overrides."""
    overrides = []
    for flag, key in mapping:
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}" if not isinstance(value, str) else f'{key}="{value}"')
    return overrides


def _resolve(args: argparse.Namespace, mapping: Sequence[Tuple[str, str]] = ()) -> RunConfig:
    config = load_config(args.config, [*_flag_overrides(args, mapping), *(args.set or [])])
    logger.info(f"resolved config {config_fingerprint(config)} for {args.command}")
    return config


def _synthesize(config: RunConfig) -> List[Page]:
    corpus = config.corpus
    return generate_synthetic_corpus(
        corpus.n_entities,
        corpus.n_pages,
        corpus.n_clusters,
        corpus.zipf_s,
        corpus.seed,
        corpus.min_page_len,
        corpus.max_page_len,
        corpus.cluster_affinity,
    ).pages


def _load_pages(config: RunConfig, path: Optional[str], n_entities: Optional[int] = None) -> List[Page]:
    path = path or config.corpus.path
    if path:
        return load_corpus(path, n_entities)
    if n_entities is not None and n_entities != config.corpus.n_entities:
        raise ConfigError(f"scheme covers {n_entities} entities but corpus.n_entities = {config.corpus.n_entities}")
    logger.info("no corpus given, generating the synthetic corpus from [corpus]")
    return _synthesize(config)


def _split(config: RunConfig, pages: Sequence[Page]):
    return split_train_test(pages, config.corpus.test_frac, config.corpus.split_seed)


def _eval_examples(config: RunConfig, scheme: HashScheme, pages: Sequence[Page], limit: Optional[int] = None):
    examples = make_eval_set(pages, scheme, config.model.seq_len, config.seed)
    limit = limit or config.eval.max_examples
    return examples[:limit] if limit else examples


def _out_dir(args: argparse.Namespace, config: RunConfig) -> str:
    return getattr(args, "out_dir", None) or run_dir(config, args.command)


def _load_embeddings(path: str, n_entities: int) -> np.ndarray:
    try:
        embeddings = np.load(path)
    except (OSError, ValueError) as e:
        raise ArtifactError(f"cannot read embeddings {path}: {e}") from e
    if embeddings.ndim != 2 or embeddings.shape[0] != n_entities:
        raise ConfigError(f"embeddings {path} have shape {embeddings.shape}, expected one row per entity (N={n_entities})")
    return embeddings


def _check_examples(examples: Sequence[MaskedExample], scheme: HashScheme, seq_len: int, path: str) -> None:
    for i, example in enumerate(examples):
        if example.m != scheme.m:
            raise ConfigError(f"{path}: example {i} was hashed with m={example.m}, the scheme has m={scheme.m}")
        if example.n_positions > seq_len:
            raise ConfigError(f"{path}: example {i} has {example.n_positions} positions, model.seq_len is {seq_len}")
        if example.input_tokens.size and (example.input_tokens.min() < 0 or example.input_tokens.max() >= scheme.n_tokens):
            raise ConfigError(f"{path}: example {i} holds tokens outside the scheme's {scheme.n_tokens}")


def cmd_build_hash(args: argparse.Namespace) -> None:
    config = _resolve(
        args,
        [("vocab_size", "scheme.vocab_size"), ("m", "scheme.m"), ("alpha", "scheme.alpha"), ("seed", "scheme.seed")],
    )
    sc = config.scheme
    n_entities = len(load_vocab(args.vocab_file)) if args.vocab_file else sc.vocab_size
    spec = VocabSpec(n_entities, tuple(sc.specials))

    if args.coherent_embeddings or sc.kind == HashKind.coherent:
        if not args.coherent_embeddings:
            raise ConfigError("coherent hashing needs --coherent-embeddings")
        embeddings = _load_embeddings(args.coherent_embeddings, n_entities)
        if args.corpus:
            frequencies = entity_frequencies(load_corpus(args.corpus, n_entities), n_entities)
        else:
            frequencies = np.ones(n_entities)
        if args.constraint_scheme:
            base = load_scheme(args.constraint_scheme)
            if base.n_entities != n_entities or base.alpha != sc.alpha:
                raise ConfigError(
                    f"constraint scheme has N={base.n_entities} alpha={base.alpha}, "
                    f"the new function needs N={n_entities} alpha={sc.alpha}"
                )
            functions = list(base.functions)
            functions.append(build_coherent_scheme(embeddings, frequencies, sc.alpha, constraint=functions[-1].forward))
        else:
            functions = [build_coherent_scheme(embeddings, frequencies, sc.alpha)]
            while len(functions) < sc.m:
                functions.append(build_coherent_scheme(embeddings, frequencies, sc.alpha, constraint=functions[-1].forward))
        scheme = HashScheme.from_functions(functions, sc.alpha, spec.specials, sc.require_unique_digests)
    else:
        scheme = build_random_scheme(spec, sc.m, sc.alpha, sc.seed, sc.require_unique_digests)

    out = args.out or os.path.join(_out_dir(args, config), "scheme.sbhs")
    save_scheme(scheme, out)
    print(f"scheme       {out}")
    print(f"fingerprint  {scheme_fingerprint(scheme)}")
    print(f"N={scheme.n_entities} m={scheme.m} alpha={scheme.alpha} hash_size={scheme.hash_size}")
    print(f"ordinary tokens {scheme.n_ordinary_tokens}, total tokens {scheme.n_tokens}")
    for j, histogram in enumerate(bucket_histogram(scheme)):
        print(f"function {j} bucket sizes: " + ", ".join(f"{size}x{count}" for size, count in histogram.items()))


def cmd_synth_corpus(args: argparse.Namespace) -> None:
    config = _resolve(
        args,
        [
            ("entities", "corpus.n_entities"),
            ("pages", "corpus.n_pages"),
            ("clusters", "corpus.n_clusters"),
            ("zipf_s", "corpus.zipf_s"),
            ("seed", "corpus.seed"),
        ],
    )
    pages = _synthesize(config)
    out = args.out or os.path.join(_out_dir(args, config), "corpus.txt")
    save_corpus(out, pages)
    print(f"wrote {len(pages)} pages to {out}")


def cmd_prepare_data(args: argparse.Namespace) -> None:
    config = _resolve(args)
    scheme = load_scheme(args.scheme)
    train_pages, test_pages = _split(config, _load_pages(config, args.corpus, scheme.n_entities))
    out_dir = _out_dir(args, config)
    echo_config(config, out_dir)
    save_corpus(os.path.join(out_dir, "train_pages.txt"), train_pages)
    save_corpus(os.path.join(out_dir, "test_pages.txt"), test_pages)
    if test_pages:
        save_examples(os.path.join(out_dir, "eval.sbex"), _eval_examples(config, scheme, test_pages))
    if args.train_examples:
        source = CorpusExampleSource(train_pages, scheme, config.model.seq_len, config.train.mask_rate, config.train.seed)
        save_examples(os.path.join(out_dir, "train.sbex"), [source.example(i) for i in range(args.train_examples)])
    print(f"prepared {len(train_pages)} train / {len(test_pages)} test pages in {out_dir}")


def cmd_train(args: argparse.Namespace) -> None:
    config = _resolve(args)
    scheme = load_scheme(args.scheme)
    train_pages, test_pages = _split(config, _load_pages(config, args.corpus, scheme.n_entities))
    model_config = ModelConfig.from_scheme(config.model, scheme)
    if args.examples:
        examples = load_examples(args.examples)
        _check_examples(examples, scheme, model_config.seq_len, args.examples)
        source = FixedExampleSource(examples)
    else:
        source = CorpusExampleSource(train_pages, scheme, model_config.seq_len, config.train.mask_rate, config.train.seed)
    eval_examples = _eval_examples(config, scheme, test_pages, config.train.eval_examples) if test_pages else []

    out_dir = _out_dir(args, config)
    echo_config(config, out_dir)
    trainer = Trainer(
        model_config,
        config.train,
        scheme,
        source,
        eval_examples,
        config.infer,
        out_dir,
        entity_frequencies(train_pages, scheme.n_entities),
    )
    if args.resume:
        trainer.resume(args.resume)
    trainer.run(progress=True)
    print(f"trained to step {trainer.state.step}, checkpoints in {out_dir}")


def cmd_eval(args: argparse.Namespace) -> None:
    config = _resolve(args, [("k", "infer.k"), ("beam", "infer.beam"), ("iters", "infer.iters")])
    scheme = load_scheme(args.scheme)
    checkpoint = load_checkpoint(args.checkpoint, scheme)
    train_pages, test_pages = _split(config, _load_pages(config, args.corpus, scheme.n_entities))
    if not test_pages:
        raise ConfigError("the split leaves no test pages; raise corpus.test_frac")
    ks = sorted(set(config.eval.ks) | {config.infer.k})
    report = evaluate(
        checkpoint.params,
        checkpoint.config,
        scheme,
        _eval_examples(config, scheme, test_pages),
        config.infer,
        frequencies=entity_frequencies(train_pages, scheme.n_entities),
        ks=ks,
        fingerprint=config_fingerprint(config),
        exhaustive=args.exhaustive,
    )
    out_dir = _out_dir(args, config)
    echo_config(config, out_dir)
    table, _ = write_report(report, out_dir, "eval")
    print(Path(table).read_text(encoding="utf-8"), end="")


def _parse_queries(path: str, scheme: HashScheme):
    """Each line: entity ids with ``MASK`` at the positions to predict."""
    queries = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ArtifactError(f"cannot read queries {path}: {e}") from e
    for line_no, line in enumerate(lines, start=1):
        fields = line.split()
        if not fields:
            continue
        digest, masked = [], []
        for i, field in enumerate(fields):
            if field == MASK:
                digest.append(scheme.special_tokens(MASK))
                masked.append(i)
                continue
            try:
                entity = int(field)
            except ValueError:
                raise ArtifactError(f"{path}:{line_no}: {field!r} is neither an entity id nor {MASK}") from None
            if not 0 <= entity < scheme.n_entities:
                raise ArtifactError(f"{path}:{line_no}: entity id {entity} outside [0, {scheme.n_entities})")
            digest.append(hash_entity(scheme, entity))
        if not masked:
            raise ArtifactError(f"{path}:{line_no}: no {MASK} position to predict")
        queries.append((np.concatenate(digest), masked))
    return queries


def cmd_infer(args: argparse.Namespace) -> None:
    config = _resolve(
        args, [("k", "infer.k"), ("beam", "infer.beam"), ("iters", "infer.iters"), ("score_fn", "infer.score_fn")]
    )
    scheme = load_scheme(args.scheme)
    checkpoint = load_checkpoint(args.checkpoint, scheme)
    names = load_vocab(args.vocab_file) if args.vocab_file else None
    score_fn = get_score_function(config.infer.score_fn)
    params = BeamParams.from_config(config.infer.model_copy(update={"k": min(config.infer.k, scheme.n_entities)}))

    lines = []
    query = 0
    for digest, masked in _parse_queries(args.input, scheme):
        rows = np.array([[0, i] for i in masked], dtype=np.int64)
        predictions = forward(checkpoint.params, checkpoint.config, digest, rows=rows).predictions
        for r in range(len(masked)):
            result = beam_search(score_fn, predictions.position(r), scheme, params)
            lines.extend(format_ranked(result, query, names))
            query += 1
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    print(text, end="")


def _random_predictions(scheme: HashScheme, queries: int, seed: int) -> np.ndarray:
    logits = np.random.default_rng(seed).standard_normal((queries, scheme.m, scheme.hash_size)) * 3.0
    probs = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return probs / probs.sum(axis=-1, keepdims=True)


def cmd_bench(args: argparse.Namespace) -> None:
    config = _resolve(args, [("beam", "infer.beam"), ("k", "infer.k"), ("iters", "infer.iters")])
    scheme = load_scheme(args.scheme)
    if args.checkpoint:
        checkpoint = load_checkpoint(args.checkpoint, scheme)
        _, test_pages = _split(config, _load_pages(config, args.corpus, scheme.n_entities))
        probs = predict(checkpoint.params, checkpoint.config, scheme, _eval_examples(config, scheme, test_pages, args.queries)).probs
    else:
        probs = _random_predictions(scheme, args.queries, config.seed)

    score_fn = get_score_function(config.infer.score_fn)
    params = BeamParams.from_config(config.infer.model_copy(update={"k": min(config.infer.k, scheme.n_entities)}))
    start = time.perf_counter()
    beam_results = [beam_search(score_fn, p, scheme, params) for p in probs]
    beam_seconds = time.perf_counter() - start
    start = time.perf_counter()
    oracle_results = [exhaustive_rank(score_fn, p, scheme, params.k) for p in probs]
    oracle_seconds = time.perf_counter() - start

    beam_scored = float(np.mean([r.candidates_scored for r in beam_results]))
    agree = np.mean([np.array_equal(b.items, o.items) for b, o in zip(beam_results, oracle_results)])
    rows = [
        ["beam", f"{beam_scored:.1f}", f"{beam_scored / scheme.n_entities:.4f}", f"{beam_seconds:.4f}"],
        ["exhaustive", str(scheme.n_entities), "1.0000", f"{oracle_seconds:.4f}"],
    ]
    print(format_table(["method", "scored/query", "fraction", "seconds"], rows), end="")
    print(f"speedup {oracle_seconds / max(beam_seconds, 1e-12):.2f}x, exact {np.mean([r.exact for r in beam_results]):.3f}, "
          f"agreement with oracle {agree:.3f} over {len(probs)} queries")


def cmd_sweep_beam(args: argparse.Namespace) -> None:
    config = _resolve(args)
    scheme = load_scheme(args.scheme)
    checkpoint = load_checkpoint(args.checkpoint, scheme)
    _, test_pages = _split(config, _load_pages(config, args.corpus, scheme.n_entities))
    report = beam_width_sweep(
        checkpoint,
        scheme,
        _eval_examples(config, scheme, test_pages),
        config.infer,
        widths=config.eval.beam_widths,
        ks=config.eval.ks,
        fingerprint=config_fingerprint(config),
    )
    ks = sorted(config.eval.ks)
    table = format_table(
        ["beam", *[f"rec@{k}" for k in ks], "exact", "scored"],
        [[row.beam, *[row.recall[k] for k in ks], row.exact_fraction, row.mean_candidates] for row in report.rows],
    )
    out_dir = _out_dir(args, config)
    echo_config(config, out_dir)
    write_report(report, out_dir, "beam_sweep", table)
    print(table, end="")


def cmd_depth_study(args: argparse.Namespace) -> None:
    config = _resolve(args)
    n_entities = args.entities or config.corpus.n_entities
    pages = _load_pages(config, args.corpus, n_entities)
    train_pages, test_pages = _split(config, pages)
    report = depth_study(train_pages, test_pages, n_entities, config)
    report.fingerprint = config_fingerprint(config)
    table = format_table(
        ["hashed", "L", "seed", "rec@1", "loss"],
        [[run.hashed, run.n_layers, run.seed, run.rec1, run.final_loss] for run in report.runs],
    )
    out_dir = _out_dir(args, config)
    echo_config(config, out_dir)
    write_report(report, out_dir, "depth_study", table)
    print(table, end="")


def cmd_compare_hashing(args: argparse.Namespace) -> None:
    config = _resolve(args)
    n_entities = args.entities or config.corpus.n_entities
    pages = _load_pages(config, args.corpus, n_entities)
    train_pages, test_pages = _split(config, pages)
    embedding_file = args.embeddings or config.eval.embedding_source
    embeddings = _load_embeddings(embedding_file, n_entities) if embedding_file else None

    out_dir = _out_dir(args, config)
    echo_config(config, out_dir)
    rows = []
    for seed in config.eval.seeds:
        for alpha in config.eval.alphas:
            report = hashing_comparison(train_pages, test_pages, n_entities, config, alpha, embeddings, seed)
            report.fingerprint = config_fingerprint(config)
            write_report(report, out_dir, f"hashing_alpha{alpha}_seed{seed}")
            rows.extend([alpha, seed, name, v.token_rec1, v.entity_rec1] for name, v in report.variants.items())
    table = format_table(["alpha", "seed", "variant", "token rec@1", "entity rec@1"], rows)
    with open(os.path.join(out_dir, "hashing_comparison.txt"), "w", encoding="utf-8", newline="\n") as f:
        f.write(table)
    print(table, end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Hashed-vocabulary transformer: hashing, training and certified top-k inference.")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="console log level")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="TOML run configuration")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        p.set_defaults(handler=handler)
        return p

    p = command("build-hash", cmd_build_hash, "build and save a hash scheme")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--vocab-size", type=int)
    group.add_argument("--vocab-file", type=str)
    p.add_argument("--m", type=int)
    p.add_argument("--alpha", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--coherent-embeddings", type=str, help=".npy matrix, one row per entity")
    p.add_argument("--constraint-scheme", type=str, help="append one coherent function avoiding this scheme's last function")
    p.add_argument("--corpus", type=str, help="corpus whose entity counts order coherent bucket seeds")
    p.add_argument("--out", type=str)

    p = command("synth-corpus", cmd_synth_corpus, "generate a planted-cluster Zipf corpus")
    p.add_argument("--entities", type=int)
    p.add_argument("--pages", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--zipf-s", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=str)

    p = command("prepare-data", cmd_prepare_data, "split a corpus and cache hashed examples")
    p.add_argument("--corpus", type=str)
    p.add_argument("--scheme", type=str, required=True)
    p.add_argument("--train-examples", type=int, default=0)
    p.add_argument("--out-dir", type=str)

    p = command("train", cmd_train, "train a model")
    p.add_argument("--corpus", type=str)
    p.add_argument("--scheme", type=str, required=True)
    p.add_argument("--examples", type=str, help="train on a cached example file instead of fresh segments")
    p.add_argument("--resume", type=str, help="checkpoint to continue from")
    p.add_argument("--out-dir", type=str)

    p = command("eval", cmd_eval, "recall metrics on the held-out pages")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--corpus", type=str)
    p.add_argument("--scheme", type=str, required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--beam", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--exhaustive", action="store_true")
    p.add_argument("--out-dir", type=str)

    p = command("infer", cmd_infer, "top-k entities for MASK positions")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--scheme", type=str, required=True)
    p.add_argument("--input", type=str, required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--beam", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--score-fn", type=str, choices=["log_sum", "min", "max"])
    p.add_argument("--vocab-file", type=str)
    p.add_argument("--out", type=str)

    p = command("bench", cmd_bench, "beam search vs exhaustive scoring")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--checkpoint", type=str)
    source.add_argument("--random-predictions", action="store_true")
    p.add_argument("--scheme", type=str, required=True)
    p.add_argument("--corpus", type=str)
    p.add_argument("--beam", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--queries", type=int, default=100)

    p = command("sweep-beam", cmd_sweep_beam, "recall at several beam widths")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--corpus", type=str)
    p.add_argument("--scheme", type=str, required=True)
    p.add_argument("--out-dir", type=str)

    for name, handler, help_text in (
        ("depth-study", cmd_depth_study, "hashed vs unhashed models at several depths"),
        ("compare-hashing", cmd_compare_hashing, "random vs coherent hashing"),
    ):
        p = command(name, handler, help_text)
        p.add_argument("--corpus", type=str)
        p.add_argument("--entities", type=int, help="vocabulary size of --corpus")
        p.add_argument("--out-dir", type=str)
        if name == "compare-hashing":
            p.add_argument("--embeddings", type=str, help=".npy entity embeddings for coherent hashing")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    set_console_level(args.log_level)
    try:
        args.handler(args)
    except SuperbloomError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
