"""Command-line harness: derive | run | sweep | ablate | heatmap.

Exit status is 0 on success, 2 on a configuration error and 1 on any
other failure. Written files are reproducible from the flags plus the
inputs (``--seed`` included); host timings only go to stdout.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import costmodel
from .core import BYTE, VOCAB_MODES, Vocab, build_vocab, detokenize, make_rng, read_corpus, tokenize
from .drafters import (DEFAULT_K, DEFAULT_W_MAX, BigramTable, ExtendedBigramTable, derive_bigram,
                       derive_unigram, extend_bigram)
from .engine import RunMetrics, StrategyConfig, run_generation
from .model import MAX_TOY_VOCAB, Predictor, TableModel, ToyTransformer, table_model_from_corpus, toy_transformer_init
from .strategy import STRATEGIES, DraftTables

log = logging.getLogger("ngramspec")

DEFAULT_SWEEP_K = (1, 5, 10, 20, 25)
DEFAULT_SWEEP_W = (2, 4, 6, 8, 10, 12, 14)
DEFAULT_HEATMAP_L = (25, 100, 500)
REFERENCE_CELL = (10, 10)


class ConfigError(Exception):
    """Bad flags or inputs; exit status 2."""


@dataclass
class Workspace:
    """Everything a command needs once flags are resolved."""

    vocab: Vocab
    docs: list[np.ndarray]
    names: list[str]
    predictor: Predictor
    tables: DraftTables
    profile: costmodel.AcceleratorProfile


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


def _int_list(text: str) -> tuple[int, ...]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if ":" in part:
            lo, hi = (int(x) for x in part.split(":"))
            out.extend(range(lo, hi + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return tuple(out)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--vocab-mode", choices=VOCAB_MODES, default=BYTE)
    g.add_argument("--corpus", action="append", default=[], metavar="PATH",
                   help="UTF-8 corpus file (repeatable); each file is one dataset")
    g.add_argument("--per-line", action="store_true", help="treat every line as a document")
    g.add_argument("--model", default="table:3", help="table:<order> or toy:<seed>:<dim>")
    g.add_argument("--k", type=int, default=10)
    g.add_argument("--w", type=int, default=10)
    g.add_argument("--q", type=int, default=1)
    g.add_argument("--strategy", choices=STRATEGIES, default="mixed")
    g.add_argument("--profile", help="accelerator profile (key = value lines)")
    g.add_argument("--out", default="out", help="output directory")
    g.add_argument("--K", type=int, default=None, help=f"stored bigram width (default min({DEFAULT_K}, |X|))")
    g.add_argument("--w-max", type=int, default=DEFAULT_W_MAX)
    g.add_argument("--tables", help="directory holding bigram.ngtb / extended.ngtb from `derive`")
    g.add_argument("--unigram-variant", choices=("norm", "inner"), default="norm")
    g.add_argument("--prompts", type=int, default=8, help="prompts per dataset")
    g.add_argument("--prompt-len", type=int, default=16)
    g.add_argument("--max-tokens", type=int, default=128)
    g.add_argument("--jobs", type=int, default=1, help="worker processes for sweep cells")
    g.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    g.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ngramspec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("derive", parents=[common], help="build and store bigram tables")
    sub.add_parser("run", parents=[common], help="speculative generation at one (k, w)")
    sp = sub.add_parser("sweep", parents=[common], help="tokens/call and speedup over a (k, w) grid")
    sp.add_argument("--k-values", type=_int_list, default=DEFAULT_SWEEP_K)
    sp.add_argument("--w-values", type=_int_list, default=DEFAULT_SWEEP_W)
    sub.add_parser("ablate", parents=[common], help="acceptance / rank / allocation histograms")
    hp = sub.add_parser("heatmap", parents=[common], help="slowdown grids from the cost model")
    hp.add_argument("--l-values", type=_int_list, default=DEFAULT_HEATMAP_L)
    hp.add_argument("--k-range", type=_int_list, default=tuple(range(1, 33)))
    hp.add_argument("--w-range", type=_int_list, default=tuple(range(0, 16)))
    return p


# --------------------------------------------------------------------------
# Setup helpers
# --------------------------------------------------------------------------


def load_profile(path: str | None) -> costmodel.AcceleratorProfile:
    if path is None:
        return costmodel.DEFAULT_PROFILE
    try:
        return costmodel.load_profile(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load profile: {exc}") from exc


def build_model(model_spec: str, vocab: Vocab, docs: list[np.ndarray]) -> Predictor:
    kind, _, rest = model_spec.partition(":")
    try:
        if kind == "table":
            order = int(rest or 3)
            return table_model_from_corpus(np.concatenate(docs), order, vocab.size)
        if kind == "toy":
            seed, dim = (int(x) for x in rest.split(":"))
            if vocab.size > MAX_TOY_VOCAB:
                raise ConfigError(f"toy model supports at most {MAX_TOY_VOCAB} tokens, vocab has {vocab.size}")
            return toy_transformer_init(seed, vocab.size, dim)
    except ValueError as exc:
        raise ConfigError(f"bad --model {model_spec!r}: {exc}") from exc
    raise ConfigError(f"bad --model {model_spec!r}: expected table:<order> or toy:<seed>:<dim>")


def resolve_K(args, vocab_size: int) -> int:
    if args.K is None:
        return min(DEFAULT_K, vocab_size)
    if not 1 <= args.K <= vocab_size:
        raise ConfigError(f"--K={args.K} must be between 1 and the vocabulary size |X|={vocab_size}")
    return args.K


def build_tables(args, predictor: Predictor) -> DraftTables:
    n = predictor.vocab_size
    if args.tables:
        d = Path(args.tables)
        try:
            bigram = BigramTable.load(d / "bigram.ngtb")
            extended = ExtendedBigramTable.load(d / "extended.ngtb")
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load tables: {exc}") from exc
        if bigram.vocab_size != n or extended.vocab_size != n:
            raise ConfigError(f"tables in {d} are for |X|={bigram.vocab_size}, model has {n}")
    else:
        K = resolve_K(args, n)
        if args.w_max < 1:
            raise ConfigError("--w-max must be >= 1")
        bigram = derive_bigram(predictor, K)
        extended = extend_bigram(predictor, bigram, args.w_max)
    unigram = None
    if not isinstance(predictor, TableModel):
        unigram = derive_unigram(*predictor.embeddings(), variant=args.unigram_variant)
    return DraftTables(unigram=unigram, bigram=bigram, extended=extended)


def load_workspace(args, with_tables: bool = True) -> Workspace:
    if not args.corpus:
        raise ConfigError("--corpus is required")
    try:
        texts = [read_corpus([p], per_line=args.per_line) for p in args.corpus]
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read corpus: {exc}") from exc
    joined = "\n".join(doc for docs in texts for doc in docs)
    try:
        vocab = build_vocab(joined, args.vocab_mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    docs, names = [], []
    for path, dataset in zip(args.corpus, texts):
        for doc in dataset:
            toks = tokenize(doc, vocab)
            if len(toks):
                docs.append(toks)
                names.append(Path(path).stem)
    if not docs:
        raise ConfigError("corpus holds no tokens")
    predictor = build_model(args.model, vocab, docs)
    tables = build_tables(args, predictor) if with_tables else DraftTables()
    return Workspace(vocab, docs, names, predictor, tables, load_profile(args.profile))


def sample_prompts(ws: Workspace, n: int, length: int, seed: int, dataset: str | None = None):
    """``n`` prompts of up to ``length`` tokens per dataset, drawn with the seeded generator."""
    if n < 1 or length < 1:
        raise ConfigError("--prompts and --prompt-len must be >= 1")
    rng = make_rng(seed)
    datasets = sorted(set(ws.names)) if dataset is None else [dataset]
    prompts = []
    for name in datasets:
        docs = [d for d, nm in zip(ws.docs, ws.names) if nm == name]
        for i in range(n):
            doc = docs[i % len(docs)]
            start = int(rng.integers(0, max(1, len(doc) - length + 1)))
            prompts.append(doc[start: start + length])
    return prompts


def check_strategy(ws: Workspace, kind: str, w: int) -> None:
    if kind in ("unigram", "bigram") and w > 1:
        raise ConfigError(f"strategy {kind!r} only supports w <= 1, got w={w}")
    if kind == "unigram" and ws.tables.unigram is None:
        raise ConfigError("the unigram strategy needs a model with embeddings (toy:<seed>:<dim>)")
    if kind in ("mixed", "extended") and ws.tables.extended is not None and w > ws.tables.extended.w_max:
        raise ConfigError(f"w={w} exceeds the stored table depth w_max={ws.tables.extended.w_max}")


# --------------------------------------------------------------------------
# Running cells
# --------------------------------------------------------------------------


@dataclass
class CellResult:
    kind: str
    k: int
    w: int
    metrics: RunMetrics
    baseline: float
    speculative: float
    outputs: list[np.ndarray]
    seconds: float

    @property
    def sim_speedup(self) -> float:
        return self.baseline / self.speculative


def run_cell(ws: Workspace, config: StrategyConfig, prompts, max_tokens: int) -> CellResult:
    start = time.perf_counter()
    total = RunMetrics()
    baseline = speculative = 0.0
    outputs = []
    for prompt in prompts:
        out, met = run_generation(ws.predictor, prompt, max_tokens, config, ws.tables)
        outputs.append(out)
        total = total.merge(met)
        baseline += costmodel.baseline_latency(ws.profile, len(prompt), met.token_count)
        speculative += costmodel.trace_latency(ws.profile, met.trace)
    return CellResult(config.kind, config.k, config.w, total, baseline, speculative, outputs,
                      time.perf_counter() - start)


_WORKER: dict = {}


def _init_worker(ws, prompts, max_tokens):
    _WORKER.update(ws=ws, prompts=prompts, max_tokens=max_tokens)


def _worker_cell(config: StrategyConfig) -> CellResult:
    return run_cell(_WORKER["ws"], config, _WORKER["prompts"], _WORKER["max_tokens"])


def run_grid(ws: Workspace, configs: list[StrategyConfig], prompts, max_tokens: int, jobs: int):
    if jobs <= 1:
        return [run_cell(ws, c, prompts, max_tokens) for c in configs]
    with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(ws, prompts, max_tokens)) as ex:
        # map keeps grid order whatever the completion order
        return list(ex.map(_worker_cell, configs))


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def cmd_derive(args) -> int:
    ws = load_workspace(args)
    out = _out_dir(args)
    try:
        ws.tables.bigram.save(out / "bigram.ngtb")
        ws.tables.extended.save(out / "extended.ngtb")
        if isinstance(ws.predictor, ToyTransformer):
            ws.predictor.save(out / "model.spdr")
    except OSError as exc:
        raise ConfigError(f"cannot write tables: {exc}") from exc
    t = ws.tables.extended
    print(f"wrote {out}/bigram.ngtb and {out}/extended.ngtb  (|X|={t.vocab_size}, K={t.K}, w_max={t.w_max})")
    return 0


def _run_summary(cell: CellResult) -> dict:
    d = cell.metrics.to_dict()
    d.update(strategy=cell.kind, k=cell.k, w=cell.w, sim_speedup=cell.sim_speedup)
    return d


def cmd_run(args) -> int:
    ws = load_workspace(args)
    check_strategy(ws, args.strategy, args.w)
    out = _out_dir(args)
    prompts = sample_prompts(ws, args.prompts, args.prompt_len, args.seed)
    config = StrategyConfig(args.strategy, args.k, args.w, args.q)
    cell = run_cell(ws, config, prompts, args.max_tokens)
    summary = _run_summary(cell)
    summary["q"] = args.q
    _write(out / "metrics.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
    _write(out / "generated.txt",
           "".join(detokenize(o, ws.vocab).replace("\n", " ") + "\n" for o in cell.outputs))
    m = cell.metrics
    print(f"strategy={cell.kind} k={cell.k} w={cell.w} q={args.q}  prompts={len(prompts)}")
    print(f"tokens={m.token_count} calls={m.call_count} tokens/call={m.tokens_per_call:.3f} "
          f"sim_speedup={cell.sim_speedup:.3f} host_seconds={cell.seconds:.2f}")
    return 0


def cmd_sweep(args) -> int:
    ws = load_workspace(args)
    for w in args.w_values:
        check_strategy(ws, args.strategy, w)
    out = _out_dir(args)
    prompts = sample_prompts(ws, args.prompts, args.prompt_len, args.seed)
    configs = [StrategyConfig(args.strategy, k, w, args.q) for k in args.k_values for w in args.w_values]
    cells = run_grid(ws, configs, prompts, args.max_tokens, args.jobs)

    rows = [(c.kind, c.k, c.w, repr(float(c.metrics.tokens_per_call)), repr(float(c.sim_speedup))) for c in cells]
    _write(out / "sweep.csv", _csv(("strategy", "k", "w", "tokens_per_call", "sim_speedup"), rows))
    best = max(cells, key=lambda c: c.sim_speedup)  # first maximum in grid order
    summary = {"best": _cell_brief(best), "reference": None}
    ref = [c for c in cells if (c.k, c.w) == REFERENCE_CELL]
    if ref:
        summary["reference"] = _cell_brief(ref[0])
    _write(out / "sweep_summary.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")

    if not args.no_plots:
        from .plotting import plot_sweep

        shape = (len(args.k_values), len(args.w_values))
        tpc = np.array([c.metrics.tokens_per_call for c in cells]).reshape(shape)
        spd = np.array([c.sim_speedup for c in cells]).reshape(shape)
        plot_sweep(args.k_values, args.w_values, tpc, spd, out / "sweep.png", title=args.strategy)

    print(f"{len(cells)} cells -> {out}/sweep.csv")
    print(f"(k*, w*) = ({best.k}, {best.w}): tokens/call={best.metrics.tokens_per_call:.3f} "
          f"sim_speedup={best.sim_speedup:.3f}")
    if ref:
        r = ref[0]
        print(f"reference (10, 10): tokens/call={r.metrics.tokens_per_call:.3f} sim_speedup={r.sim_speedup:.3f}")
    print(f"host_seconds={sum(c.seconds for c in cells):.2f}")
    return 0


def _cell_brief(c: CellResult) -> dict:
    return {"strategy": c.kind, "k": c.k, "w": c.w,
            "tokens_per_call": c.metrics.tokens_per_call, "sim_speedup": c.sim_speedup}


def ablation_rows(m: RunMetrics, k: int, w: int):
    """Padded histograms: acceptance 0..w, rank 0..max(k, seen), context rows 0..k."""
    def pad(hist, n):
        return list(hist) + [0] * max(0, n - len(hist))

    acceptance = pad(m.acceptance_hist, w + 1)
    rank = pad(m.rank_hist, k + 1)
    allocation = pad(m.allocation_hist, k + 1)
    return acceptance, rank, allocation


def cmd_ablate(args) -> int:
    if args.strategy != "mixed":
        raise ConfigError("ablate needs --strategy mixed")
    ws = load_workspace(args)
    check_strategy(ws, args.strategy, args.w)
    out = _out_dir(args)
    config = StrategyConfig("mixed", args.k, args.w, args.q)
    for name in sorted(set(ws.names)):
        prompts = sample_prompts(ws, args.prompts, args.prompt_len, args.seed, dataset=name)
        cell = run_cell(ws, config, prompts, args.max_tokens)
        acceptance, rank, allocation = ablation_rows(cell.metrics, args.k, args.w)
        _write(out / f"{name}_acceptance.csv", _csv(("accepted_len", "calls"), enumerate(acceptance)))
        _write(out / f"{name}_rank.csv", _csv(("rank", "calls"), enumerate(rank)))
        _write(out / f"{name}_allocation.csv",
               _csv(("context_rows", "bigram_rows", "calls"),
                    [(m, args.k - m, c) for m, c in enumerate(allocation)]))
        if not args.no_plots:
            from .plotting import plot_ablation

            plot_ablation(acceptance, rank, allocation, out / f"{name}_ablation.png",
                          title=f"{name}: mixed ({args.k}, {args.w})")
        m = cell.metrics
        print(f"{name}: calls={m.call_count} tokens/call={m.tokens_per_call:.3f} "
              f"context wins={m.strategy_wins.get('context', 0)} "
              f"bigram wins={m.strategy_wins.get('model-bigram', 0)}")
    return 0


def cmd_heatmap(args) -> int:
    profile = load_profile(args.profile)
    out = _out_dir(args)
    grids = []
    for l in args.l_values:
        try:
            grid = costmodel.heatmap(profile, l, args.k_range, args.w_range)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        _write(out / f"heatmap_l{l}.csv", grid.to_csv())
        grids.append(grid)
        print(f"l={l}: max slowdown {grid.values.max():.3f}, "
              f"{int((grid.values < 1.05).sum())} cells below 1.05 -> {out}/heatmap_l{l}.csv")
    if not args.no_plots:
        from .plotting import plot_heatmaps

        plot_heatmaps(grids, out / "heatmaps.png")
    return 0


COMMANDS = {"derive": cmd_derive, "run": cmd_run, "sweep": cmd_sweep,
            "ablate": cmd_ablate, "heatmap": cmd_heatmap}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for name in ("k", "w", "q", "max_tokens"):
        if getattr(args, name) < (0 if name == "w" else 1):
            print(f"ngramspec: error: --{name.replace('_', '-')} out of range", file=sys.stderr)
            return 2
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"ngramspec: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"ngramspec: runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
