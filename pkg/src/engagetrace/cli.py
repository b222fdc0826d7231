"""Command-line surface: annotate transcripts, build events, evaluate, sweep, report.

Every command writes its outputs plus a manifest.json (config snapshot, input
hashes, seed, version, timings) into the output directory, and is
deterministic given inputs and seed. Exit codes: 0 ok, 1 usage, 2 data error,
3 service error.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import sys
import time
from pathlib import Path

import click

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .content import (
    AnnotationCache,
    AnnotationClient,
    FragmentAnnotation,
    TokenBucket,
    Vocabulary,
    annotate_fragment,
    extract_topic_scores,
    fragment_hash,
    fragment_transcript,
    rank_topics,
    read_annotations,
    read_transcripts,
    require_api_key,
    write_annotations,
)
from .corpus import build_events, read_events, read_view_logs, select_cohort, write_events
from .errors import DataError, ServiceError
from .evaluation import (
    EvalReport,
    comparison_table,
    default_grid,
    evaluate_sequential,
    grid_search,
    per_learner_csv_rows,
    split_learners,
    write_sweep_csv,
)
from .models import MODEL_KINDS, LearnerState, build_model, config_for, save_states
from .synth import generate_novelty_stream

CONFIG_KEYS = ("init_mean", "init_var", "beta_sq", "tau", "use_negative",
               "top_k", "kt_noise", "default_rate")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    if path.is_dir():
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(str(child.relative_to(path)).encode("utf-8"))
            digest.update(bytes.fromhex(_sha256(child)))
        return digest.hexdigest()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict,
                    inputs: list[Path], seed: int | None, started: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None},
        "seed": seed,
        "tool_version": __version__,
        "timings": {"seconds": round(time.monotonic() - started, 3)},
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_toml(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise click.UsageError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"unparseable TOML in {path}: {exc}")


def _model_config(model: str, config_path: str | None, use_negative: bool | None,
                  top_k: int | None) -> "config_for":
    raw = _load_toml(config_path)
    unknown = set(raw) - set(CONFIG_KEYS)
    if unknown:
        raise DataError(
            f"unknown config keys {sorted(unknown)}; allowed: {', '.join(CONFIG_KEYS)}")
    overrides = dict(raw)
    if use_negative is not None:  # flags beat file values
        overrides["use_negative"] = use_negative
    if top_k is not None:
        overrides["top_k"] = top_k
    try:
        return config_for(model, **overrides)
    except ValueError as exc:
        raise DataError(str(exc))


@click.group()
@click.version_option(version=__version__, prog_name="engagetrace")
def cli():
    """Online Bayesian engagement modelling over Wikipedia knowledge components."""


@cli.command()
@click.option("--transcripts", "transcripts_dir", required=True,
              type=click.Path(exists=True, file_okay=False), help="Directory of *.txt transcripts.")
@click.option("--cache", "cache_path", required=True, type=click.Path(),
              help="Annotation cache store (JSONL, appended to).")
@click.option("--endpoint", required=True, help="Entity-linking service URL.")
@click.option("--api-key-env", default="ANNOTATOR_API_KEY", show_default=True,
              help="Environment variable holding the service key.")
@click.option("--language", default="en", show_default=True)
@click.option("--concurrency", default=1, show_default=True, type=int)
@click.option("--rate-limit", default=10.0, show_default=True, type=float,
              help="Max service requests per second.")
@click.option("--max-retries", default=3, show_default=True, type=int,
              help="Retries per fragment on transient service failures.")
@click.option("--top-k", default=5, show_default=True, type=int)
@click.option("--target-len", default=5000, show_default=True, type=int)
@click.option("--pagerank-weight", default=0.4, show_default=True, type=float)
@click.option("--cosine-weight", default=0.6, show_default=True, type=float)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def annotate(transcripts_dir, cache_path, endpoint, api_key_env, language,
             concurrency, rate_limit, max_retries, top_k, target_len,
             pagerank_weight, cosine_weight, out_dir):
    """Fragment transcripts and annotate every fragment with ranked topics."""
    started = time.monotonic()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    transcripts = read_transcripts(transcripts_dir)
    cache = AnnotationCache(cache_path)

    tasks = []
    for lecture_id in sorted(transcripts):
        text = transcripts[lecture_id]
        for index, (start, end) in enumerate(fragment_transcript(text, target_len)):
            tasks.append((lecture_id, index, text[start:end], (start, end)))

    api_key = require_api_key(api_key_env, cache, [t[2] for t in tasks])
    client = AnnotationClient(endpoint, api_key=api_key, language=language,
                              max_retries=max_retries,
                              rate_limiter=TokenBucket(rate_limit))
    misses = [t for t in tasks if fragment_hash(t[2]) not in cache]
    if misses:
        if concurrency > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=concurrency) as pool:
                list(pool.map(
                    lambda t: annotate_fragment(t[2], client, cache, t[0], t[1]),
                    misses))
        else:
            for lecture_id, index, text, _ in misses:
                annotate_fragment(text, client, cache, lecture_id, index)

    # vocabulary ids are assigned in a deterministic second pass over the cache
    vocab = Vocabulary()
    annotations = []
    for lecture_id, index, text, span in tasks:
        response = cache.get(fragment_hash(text))["response"]
        topics = rank_topics(extract_topic_scores(response, vocab), top_k,
                             pagerank_weight, cosine_weight)
        annotations.append(FragmentAnnotation(lecture_id, index, span, tuple(topics)))

    write_annotations(out / "annotations.jsonl", annotations)
    vocab.save(out / "vocabulary.tsv")
    click.echo(f"annotated {len(tasks)} fragments from {len(transcripts)} lectures "
               f"({len(misses)} service calls, {len(tasks) - len(misses)} cache hits); "
               f"{len(vocab)} knowledge components")
    _write_manifest(out, "annotate",
                    {"top_k": top_k, "target_len": target_len,
                     "pagerank_weight": pagerank_weight, "cosine_weight": cosine_weight,
                     "language": language, "endpoint": endpoint},
                    [Path(transcripts_dir)], None, started)


@cli.command("build-events")
@click.option("--logs", "logs_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="View log CSV (learner_id,lecture_id,timestamp,start_seconds,end_seconds).")
@click.option("--annotations", "annotations_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--top-k", default=5, show_default=True, type=int)
@click.option("--cohort", default=None, type=int,
              help="Keep only the N most active learners.")
@click.option("--allowlist", default=None, type=click.Path(exists=True, dir_okay=False),
              help="File with one allowed lecture_id per line.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def build_events_cmd(logs_path, annotations_path, top_k, cohort, allowlist, out_dir):
    """Join view logs with annotations into an ordered engagement-event file."""
    started = time.monotonic()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logs = read_view_logs(logs_path)
    annotations = read_annotations(annotations_path)
    allowed = None
    if allowlist:
        allowed = {line.strip() for line in Path(allowlist).read_text(encoding="utf-8").splitlines()
                   if line.strip()}
    events, summary = build_events(logs, annotations, top_k, lecture_allowlist=allowed)
    if cohort is not None:
        events = select_cohort(events, cohort)
        from .corpus import summarize_events
        summary = summarize_events(events)
    write_events(out / "events.jsonl", events)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(f"built {summary['events']} events for {summary['learners']} learners "
               f"({summary['unique_kcs']} unique KCs, {summary['lectures']} lectures)")
    _write_manifest(out, "build-events", {"top_k": top_k, "cohort": cohort},
                    [Path(logs_path), Path(annotations_path)], None, started)


@cli.command()
@click.option("--events", "events_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--model", required=True, type=click.Choice(MODEL_KINDS))
@click.option("--config", "config_path", default=None, type=click.Path(),
              help="TOML file with model parameters; flags override it.")
@click.option("--use-negative/--positive-only", "use_negative", default=None,
              help="Learn from negative engagement or skip it.")
@click.option("--top-k", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--jobs", default=1, show_default=True, type=int)
@click.option("--states-out", default=None, type=click.Path(),
              help="Write per-learner model states after the pass (per-learner models).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def evaluate(events_path, model, config_path, use_negative, top_k, seed, jobs,
             states_out, out_dir):
    """Run the sequential prediction protocol and write the evaluation report."""
    started = time.monotonic()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _model_config(model, config_path, use_negative, top_k)
    events = read_events(events_path)
    report = evaluate_sequential(cfg, events, jobs=jobs, seed=seed)
    with open(out / "report.json", "wb") as fh:
        fh.write(report.to_json_bytes())
    (out / "report.txt").write_text(report.text_table(), encoding="utf-8")
    if states_out:
        model_obj = build_model(cfg)
        if model_obj.is_global:
            raise DataError("state snapshots cover per-learner models only")
        states: dict[str, LearnerState] = {}
        for event in events:
            state = states.setdefault(event.learner_id, LearnerState())
            model_obj.predict_and_update(state, event)
        save_states(states_out, states)
    click.echo(report.text_table())
    _write_manifest(out, "evaluate", cfg.to_dict(), [Path(events_path)], seed, started)


@cli.command()
@click.option("--events", "events_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--model", required=True, type=click.Choice(MODEL_KINDS))
@click.option("--grid", "grid_path", default=None, type=click.Path(),
              help="TOML file mapping parameter names to value lists.")
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--train-fraction", default=0.7, show_default=True, type=float)
@click.option("--objective", default="f1", show_default=True,
              type=click.Choice(["accuracy", "precision", "recall", "f1"]))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--jobs", default=1, show_default=True, type=int)
@click.option("--use-negative/--positive-only", "use_negative", default=None)
@click.option("--top-k", default=None, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def sweep(events_path, model, grid_path, config_path, train_fraction, objective,
          seed, jobs, use_negative, top_k, out_dir):
    """Split learners, grid-search on train, evaluate the winner on test."""
    started = time.monotonic()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base_cfg = _model_config(model, config_path, use_negative, top_k)
    if grid_path is not None:
        grid = _load_toml(grid_path)
        if not grid:
            raise click.UsageError(f"grid file {grid_path} defines no parameters")
        grid = {name: list(values) for name, values in grid.items()}
    else:
        grid = default_grid(model)

    events = read_events(events_path)
    train_ids, test_ids = split_learners({e.learner_id for e in events},
                                         train_fraction, seed)
    train_events = [e for e in events if e.learner_id in set(train_ids)]
    test_events = [e for e in events if e.learner_id in set(test_ids)]
    best_cfg, rows = grid_search(base_cfg, grid, train_events,
                                 objective=objective, jobs=jobs)
    write_sweep_csv(out / "sweep.csv", rows, grid)
    report = evaluate_sequential(best_cfg, test_events, jobs=jobs, seed=seed)
    report.split = f"train={len(train_ids)} test={len(test_ids)} fraction={train_fraction}"
    with open(out / "report.json", "wb") as fh:
        fh.write(report.to_json_bytes())
    (out / "report.txt").write_text(report.text_table(), encoding="utf-8")
    click.echo(f"best config: {best_cfg.to_dict()}")
    click.echo(report.text_table())
    _write_manifest(out, "sweep",
                    {"base": base_cfg.to_dict(), "grid": grid,
                     "objective": objective, "train_fraction": train_fraction,
                     "best": best_cfg.to_dict()},
                    [Path(events_path)], seed, started)


@cli.command()
@click.argument("reports", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def report(reports, out_dir):
    """Compare evaluation reports and emit per-learner scatter data."""
    started = time.monotonic()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    loaded = [EvalReport.load(path) for path in reports]
    table = comparison_table(loaded)
    (out / "comparison.txt").write_text(table, encoding="utf-8")
    import csv as _csv

    # topic sparsity = learner's unique-KC count / event count
    with open(out / "per_learner.csv", "w", newline="", encoding="utf-8") as fh:
        writer = _csv.DictWriter(
            fh, fieldnames=["model", "learner_id", "events", "topic_sparsity", "f1"])
        writer.writeheader()
        for rpt in loaded:
            for row in per_learner_csv_rows(rpt):
                writer.writerow({"model": rpt.model, **row})
    click.echo(table)
    _write_manifest(out, "report", {"reports": list(reports)},
                    [Path(p) for p in reports], None, started)


@cli.command()
@click.option("--learners", default=50, show_default=True, type=int)
@click.option("--events-per-learner", default=None, type=int)
@click.option("--total-events", default=None, type=int)
@click.option("--kcs", default=200, show_default=True, type=int)
@click.option("--topics-per-event", default=5, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def synth(learners, events_per_learner, total_events, kcs, topics_per_event,
          seed, out_path):
    """Generate a synthetic engagement stream from the novelty generative model."""
    if events_per_learner is None and total_events is None:
        events_per_learner = 200
    try:
        events, _ = generate_novelty_stream(
            learners, events_per_learner, total_events=total_events,
            n_kcs=kcs, topics_per_event=topics_per_event, seed=seed)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    write_events(out_path, events)
    click.echo(f"wrote {len(events)} events for {learners} learners to {out_path}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.ClickException as exc:  # usage problems
        exc.show()
        sys.exit(1)
    except click.exceptions.Abort:
        sys.exit(1)
    except ServiceError as exc:
        click.echo(f"service error: {exc}", err=True)
        sys.exit(3)
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
