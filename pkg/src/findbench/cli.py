"""Command-line surface: generate, exec, interpret, agent, evaluate, report.

Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import json
import logging
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import click

from findbench import __version__, agent, evaluator, generator
from findbench.blackbox import SessionError, UsageError, open_session
from findbench.interpreters import INTERPRETERS, Interpretation, read_jsonl, write_jsonl
from findbench.interpreters.base import InterpretationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("findbench")

CATEGORIES = ("numeric", "strings", "relations")
REF_FOR = {cat: name for name, (cat, _) in INTERPRETERS.items()}
INTERPRETER_CHOICES = ("ref", *INTERPRETERS, "lm-agent")
DEFAULT_BUDGETS = {"numeric-ref": 500, "string-ref": 50, "relation-ref": 60}
JUDGES = ("simulation", "random", "endpoint")


@dataclass
class RunConfig:
    """Resolved settings of one command invocation."""

    dataset: str | None = None
    seed: int = 0
    categories: tuple[str, ...] = CATEGORIES
    counts: dict = field(default_factory=dict)
    interpreter: str = "ref"
    budget: int | None = None
    judge: str = "simulation"
    endpoint: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    jobs: int = 1

    def validate(self) -> RunConfig:
        if self.jobs < 1:
            raise click.UsageError("--jobs must be at least 1")
        if self.budget is not None and self.budget < 1:
            raise click.UsageError("--budget must be positive")
        paths = [Path(p).resolve() for p in [self.dataset, *self.outputs.values()] if p]
        if len(set(paths)) != len(paths):
            raise click.UsageError("input and output paths must be distinct")
        return self


# ---------------------------------------------------------------------------
# configuration files


def load_config_file(path: str) -> dict:
    """TOML or JSON file whose keys mirror long flag names, optionally sectioned per command."""
    p = Path(path)
    try:
        text = p.read_text()
        obj = tomllib.loads(text) if p.suffix == ".toml" else json.loads(text)
    except (OSError, ValueError) as exc:
        raise click.UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise click.UsageError(f"config {path} must be a table of settings")
    return obj


def _norm(d: dict) -> dict:
    return {k.replace("-", "_"): v for k, v in d.items()}


def default_map(obj: dict, commands) -> dict:
    """Top-level keys apply to every command that has such an option; sections override them."""
    shared = _norm({k: v for k, v in obj.items() if not isinstance(v, dict)})
    out = {}
    for name, cmd in commands.items():
        params = {p.name for p in cmd.params}
        section = _norm(obj.get(name, {}))
        unknown = set(section) - params
        if unknown:
            raise click.UsageError(f"config section [{name}] has unknown keys: {', '.join(sorted(unknown))}")
        merged = {k: v for k, v in shared.items() if k in params}
        merged.update(section)
        out[name] = merged
    unknown = set(shared) - {p.name for c in commands.values() for p in c.params}
    if unknown:
        raise click.UsageError(f"config has unknown keys: {', '.join(sorted(unknown))}")
    return out


# ---------------------------------------------------------------------------
# helpers


def _load(path: str) -> generator.Dataset:
    try:
        return generator.load_dataset(path)
    except (generator.GenerationError, OSError, ValueError, KeyError) as exc:
        raise click.ClickException(f"cannot load dataset {path}: {exc}") from exc


def _provenance(ds: generator.Dataset, **extra) -> dict:
    return {**ds.provenance(), **extra}


def _select(ds: generator.Dataset, ids: str | None, categories: tuple[str, ...],
            subcategories: tuple[str, ...], limit: int | None) -> list[str]:
    if ids:
        wanted = [s.strip() for s in ids.split(",") if s.strip()]
        missing = [i for i in wanted if i not in ds.manifest]
        if missing:
            raise click.UsageError(f"unknown function ids: {', '.join(missing)}")
        chosen = sorted(dict.fromkeys(wanted))
    else:
        chosen = [s.id for s in ds.manifest.specs
                  if s.category in categories and (not subcategories or s.subcategory in subcategories)]
    if limit is not None:
        chosen = chosen[:limit]
    if not chosen:
        raise click.UsageError("no functions selected")
    return chosen


def _endpoint_options(f):
    opts = [
        click.option("--endpoint", help="Chat-completions URL."),
        click.option("--model", default="gpt-4", show_default=True),
        click.option("--credential-env", default="OPENAI_API_KEY", show_default=True,
                     help="Environment variable holding the API key."),
        click.option("--temperature", type=float, default=0.0, show_default=True),
        click.option("--rate", type=float, help="Max endpoint requests started per second."),
        click.option("--timeout", type=float, default=60.0, show_default=True),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _agent_options(f):
    opts = [
        click.option("--mode", type=click.Choice(agent.MODES), default="aia", show_default=True),
        click.option("--max-turns", type=int, default=agent.DEFAULT_MAX_TURNS, show_default=True),
        click.option("--exemplars", "exemplar_path", type=click.Path(dir_okay=False),
                     help="JSON file of 10 exemplars per function id."),
        click.option("--prompts", "prompt_path", type=click.Path(exists=True, dir_okay=False),
                     help="JSON file overriding system/category prompts."),
        click.option("--transcripts", type=click.Path(dir_okay=False), help="Where to write dialogue transcripts."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return _endpoint_options(f)


def _agent_config(endpoint, model, credential_env, temperature, rate, timeout, mode=None, max_turns=None,
                  exemplar_path=None, prompt_path=None) -> agent.AgentConfig:
    if not endpoint:
        raise click.UsageError("lm-agent needs --endpoint (or an endpoint entry in the config file)")
    try:
        prompts = agent.load_prompt_file(prompt_path) if prompt_path else {}
        return agent.AgentConfig(
            endpoint=endpoint, model=model, credential_env=credential_env, temperature=temperature,
            max_turns=max_turns or agent.DEFAULT_MAX_TURNS, mode=mode or "aia", exemplar_path=exemplar_path,
            prompts=prompts, timeout=timeout, rate=rate,
        )
    except agent.AgentError as exc:
        raise click.UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# root


def _apply_config(ctx: click.Context, _param, value):
    if value:
        ctx.default_map = default_map(load_config_file(value), ctx.command.commands)
    return value


@click.group()
@click.version_option(__version__, prog_name="findbench")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), is_eager=True, expose_value=False,
              callback=_apply_config, help="TOML/JSON file mirroring long flags; flags win.")
@click.option("--log-level", type=click.Choice(["debug", "info", "warning", "error"]), default="warning",
              show_default=True)
def cli(log_level: str) -> None:
    """Procedural black-box function interpretation benchmark."""
    logging.basicConfig(level=log_level.upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------------------
# generate


@cli.command()
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Dataset directory to create.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--category", type=click.Choice([*CATEGORIES, "all"]), default="all", show_default=True)
@click.option("--count", type=int, help="Functions in the chosen category (all: numeric and strings each).")
@click.option("--numeric-count", type=int)
@click.option("--string-count", type=int)
@click.option("--relation-count", type=int, help="Defaults to every shipped relation variant.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Workers for network training.")
@click.option("--force", is_flag=True, help="Replace a non-empty output directory.")
def generate(out, seed, category, count, numeric_count, string_count, relation_count, jobs, force) -> None:
    """Sample a dataset and write manifest, weights, fact tables and test sets."""
    for name, v in (("--count", count), ("--numeric-count", numeric_count), ("--string-count", string_count),
                    ("--relation-count", relation_count)):
        if v is not None and v < 1:
            raise click.UsageError(f"{name} must be positive")
    if category == "numeric":
        numeric_count, string_count, relation_count = count or numeric_count or 100, 0, 0
    elif category == "strings":
        numeric_count, string_count, relation_count = 0, count or string_count or 100, 0
    elif category == "relations":
        numeric_count, string_count, relation_count = 0, 0, count or relation_count
    else:
        numeric_count = numeric_count or count or 100
        string_count = string_count or count or 100
    cfg = RunConfig(seed=seed, jobs=jobs, outputs={"out": out},
                    counts={"numeric": numeric_count, "strings": string_count, "relations": relation_count})
    cfg.validate()

    target = Path(out)
    if target.exists() and any(target.iterdir()):
        if not force:
            raise click.UsageError(f"{out} is not empty; pass --force to replace it")
        shutil.rmtree(target)
    try:
        manifest = generator.sample_dataset(seed, numeric_count, string_count, relation_count)
        generator.make_test_sets(manifest)
        weights = generator.train_weights(manifest, jobs=jobs)
        generator.write_dataset(manifest, target, weights)
    except generator.GenerationError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote {len(manifest.specs)} functions to {out}")
    for cat, sub in sorted(manifest.counts.items()):
        click.echo(f"  {cat}: " + ", ".join(f"{k} {v}" for k, v in sorted(sub.items())))


# ---------------------------------------------------------------------------
# exec


@cli.command("exec")
@click.argument("target")
@click.argument("args", nargs=-1)
@click.option("--nonce", type=int, default=0, show_default=True, help="Noise stream of the session.")
def exec_(target, args, nonce) -> None:
    """Run one function: findbench exec DATASET/ID -- INPUT..."""
    if not args:
        raise click.UsageError("at least one input is required")
    root, _, fid = target.rstrip("/").rpartition("/")
    if not root or not fid:
        raise click.UsageError(f"target must look like <dataset-dir>/<id>, got {target!r}")
    try:
        ds = generator.load_dataset(root)
    except (generator.GenerationError, OSError, ValueError) as exc:
        raise click.UsageError(str(exc)) from exc
    if fid not in ds.manifest:
        raise click.UsageError(f"unknown function id {fid!r} in {root}")
    try:
        line = open_session(ds, fid, nonce=nonce).query(list(args))
    except UsageError as exc:
        raise click.UsageError(str(exc)) from exc
    except (SessionError, ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(line)


# ---------------------------------------------------------------------------
# interpret / agent


_CACHE: dict[str, generator.Dataset] = {}


def _interpret_one(job: tuple) -> dict:
    path, fid, name, budget, seed, nonce = job
    ds = _CACHE.get(path)
    if ds is None:
        ds = _CACHE[path] = generator.load_dataset(path)
    _, fn = INTERPRETERS[name]
    session = open_session(ds, fid, budget=budget, nonce=nonce)
    it = fn(session, budget=budget, seed=seed)
    if session.count > budget:
        raise RuntimeError(f"{fid}: {session.count} queries exceed budget {budget}")
    return {"interpretation": it, "queries": session.count}


def run_reference(ds_path: str, ids: list[str], ds: generator.Dataset, interpreter: str, budget: int | None,
                  seed: int, nonce: int, jobs: int) -> list[Interpretation]:
    jobs_ = []
    for fid in ids:
        cat = ds.spec(fid).category
        name = REF_FOR[cat] if interpreter == "ref" else interpreter
        if INTERPRETERS[name][0] != cat:
            continue
        jobs_.append((ds_path, fid, name, budget or DEFAULT_BUDGETS[name], seed, nonce))
    if not jobs_:
        raise click.UsageError(f"no selected function matches interpreter {interpreter}")
    if jobs > 1 and len(jobs_) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_interpret_one, jobs_))
    else:
        _CACHE[ds_path] = ds
        results = [_interpret_one(j) for j in jobs_]
    return [r["interpretation"] for r in results]


def run_agents(ds: generator.Dataset, ids: list[str], config: agent.AgentConfig, budget: int | None,
               nonce: int, jobs: int, client=None) -> list[agent.DialogueTranscript]:
    exemplars = {}
    if config.exemplar_path:
        try:
            exemplars = agent.load_exemplars(config.exemplar_path)
        except agent.ExemplarError as exc:
            raise click.UsageError(str(exc)) from exc
    if config.mode != "aia":
        missing = [fid for fid in ids if fid not in exemplars]
        if missing:
            raise click.UsageError(f"mode {config.mode} needs exemplars for {', '.join(missing[:5])}")
    own = client is None
    client = client or agent.HttpChatClient(config)

    def one(fid: str) -> agent.DialogueTranscript:
        session = open_session(ds, fid, budget=budget, nonce=nonce)
        return agent.run_agent(config, session, client, exemplars.get(fid))

    try:
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                return list(pool.map(one, ids))
        return [one(fid) for fid in ids]
    finally:
        if own:
            client.close()


def _interpret_common(dataset, out, interpreter, budget, ids, category, subcategory, limit, jobs, seed, nonce,
                      endpoint_kw: dict, agent_kw: dict, transcripts) -> None:
    cfg = RunConfig(dataset=dataset, seed=seed, categories=tuple(category) or CATEGORIES, interpreter=interpreter,
                    budget=budget, endpoint=endpoint_kw, jobs=jobs,
                    outputs={k: v for k, v in (("out", out), ("transcripts", transcripts)) if v})
    if interpreter == "lm-agent":
        config = _agent_config(**endpoint_kw, **agent_kw)
    cfg.validate()
    ds = _load(dataset)
    chosen = _select(ds, ids, cfg.categories, subcategory, limit)
    prov = _provenance(ds, run_seed=seed, interpreter=interpreter)
    try:
        if interpreter == "lm-agent":
            trs = run_agents(ds, chosen, config, budget, nonce, jobs)
            its = [t.interpretation() for t in trs]
            if transcripts:
                agent.write_transcripts(trs, transcripts, provenance=prov)
            aborted = sum(t.status == "aborted" for t in trs)
            if aborted:
                log.warning("%d dialogues aborted on endpoint failure", aborted)
        else:
            its = run_reference(dataset, chosen, ds, interpreter, budget, seed, nonce, jobs)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    except (SessionError, agent.AgentError, RuntimeError) as exc:
        raise click.ClickException(str(exc)) from exc
    its.sort(key=lambda it: it.id)
    write_jsonl(its, out, provenance=prov)
    statuses: dict[str, int] = {}
    for it in its:
        statuses[it.status] = statuses.get(it.status, 0) + 1
    click.echo(f"wrote {len(its)} interpretations to {out} (" +
               ", ".join(f"{k} {v}" for k, v in sorted(statuses.items())) + ")")


def _selection_options(f):
    opts = [
        click.option("--dataset", required=True, type=click.Path(exists=True, file_okay=False)),
        click.option("--out", required=True, type=click.Path(dir_okay=False), help="Interpretations JSONL."),
        click.option("--budget", type=int, help="Max queries per function."),
        click.option("--ids", help="Comma-separated function ids."),
        click.option("--category", multiple=True, type=click.Choice(CATEGORIES)),
        click.option("--subcategory", multiple=True,
                     type=click.Choice(["atomic", "composed", "noisy", "corrupted", "approximated"])),
        click.option("--limit", type=int, help="Take only the first N selected functions."),
        click.option("--jobs", type=int, default=1, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True, help="Interpreter seed."),
        click.option("--nonce", type=int, default=0, show_default=True, help="Session noise stream."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


@cli.command()
@_selection_options
@click.option("--interpreter", type=click.Choice(INTERPRETER_CHOICES), default="ref", show_default=True,
              help="ref picks the reference interpreter of each function's category.")
@_agent_options
def interpret(dataset, out, budget, ids, category, subcategory, limit, jobs, seed, nonce, interpreter,
              mode, max_turns, exemplar_path, prompt_path, transcripts,
              endpoint, model, credential_env, temperature, rate, timeout) -> None:
    """Interpret functions with a reference interpreter or the LM agent."""
    endpoint_kw = dict(endpoint=endpoint, model=model, credential_env=credential_env, temperature=temperature,
                       rate=rate, timeout=timeout)
    agent_kw = dict(mode=mode, max_turns=max_turns, exemplar_path=exemplar_path, prompt_path=prompt_path)
    _interpret_common(dataset, out, interpreter, budget, ids, category, subcategory, limit, jobs, seed, nonce,
                      endpoint_kw, agent_kw, transcripts)


@cli.command("agent")
@_selection_options
@_agent_options
@click.option("--replay", "replay_path", type=click.Path(exists=True, dir_okay=False),
              help="Check a stored transcript file instead of running dialogues.")
def agent_(dataset, out, budget, ids, category, subcategory, limit, jobs, seed, nonce,
           mode, max_turns, exemplar_path, prompt_path, transcripts,
           endpoint, model, credential_env, temperature, rate, timeout, replay_path) -> None:
    """Run LM-agent dialogues against a chat endpoint (or verify a transcript replay)."""
    if replay_path:
        ds = _load(dataset)
        bad = 0
        trs = agent.read_transcripts(replay_path)
        for tr in trs:
            lines = agent.replay(tr, open_session(ds, tr.function_id, nonce=nonce))
            if lines != tr.responses:
                bad += 1
                click.echo(f"{tr.function_id}: replay differs", err=True)
        if bad:
            raise click.ClickException(f"{bad} of {len(trs)} transcripts do not replay")
        click.echo(f"{len(trs)} transcripts replay exactly")
        return
    endpoint_kw = dict(endpoint=endpoint, model=model, credential_env=credential_env, temperature=temperature,
                       rate=rate, timeout=timeout)
    agent_kw = dict(mode=mode, max_turns=max_turns, exemplar_path=exemplar_path, prompt_path=prompt_path)
    transcripts = transcripts or str(Path(out).with_suffix(".transcripts.jsonl"))
    _interpret_common(dataset, out, "lm-agent", budget, ids, category, subcategory, limit, jobs, seed, nonce,
                      endpoint_kw, agent_kw, transcripts)


# ---------------------------------------------------------------------------
# evaluate / report


@cli.command()
@click.option("--dataset", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--interpretations", type=click.Path(dir_okay=False), help="Interpretations JSONL.")
@click.option("--ground-truth", is_flag=True, help="Score the generator's own answers (smoke run).")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Report JSON.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), help="Also write the aggregate table as CSV.")
@click.option("--judge", type=click.Choice(JUDGES), default="simulation", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="Unit-test sampling seed.")
@click.option("--trials", type=int, default=evaluator.UNIT_TEST_TRIALS, show_default=True)
@_endpoint_options
def evaluate(dataset, interpretations, ground_truth, out, csv_path, judge, seed, trials,
             endpoint, model, credential_env, temperature, rate, timeout) -> None:
    """Score interpretations and write a report."""
    if bool(interpretations) == ground_truth:
        raise click.UsageError("give exactly one of --interpretations and --ground-truth")
    if trials < 1:
        raise click.UsageError("--trials must be positive")
    RunConfig(dataset=dataset, seed=seed, judge=judge,
              outputs={k: v for k, v in (("out", out), ("csv", csv_path), ("in", interpretations)) if v}).validate()
    complete = None
    if judge == "endpoint":
        config = _agent_config(endpoint, model, credential_env, temperature, rate, timeout)
        complete = agent.HttpChatClient(config).complete
    ds = _load(dataset)
    try:
        if ground_truth:
            its = [evaluator.ground_truth_interpretation(s) for s in ds.manifest.specs]
        else:
            its = read_jsonl(interpretations)
        report = evaluator.evaluate(ds, its, judge=judge, seed=seed, trials=trials, complete=complete)
    except (InterpretationError, evaluator.EvaluationError, SessionError) as exc:
        raise click.ClickException(str(exc)) from exc
    evaluator.write_report(report, out, csv_path)
    click.echo(f"wrote report for {len(its)} functions to {out}")
    _print_table(report)


def _print_table(report: evaluator.EvalReport) -> None:
    for key, cell in report.aggregates.items():
        click.echo(f"  {key:<40} n={cell['n']:<5} rate={cell['rate']:.4f}")


@cli.command()
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["text", "csv", "json"]), default="text", show_default=True)
def report(path, fmt) -> None:
    """Print a stored report after checking its aggregates against its records."""
    try:
        rep = evaluator.load_report(path)
        fresh = evaluator.aggregate(rep.records)
    except (OSError, ValueError, KeyError, TypeError, evaluator.EvaluationError) as exc:
        raise click.ClickException(f"cannot read report {path}: {exc}") from exc
    if fresh != rep.aggregates:
        raise click.ClickException(f"{path}: aggregates do not match records")
    if fmt == "json":
        click.echo(json.dumps(rep.aggregates, indent=1, sort_keys=True))
    elif fmt == "csv":
        click.echo(evaluator.report_csv(rep), nl=False)
    else:
        meta = rep.meta
        click.echo(f"seed {meta.get('seed')}  judge {meta.get('judge')}  engine {meta.get('engine_version')}")
        _print_table(rep)


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, prog_name="findbench", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
