"""Command-line interface for the screening-dialogue pipeline."""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import click
import numpy as np
import yaml

from . import agent as agent_mod
from . import classifier as clf
from . import harness, nnet
from .cohort import load_transcripts, save_transcripts, transcripts_by_user
from .env import DialogueEnv
from .simulator import SimulatorConfig, load_simulator


def _load_config(path: str | None, seed: int | None) -> harness.ExperimentConfig:
    if path is None:
        config = harness.ExperimentConfig()
    else:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        config = harness.ExperimentConfig.from_dict(doc)
    if seed is not None:
        config.master_seed = seed
    return config


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML/JSON experiment config file.")
@click.option("--seed", type=int, default=None, help="Master seed override.")
@click.option("--out", "out_dir", type=click.Path(), default="out", help="Output directory.")
@click.pass_context
def main(ctx, config_path, seed, out_dir):
    """Train a question-asking agent against per-user response simulators and
    evaluate screening accuracy under turn budgets."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = _load_config(config_path, seed)
    ctx.obj["out"] = out_dir
    os.makedirs(out_dir, exist_ok=True)


@main.command("gen-cohort")
@click.pass_context
def gen_cohort(ctx):
    """Generate the synthetic cohort and write transcripts.jsonl."""
    config: harness.ExperimentConfig = ctx.obj["config"]
    catalog = harness.build_catalog(config)
    _, transcripts, labels = harness.build_world(config, catalog)
    path = os.path.join(ctx.obj["out"], "transcripts.jsonl")
    save_transcripts(transcripts, labels, path)
    click.echo(f"wrote {len(transcripts)} conversations for {len(labels)} users to {path}")


@main.command("train-sim")
@click.pass_context
def train_sim(ctx):
    """Fit one response simulator per user from the stored transcripts."""
    config: harness.ExperimentConfig = ctx.obj["config"]
    catalog = harness.build_catalog(config)
    out = ctx.obj["out"]
    transcripts, labels = load_transcripts(os.path.join(out, "transcripts.jsonl"))
    by_user = transcripts_by_user(transcripts)
    simulators = harness.fit_all_simulators(by_user, catalog, config.sim, config.master_seed)
    harness.save_pipeline(out, config, transcripts, labels, simulators)
    click.echo(f"fit {len(simulators)} simulators; manifest at {out}/manifest.json")


@main.command("train-clf")
@click.pass_context
def train_clf(ctx):
    """Fit the screening classifier on all users' full-corpus averages."""
    config: harness.ExperimentConfig = ctx.obj["config"]
    out = ctx.obj["out"]
    cfg, transcripts, labels, simulators, _, qnet = harness.load_pipeline(
        os.path.join(out, "manifest.json")
    )
    by_user = transcripts_by_user(transcripts)
    features = harness.user_average_features(by_user)
    ids = sorted(labels)
    model = harness.fit_split_classifier(features, labels, ids, config, 0)
    harness.save_pipeline(out, config, transcripts, labels, simulators, model, qnet)
    click.echo(f"classifier fit on {len(ids)} users")


@main.command("train-agent")
@click.pass_context
def train_agent(ctx):
    """Train the question-asking agent against the stored simulators."""
    config: harness.ExperimentConfig = ctx.obj["config"]
    out = ctx.obj["out"]
    _, transcripts, labels, simulators, model, _ = harness.load_pipeline(
        os.path.join(out, "manifest.json")
    )
    if model is None:
        raise click.ClickException("no classifier in manifest; run train-clf first")
    catalog = harness.build_catalog(config)
    ids = sorted(labels)
    result = harness.train_split_agent(
        simulators, labels, ids, transcripts, model, catalog, config, 0
    )
    harness.save_pipeline(out, config, transcripts, labels, simulators, model, result.qnet)
    returns = [rec["return"] for rec in result.curve]
    click.echo(
        f"trained over {len(result.curve)} episodes; "
        f"mean return last 10%: {np.mean(returns[-max(1, len(returns) // 10):]):.1f}"
    )


@main.command("eval")
@click.pass_context
def eval_cmd(ctx):
    """Run the full split-based experiment and write metrics + figures."""
    config: harness.ExperimentConfig = ctx.obj["config"]
    catalog = harness.build_catalog(config)
    report = harness.run_experiment(config, progress=click.echo)
    harness.write_outputs(report, catalog, ctx.obj["out"])
    top = max(config.turn_constraints)
    mean, std = report.mean_std("rl", top)
    click.echo(f"adaptive policy @ {top} turns: AUC {mean['auc']:.3f} ± {std['auc']:.3f}")


@main.command("report")
@click.pass_context
def report_cmd(ctx):
    """Re-render figures and summary tables from a stored report.json."""
    out = ctx.obj["out"]
    path = os.path.join(out, "report.json")
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for which in ("rl", "corpus"):
        for t, cell in sorted(doc["summary"][which].items(), key=lambda kv: int(kv[0])):
            click.echo(
                f"{which:>6} @ {t:>3}: AUC {cell['mean']['auc']:.3f} ± {cell['std']['auc']:.3f}"
            )


@main.command("interview")
@click.option("--user", "user_id", type=int, default=None,
              help="Interview a stored user simulator by id.")
@click.option("--embedder-cmd", default=None,
              help="External embedder command (text line in, c floats out).")
@click.option("--budget", type=int, default=None, help="Max questions before goodbye.")
@click.pass_context
def interview_cmd(ctx, user_id, embedder_cmd, budget):
    """Interactive session: the agent asks, a responder answers."""
    config: harness.ExperimentConfig = ctx.obj["config"]
    out = ctx.obj["out"]
    _, _, _, simulators, model, qnet = harness.load_pipeline(os.path.join(out, "manifest.json"))
    if model is None or qnet is None:
        raise click.ClickException("manifest must contain a classifier and a trained agent")
    catalog = harness.build_catalog(config)
    if user_id is not None:
        responder = simulators[user_id]
    elif embedder_cmd:
        responder = harness.ExternalEmbedder(
            embedder_cmd.split(), catalog, model.c, config.sim.hidden
        )
    else:
        raise click.ClickException("pass --user or --embedder-cmd")
    session = harness.interview(
        qnet, model, catalog, responder, config.env, budget=budget, emit=click.echo
    )
    label = "positive (MCI)" if session["prediction"] == 1 else "negative (normal aging)"
    click.echo(f"final prediction: {label}")
    if embedder_cmd:
        responder.close()


if __name__ == "__main__":
    main()
