"""Command line: train toy models, run the two attacks, audit a quantization setting.

Every command takes ``--config FILE``, a flat JSON object whose keys are
option names (dashes or underscores); flags given on the command line win.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from .attacks import (
    LanguagePrior,
    RecoveryConfig,
    profile_purity,
    run_cls_attack,
    run_llm_attack,
    summarize_llm,
    write_cls_csv,
    write_results_csv,
)
from .attacks.classification import PROBE_STRATEGIES, RANKING_STRATEGIES
from .attacks.recovery import ACCESS_MODES, PRIOR_SOURCES
from .audit import expected_verdict, format_table, measure_leak, table_csv, table_rows
from .engine import FULL, TOP1, SessionTemplate
from .models import (
    ClassifierSpec,
    CharVocab,
    Corpus,
    MLPClassifier,
    ModelFormatError,
    TransformerLM,
    TransformerSpec,
    blob_splits,
    load_idx_dataset,
    load_model,
    save_model,
)
from .quant import QuantConfig
from .tensor import Rng

LM_PRESETS = {"lm": {}}
CLS_PRESETS = {f"cls-d{d}": {"depth": d} for d in (3, 18, 50)}
DEFAULT_STEPS = {"lm": 3000, "classifier": 1500}


def _load_config(ctx: click.Context, param, value):
    if not value:
        return
    try:
        data = json.loads(Path(value).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.BadParameter(f"cannot read config: {exc}", ctx=ctx, param=param)
    if not isinstance(data, dict):
        raise click.BadParameter("config must be a flat JSON object", ctx=ctx, param=param)
    known = {p.name for p in ctx.command.params}
    cleaned = {}
    for key, val in data.items():
        name = key.replace("-", "_")
        if name not in known or name == "config":
            raise click.BadParameter(f"unknown config key {key!r}", ctx=ctx, param=param)
        cleaned[name] = val
    ctx.default_map = {**(ctx.default_map or {}), **cleaned}


config_option = click.option(
    "--config", type=click.Path(exists=True, dir_okay=False), callback=_load_config,
    is_eager=True, expose_value=False, help="Flat JSON file of option defaults.",
)
quant_options = [
    click.option("--quant", type=click.Choice(["per-tensor", "per-token", "none"]), default="per-tensor",
                 show_default=True, help="Activation quantization granularity."),
    click.option("--format", "fmt", type=click.Choice(["int8", "fp8"]), default="int8", show_default=True,
                 help="Activation number format."),
]


def with_quant(f):
    for opt in reversed(quant_options):
        f = opt(f)
    return f


def _model(path: str, kind: type):
    try:
        model = load_model(path)
    except (OSError, ModelFormatError) as exc:
        raise click.BadParameter(str(exc), param_hint="--model")
    if not isinstance(model, kind):
        want = "language model" if kind is TransformerLM else "classifier"
        raise click.BadParameter(f"{path} is not a {want}", param_hint="--model")
    return model


def _spec_from(value: str) -> tuple[str, dict]:
    if value in LM_PRESETS:
        return "lm", dict(LM_PRESETS[value])
    if value in CLS_PRESETS:
        return "classifier", dict(CLS_PRESETS[value])
    try:
        text = Path(value).read_text() if Path(value).is_file() else value
        data = json.loads(text)
    except json.JSONDecodeError:
        choices = ", ".join([*LM_PRESETS, *CLS_PRESETS])
        raise click.BadParameter(f"expected a preset ({choices}) or a JSON object", param_hint="--spec")
    if not isinstance(data, dict) or data.get("kind") not in ("lm", "classifier"):
        raise click.BadParameter('JSON spec needs "kind": "lm" or "classifier"', param_hint="--spec")
    kind = data.pop("kind")
    return kind, data


def _classifier_data(images, labels, data_seed: int):
    """(train, test) splits: IDX files when given, else the seeded blob dataset."""
    if bool(images) != bool(labels):
        raise click.UsageError("--images and --labels go together")
    if images:
        x, y = load_idx_dataset(images, labels)
        x = x.reshape(len(x), -1).astype(np.float32)
        if x.max() > 1.0:
            x = x / 255.0
        cut = int(len(x) * 0.75)
        return (x[:cut], y[:cut]), (x[cut:], y[cut:])
    return blob_splits(data_seed)


def _echo_table(header, rows):
    click.echo(format_table(header, rows))


def _fmt(v: float, nd: int = 4) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.{nd}f}"


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Cross-batch leakage through per-tensor dynamic activation quantization."""


@main.command()
@config_option
@click.option("--spec", "spec_value", default="lm", show_default=True,
              help="Preset (lm, cls-d3, cls-d18, cls-d50) or JSON object / file with a 'kind' key.")
@click.option("--corpus", default=None, help="Text file for the LM (default: the embedded corpus).")
@click.option("--images", type=click.Path(exists=True), default=None, help="IDX image file for a classifier.")
@click.option("--labels", type=click.Path(exists=True), default=None, help="IDX label file for a classifier.")
@click.option("--data-seed", type=int, default=0, show_default=True, help="Seed of the synthetic image set.")
@click.option("--steps", type=click.IntRange(min=0), default=None, help="Optimizer steps (lm 3000, cls 1500).")
@click.option("--lr", type=click.FloatRange(min=0, min_open=True), default=None, help="Peak learning rate.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Model file to write.")
def train(spec_value, corpus, images, labels, data_seed, steps, lr, seed, out):
    """Train a char LM or a classifier and save it."""
    from .models.train import TrainingDiverged, train_char_lm, train_classifier

    kind, fields = _spec_from(spec_value)
    steps = DEFAULT_STEPS[kind] if steps is None else steps
    extra = {} if lr is None else {"lr": lr}
    try:
        if kind == "lm":
            text = Corpus.load(corpus)
            spec = TransformerSpec(vocab_size=text.vocab.size, **fields)
            res = train_char_lm(text, spec, steps, seed=seed, log=click.echo, **extra)
        else:
            (x, y), (xt, yt) = _classifier_data(images, labels, data_seed)
            fields.setdefault("input_dim", x.shape[1])
            fields.setdefault("n_classes", int(max(y.max(), yt.max())) + 1)
            spec = ClassifierSpec(**fields)
            res = train_classifier(spec, x, y, steps, seed=seed, x_eval=xt, y_eval=yt, log=click.echo, **extra)
    except (TypeError, ValueError) as exc:
        raise click.UsageError(str(exc))
    except TrainingDiverged as exc:
        raise click.ClickException(str(exc))
    save_model(res.model, out)
    rows = [["final loss", _fmt(res.final_loss)], ["eval loss", _fmt(res.eval_loss)],
            ["baseline loss", _fmt(res.baseline_loss)]]
    if res.eval_accuracy is not None:
        rows.append(["eval accuracy", _fmt(res.eval_accuracy)])
    _echo_table(["metric", "value"], rows)
    click.echo(f"saved {out}")


def _read_secrets(path: str, vocab: CharVocab) -> list[list[int]]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln]
    if not lines:
        raise click.BadParameter("no secrets in file", param_hint="--secret-file")
    try:
        return [vocab.encode(ln).tolist() for ln in lines]
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--secret-file")


@main.command("attack-llm")
@config_option
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@with_quant
@click.option("--secret-file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="One secret per line (text in the model's alphabet).")
@click.option("--sample-n", type=click.IntRange(min=1), default=None,
              help="Sample this many secrets from the corpus' held-out part.")
@click.option("--length", type=click.IntRange(min=1), default=20, show_default=True, help="Sampled secret length.")
@click.option("--corpus", default=None, help="Corpus to sample secrets from (default: embedded).")
@click.option("--prompt", default="T", show_default=True, help="Adversary prompt text.")
@click.option("--epsilon", type=click.FloatRange(min=0, min_open=True), default=1e-6, show_default=True)
@click.option("--access", type=click.Choice(ACCESS_MODES), default="white-box", show_default=True)
@click.option("--prior", type=click.Choice(PRIOR_SOURCES), default="model", show_default=True)
@click.option("--budget", type=click.IntRange(min=1), default=None, help="Max queries per token.")
@click.option("--timeout", type=click.FloatRange(min=0, min_open=True), default=60.0, show_default=True,
              help="Wall-clock seconds per secret.")
@click.option("--observe", type=click.Choice([TOP1, FULL]), default=TOP1, show_default=True)
@click.option("--batch-size", type=click.IntRange(min=2), default=2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-csv", type=click.Path(dir_okay=False), default=None)
@click.option("--timing/--no-timing", default=False, help="Write measured per-token milliseconds to the CSV.")
def attack_llm(model_path, quant, fmt, secret_file, sample_n, length, corpus, prompt, epsilon, access, prior,
               budget, timeout, observe, batch_size, seed, out_csv, timing):
    """Recover co-batched secrets token by token from the adversary's outputs."""
    if (secret_file is None) == (sample_n is None):
        raise click.UsageError("give exactly one of --secret-file and --sample-n")
    model = _model(model_path, TransformerLM)
    if not model.vocab:
        raise click.UsageError("model file carries no vocabulary")
    vocab = CharVocab(model.vocab)
    text = None
    if sample_n is not None or prior == "unigram-initial":
        src = Corpus.load(corpus)
        text = Corpus(src.text, vocab)
    rng = Rng(seed)
    secrets = _read_secrets(secret_file, vocab) if secret_file else text.sample_secrets(sample_n, length, rng.spawn(0))
    try:
        prompt_ids = tuple(vocab.encode(prompt).tolist())
        template = SessionTemplate(model, QuantConfig.parse(quant, fmt), prompt_ids, batch_size, observe, seed)
        rcfg = RecoveryConfig(epsilon, budget, prior, access, timeout)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    room = model.spec.max_seq_len - len(prompt_ids) + 1
    if max(len(s) for s in secrets) > room:
        raise click.UsageError(f"secrets longer than {room} tokens do not fit the model context")
    if quant != "per-tensor":
        click.echo(f"warning: {quant} quantization shares no statistics across rows; "
                   "expect chance-level recovery", err=True)
    lp = LanguagePrior(model, prior, None if text is None else text.initial_distribution())
    results = run_llm_attack(template, secrets, rcfg, lp)
    if out_csv:
        write_results_csv(out_csv, results, with_timing=timing)
    s = summarize_llm(results)
    V = model.spec.vocab_size
    _echo_table(["runs", "completed", "accuracy", "chance", "mean queries", "|V|/2"],
                [[s.runs, s.completed, _fmt(s.accuracy), _fmt(s.chance), _fmt(s.mean_queries, 2), V / 2]])
    if s.position_queries:
        click.echo("")
        _echo_table(["position", "mean queries"], [[i + 1, _fmt(q, 2)] for i, q in enumerate(s.position_queries)])


@main.command("attack-cls")
@config_option
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@with_quant
@click.option("--candidates", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--include-secret/--exclude-secret", default=True, show_default=True,
              help="Whether the secret itself is among the candidates.")
@click.option("--probe", type=click.Choice(PROBE_STRATEGIES), default="layer-diverse", show_default=True)
@click.option("--pool-size", type=click.IntRange(min=1), default=50, show_default=True,
              help="Dataset samples in the probe pool (a blank input is always added).")
@click.option("--rank", type=click.Choice(RANKING_STRATEGIES), default="top1", show_default=True,
              help="How a class is read off the candidate ranking.")
@click.option("--runs", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--knn-k", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--knn-samples", type=click.IntRange(min=0), default=500, show_default=True,
              help="Test samples whose scale profiles feed the purity metric (0 skips it).")
@click.option("--images", type=click.Path(exists=True), default=None)
@click.option("--labels", type=click.Path(exists=True), default=None)
@click.option("--data-seed", type=int, default=0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-csv", type=click.Path(dir_okay=False), default=None)
def attack_cls(model_path, quant, fmt, candidates, include_secret, probe, pool_size, rank, runs, knn_k,
               knn_samples, images, labels, data_seed, seed, out_csv):
    """Rank candidate inputs by how well they reproduce a probe's co-batched output."""
    model = _model(model_path, MLPClassifier)
    _, (x, y) = _classifier_data(images, labels, data_seed)
    if x.shape[1] != model.spec.input_dim:
        raise click.UsageError(f"data has {x.shape[1]} features, model expects {model.spec.input_dim}")
    cfg = QuantConfig.parse(quant, fmt)
    try:
        res = run_cls_attack(model, cfg, x, y, candidates=candidates, include_secret=include_secret, probe=probe,
                             runs=runs, pool_size=pool_size, rank=rank, seed=seed)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    if out_csv:
        write_cls_csv(out_csv, res)
    hits = sum(r.correct for r in res)
    if include_secret:
        _echo_table(["runs", "exact recovery", "rate"], [[runs, f"{hits}/{runs}", _fmt(hits / runs)]])
        return
    n_classes = len(np.unique(y))
    rows = [["runs", runs], ["class accuracy", _fmt(hits / runs)], ["baseline", _fmt(1 / n_classes)]]
    if knn_samples:
        sub = slice(pool_size, pool_size + knn_samples)
        pur = profile_purity(model, cfg, x[sub], y[sub], knn_k)
        rows += [[f"knn purity (k={knn_k})", _fmt(pur.overall)], ["purity baseline", _fmt(pur.baseline)]]
        rows += [[f"  class {c}", _fmt(v)] for c, v in pur.per_class.items()]
    _echo_table(["metric", "value"], rows)


@main.command()
@config_option
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@with_quant
@click.option("--trials", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-csv", type=click.Path(dir_okay=False), default=None, help="Write the framework table here.")
def audit(model_path, quant, fmt, trials, seed, out_csv):
    """Measure cross-row leakage; exit status 1 when rows leak."""
    try:
        model = load_model(model_path)
    except (OSError, ModelFormatError) as exc:
        raise click.BadParameter(str(exc), param_hint="--model")
    report = measure_leak(model, QuantConfig.parse(quant, fmt), trials, Rng(seed))
    _echo_table(["field", "value"], report.rows() + [("expected", expected_verdict(quant))])
    click.echo("")
    _echo_table(["framework", "configuration", "precision", "setting", "granularity", "vulnerable"], table_rows())
    if out_csv:
        Path(out_csv).write_text(table_csv())
    sys.exit(1 if report.verdict == "leaks" else 0)


if __name__ == "__main__":
    main()
