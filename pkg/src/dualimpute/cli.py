"""Command-line client for the imputation engine.

Each subcommand builds the same request models the HTTP service accepts
and runs them in-process by default; pass --server to send them to a
running service instead. Exit codes: 0 success, 2 configuration error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import csv
import functools
import json
import sys

import click
import numpy as np

from . import __version__
from .data import DataMatrix, compute_mask, load_csv, save_csv
from .errors import ConfigError, DataError, NumericalError
from .service import handlers
from .service import schemas as sc

_HANDLERS = {
    "/mask": (handlers.do_mask, sc.MaskResponse),
    "/synth": (handlers.do_synth, sc.SynthResponse),
    "/train": (handlers.do_train, sc.TrainResponse),
    "/impute": (handlers.do_impute, sc.ImputeResponse),
    "/evaluate": (handlers.do_evaluate, sc.EvaluateResponse),
    "/benchmark": (handlers.do_benchmark, sc.BenchmarkResponse),
}


def _call(ctx, path: str, request):
    """Dispatch a request in-process or to --server."""
    server = ctx.obj.get("server")
    handler, response_cls = _HANDLERS[path]
    if not server:
        return handler(request)
    import httpx

    resp = httpx.post(server.rstrip("/") + path,
                      json=json.loads(request.model_dump_json()),
                      timeout=None)
    if resp.status_code == 422:
        raise ConfigError(json.dumps(resp.json()))
    if resp.status_code == 400:
        raise DataError(json.dumps(resp.json()))
    if resp.status_code >= 500:
        raise NumericalError(json.dumps(resp.json()))
    return response_cls.model_validate(resp.json())


def exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:  # includes ContractError
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except DataError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(3)
        except NumericalError as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(4)

    return wrapper


def _load_config_dict(ctx) -> dict:
    path = ctx.obj.get("config")
    if not path:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None


def _require_out(ctx) -> str:
    out = ctx.obj.get("out")
    if not out:
        raise ConfigError("this command needs --out (global flag)")
    return out


def _matrix_from_csv(path, label_col=None):
    x, labels = load_csv(path, label_col=label_col)
    return x, labels


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file; schema depends on the subcommand.")
@click.option("--seed", type=int, default=None, help="Override config seed.")
@click.option("--threads", type=int, default=None,
              help="Parallel method execution for benchmark.")
@click.option("--out", type=click.Path(), default=None,
              help="Output path (or prefix for multi-file outputs).")
@click.option("--server", envvar="DUALIMPUTE_SERVER", default=None,
              help="Base URL of a running service; default runs in-process.")
@click.pass_context
def main(ctx, config_path, seed, threads, out, server):
    """Dual-path missing-data imputation toolkit."""
    ctx.obj = {"config": config_path, "seed": seed, "threads": threads,
               "out": out, "server": server}


@main.command()
@click.option("--rows", type=int, default=1000)
@click.option("--cols", type=int, default=8)
@click.option("--corr-kind", type=click.Choice(["ar1", "exchangeable", "identity"]),
              default="ar1")
@click.option("--rho", type=float, default=0.6)
@click.option("--label-col", default="label")
@click.pass_context
@exit_codes
def synth(ctx, rows, cols, corr_kind, rho, label_col):
    """Generate a complete synthetic dataset with binary labels."""
    raw = _load_config_dict(ctx)
    spec = sc.SynthDataset.model_validate(raw) if raw else sc.SynthDataset(
        rows=rows, cols=cols,
        corr=sc.SynthDataset().corr.model_copy(update={"kind": corr_kind, "rho": rho}))
    req = sc.SynthRequest(spec=spec, seed=ctx.obj.get("seed") or 0)
    resp = _call(ctx, "/synth", req)
    out = _require_out(ctx)
    x = DataMatrix(sc.matrix_to_numpy(resp.data), resp.columns)
    from .data import LabelVector

    save_csv(x, out, LabelVector(np.asarray(resp.labels)), label_col=label_col)
    click.echo(f"wrote {out} ({len(resp.data)} rows, {len(resp.columns)} columns)")


@main.command()
@click.option("--input", "input_path", type=click.Path(exists=True), required=True)
@click.option("--mechanism", type=click.Choice(["MCAR", "MAR", "MNAR"]),
              default=None)
@click.option("--label-col", default=None)
@click.option("--mask-out", type=click.Path(), default=None,
              help="Also write the 0/1 mask as CSV.")
@click.pass_context
@exit_codes
def mask(ctx, input_path, mechanism, label_col, mask_out):
    """Hide cells of a CSV under a synthetic missingness mechanism."""
    raw = _load_config_dict(ctx)
    if mechanism:
        raw["mechanism"] = mechanism
    spec = sc.MaskSpecConfig.model_validate(raw) if raw else sc.MaskSpecConfig()
    x, labels = _matrix_from_csv(input_path, label_col)
    req = sc.MaskRequest(data=sc.numpy_to_matrix(x.values),
                         columns=list(x.column_names), spec=spec,
                         seed=ctx.obj.get("seed") or 0)
    resp = _call(ctx, "/mask", req)
    out = _require_out(ctx)
    masked = DataMatrix(sc.matrix_to_numpy(resp.data), list(x.column_names))
    save_csv(masked, out, labels, label_col=label_col or "label")
    if mask_out:
        with open(mask_out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(x.column_names)
            writer.writerows(resp.mask)
    kept = sum(sum(r) for r in resp.mask)
    total = len(resp.mask) * len(resp.mask[0])
    click.echo(f"wrote {out} (missing rate {1 - kept / total:.3f})")


@main.command()
@click.option("--input", "input_path", type=click.Path(exists=True), required=True)
@click.option("--label-col", default=None)
@click.pass_context
@exit_codes
def train(ctx, input_path, label_col):
    """Fit the dual-path model on complete data; write a checkpoint."""
    raw = _load_config_dict(ctx)
    cfg = sc.TrainServiceConfig.model_validate(raw) if raw else sc.TrainServiceConfig()
    if ctx.obj.get("seed") is not None:
        cfg = cfg.model_copy(update={"seed": ctx.obj["seed"]})
    x, labels = _matrix_from_csv(input_path, label_col)
    req = sc.TrainRequest(
        data=sc.numpy_to_matrix(x.values), columns=list(x.column_names),
        labels=[float(v) for v in labels.y] if labels is not None else None,
        config=cfg)
    resp = _call(ctx, "/train", req)
    out = _require_out(ctx)
    with open(out, "w") as fh:
        json.dump(resp.checkpoint, fh, sort_keys=True)
    last = resp.history[-1] if resp.history else {}
    click.echo(f"wrote {out} (epochs {len(resp.history)}, "
               f"final loss {last.get('total', 'n/a')})")


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--input", "input_path", type=click.Path(exists=True), required=True)
@click.option("--label-col", default=None)
@click.option("--k", "k_passes", type=int, default=10,
              help="Stochastic passes for the uncertainty sidecar.")
@click.pass_context
@exit_codes
def impute(ctx, checkpoint, input_path, label_col, k_passes):
    """Complete a CSV with a trained checkpoint.

    Writes <out>, plus provenance / uncertainty / prediction sidecars
    next to it.
    """
    with open(checkpoint) as fh:
        payload = json.load(fh)
    x, labels = _matrix_from_csv(input_path, label_col)
    req = sc.ImputeRequest(checkpoint=payload,
                           data=sc.numpy_to_matrix(x.values),
                           columns=list(x.column_names), k_passes=k_passes)
    resp = _call(ctx, "/impute", req)
    out = _require_out(ctx)
    base = out[:-4] if out.endswith(".csv") else out
    imputed = DataMatrix(sc.matrix_to_numpy(resp.imputed), list(x.column_names))
    save_csv(imputed, out if out.endswith(".csv") else f"{base}.csv", labels,
             label_col=label_col or "label")
    with open(f"{base}.provenance.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(x.column_names)
        writer.writerows(resp.provenance)
    unc = DataMatrix(sc.matrix_to_numpy(resp.uncertainty), list(x.column_names))
    save_csv(unc, f"{base}.uncertainty.csv")
    with open(f"{base}.predictions.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["prediction", "variance"])
        writer.writerows(zip(resp.predictions, resp.prediction_variance))
    click.echo(f"wrote {base}.csv with sidecars "
               f"(path fractions {resp.path_fractions})")


@main.command()
@click.option("--truth", "truth_path", type=click.Path(exists=True), required=True)
@click.option("--imputed", "imputed_path", type=click.Path(exists=True), required=True)
@click.option("--original", "original_path", type=click.Path(exists=True),
              required=True, help="Incomplete CSV defining which cells were missing.")
@click.option("--label-col", default=None)
@click.option("--scores", "scores_path", type=click.Path(exists=True), default=None,
              help="Single-column CSV of per-row scores for AUROC.")
@click.pass_context
@exit_codes
def evaluate(ctx, truth_path, imputed_path, original_path, label_col, scores_path):
    """Score an imputation against ground truth (RMSE, optional AUROC)."""
    truth, labels = _matrix_from_csv(truth_path, label_col)
    imputed, _ = _matrix_from_csv(imputed_path, label_col)
    original, _ = _matrix_from_csv(original_path, label_col)
    bits = compute_mask(original).bits
    scores = None
    if scores_path:
        with open(scores_path) as fh:
            rows = list(csv.reader(fh))
        scores = [float(r[0]) for r in rows[1:]]
    req = sc.EvaluateRequest(
        truth=sc.numpy_to_matrix(truth.values),
        imputed=sc.numpy_to_matrix(imputed.values),
        mask=bits.tolist(),
        labels=[float(v) for v in labels.y] if labels is not None and scores else None,
        scores=scores)
    resp = _call(ctx, "/evaluate", req)
    payload = {"rmse": resp.rmse, "auroc": resp.auroc}
    out = ctx.obj.get("out")
    if out:
        with open(out, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
    click.echo(json.dumps(payload, sort_keys=True))


@main.command()
@click.option("--csv", "csv_path", type=click.Path(), default=None,
              help="Also write the flat CSV table.")
@click.pass_context
@exit_codes
def benchmark(ctx, csv_path):
    """Run the full method comparison described by --config."""
    raw = _load_config_dict(ctx)
    if not raw:
        raise ConfigError("benchmark requires --config")
    from .harness.config import run_config_from_dict

    rc = run_config_from_dict(raw)
    if ctx.obj.get("seed") is not None:
        rc = rc.model_copy(update={"seed": ctx.obj["seed"]})
    if ctx.obj.get("threads") is not None:
        rc = rc.model_copy(update={"threads": ctx.obj["threads"]})
    resp = _call(ctx, "/benchmark", sc.BenchmarkRequest(config=rc))
    report = resp.report
    out = ctx.obj.get("out") or rc.output.report_json
    if out:
        with open(out, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
        click.echo(f"wrote {out}")
    csv_out = csv_path or rc.output.report_csv
    if csv_out:
        from .harness.benchmark import BenchmarkReport

        with open(csv_out, "w") as fh:
            fh.write(BenchmarkReport.from_dict(report).to_csv())
    for label, res in report["methods"].items():
        line = (f"{label}: rmse={res['rmse']}" if res.get("error") is None
                else f"{label}: FAILED ({res['error']})")
        if res.get("auroc") is not None:
            line += f" auroc={res['auroc']:.4f}"
        click.echo(line)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@exit_codes
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
