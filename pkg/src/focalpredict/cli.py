"""Command-line entry point.

Exit codes: 0 success, 1 bad configuration or inputs, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, analysis
from .config import PipelineConfig, load_config
from .dataset import build_epochs
from .evaluation import RandomPredictorParams, random_predictor_bounds, write_report_csv
from .ingest import EdfError, read_edf
from .network import GridSearchResult, grid_search, load_checkpoint, save_checkpoint
from .pipeline import (
    build_report, evaluate_tensor, kl_change_point, preprocess, to_tensor, train_model,
)
from .predictor import write_trace_csv
from .synth import SynthSpec, write_synthetic
from .wavelet import WaveletTensor, load_tensor, save_tensor

log = logging.getLogger("focalpredict")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2
TENSOR_SUFFIX = ".fpwt"


class InputError(Exception):
    """Bad configuration or inputs; maps to exit code 1."""


# --------------------------------------------------------------------------
# inputs
# --------------------------------------------------------------------------


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _sidecar_onset(path: Path) -> Optional[float]:
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        return None
    with open(sidecar, encoding="utf-8") as fh:
        onset = json.load(fh).get("onset_time")
    return None if onset is None else float(onset)


def _expand(inputs: Sequence[str]) -> list[Path]:
    paths = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(q for q in p.iterdir()
                                if q.suffix.lower() in (".edf", TENSOR_SUFFIX)))
        elif p.exists():
            paths.append(p)
        else:
            raise InputError(f"input not found: {item}")
    return paths


def _load_tensor(path: Path, config: PipelineConfig) -> WaveletTensor:
    """EDF files are preprocessed and transformed; tensor caches load as-is.
    A ``<stem>.json`` sidecar next to an EDF supplies the onset time."""
    try:
        if path.suffix == TENSOR_SUFFIX:
            return load_tensor(path, recording_id=path.stem)
        rec = read_edf(path)
        onset = _sidecar_onset(path)
        if onset is not None:
            if not 0 <= onset < rec.duration:
                raise InputError(f"{path}: onset {onset} outside the recording")
            rec.onset_time = onset
        rec.recording_id = path.stem
        return to_tensor(preprocess(rec, config), config)
    except (EdfError, OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def _role(tensor: WaveletTensor, default: str) -> str:
    return "interictal" if tensor.onset_time is None else default


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------


class Run:
    """Collects what a command read and wrote, then writes manifest.json."""

    def __init__(self, command: str, config: PipelineConfig, out: Path):
        self.command = command
        self.config = config
        self.out = out
        self.started = _now()
        self.inputs: list[dict] = []
        self.outputs: list[str] = []

    def add_input(self, path: Path, role: str) -> None:
        self.inputs.append({"path": str(path), "role": role, "sha256": _sha256(path)})

    def output(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def write_manifest(self) -> None:
        manifest = {
            "command": self.command,
            "version": __version__,
            "seed": self.config.seed,
            "config": self.config.as_dict(),
            "inputs": self.inputs,
            "output_dir": str(self.out),
            "outputs": self.outputs,
            "started": self.started,
            "finished": _now(),
        }
        with open(self.out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _tensors(args, run: Run, role: str) -> list[WaveletTensor]:
    paths = _expand(args.inputs)
    if not paths:
        raise InputError("no input recordings")
    tensors = []
    for p in paths:
        t = _load_tensor(p, run.config)
        run.add_input(p, _role(t, role))
        tensors.append(t)
    return tensors


def _model(args, run: Run):
    if not args.model:
        raise InputError("--model is required")
    path = Path(args.model)
    try:
        params, _ = load_checkpoint(path)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    run.add_input(path, "model")
    return params


def _check_shape(params, tensor: WaveletTensor, config: PipelineConfig) -> None:
    width = int(round(config.epoch_length * tensor.sampling_rate))
    shape = (tensor.coefficients.shape[1], width, tensor.coefficients.shape[2])
    if tuple(params.plan.input_shape) != shape:
        raise InputError(f"{tensor.recording_id}: epoch shape {shape} does not match "
                         f"the model input {tuple(params.plan.input_shape)}")


def cmd_synth(args, run: Run) -> None:
    if args.count < 1:
        raise InputError("--count must be >= 1")
    for i in range(args.count):
        onset = None if args.onset < 0 else args.onset
        spec = SynthSpec(
            duration=args.duration, onset_time=onset,
            transition_time=None if onset is None else onset - args.transition_lead,
            channels=args.channels, sampling_rate=args.sampling_rate,
            seed=run.config.seed + i, theta_start_uv=args.theta_start,
            theta_end_uv=args.theta_end, recording_id=f"{args.prefix}{i:02d}",
        )
        try:
            spec.validate()
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        stem = f"{args.prefix}{i:02d}"
        write_synthetic(run.out / stem, spec)
        run.outputs += [f"{stem}.edf", f"{stem}.json"]


def cmd_ingest(args, run: Run) -> None:
    for t in _tensors(args, run, "test"):
        save_tensor(run.output(f"{t.recording_id}{TENSOR_SUFFIX}"), t)


def cmd_train(args, run: Run) -> None:
    tensors = _tensors(args, run, "train")
    params, history = train_model(tensors, run.config)
    save_checkpoint(run.output("model.ckpt"), params, run.config)
    with open(run.output("history.json"), "w", encoding="utf-8") as fh:
        json.dump({"train_loss": history.train_loss, "val_loss": history.val_loss,
                   "best_pass": history.best_pass}, fh, indent=2)
    print(f"best pass {history.best_pass}, validation loss {history.best_val_loss:.4f}")


def cmd_gridsearch(args, run: Run) -> None:
    tensors = _tensors(args, run, "train")
    k = min(run.config.folds, len({t.recording_id for t in tensors}))
    if k < 2:
        raise InputError("grid search needs at least two recordings")
    result: GridSearchResult = grid_search(run.config.candidates(), tensors, k)
    rows = [{"epoch_length": c.epoch_length, "overlap": c.overlap,
             "preictal_length": c.preictal_length, "mean_loss": m, "fold_losses": f}
            for c, m, f in zip(run.config.candidates(), result.mean_losses, result.fold_losses)]
    best = result.best
    with open(run.output("gridsearch.json"), "w", encoding="utf-8") as fh:
        json.dump({"candidates": rows,
                   "selected": {"epoch_length": best.epoch_length, "overlap": best.overlap,
                                "preictal_length": best.preictal_length}}, fh, indent=2)
    with open(run.output("selected.cfg"), "w", encoding="utf-8") as fh:
        fh.write(best.to_text())
    print(f"selected e={best.epoch_length:g} o={best.overlap:g} l={best.preictal_length:g}")


def cmd_predict(args, run: Run) -> list:
    params = _model(args, run)
    results = []
    for t in _tensors(args, run, "test"):
        _check_shape(params, t, run.config)
        r = evaluate_tensor(params, t, run.config)
        write_trace_csv(run.output(f"trace_{t.recording_id}.csv"), r.trace)
        results.append(r)
    return results


def cmd_evaluate(args, run: Run) -> None:
    results = cmd_predict(args, run)
    sop = None if args.sop_minutes is None else args.sop_minutes / 60.0
    report = build_report(results, run.config, sop_hours=sop, n_features=args.features,
                          alpha_sig=args.alpha_sig)
    with open(run.output("report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    write_report_csv(run.output("report.csv"), [r.score for r in results],
                     report.auc_per_recording)
    print(report.to_json())


def cmd_analyze_kl(args, run: Run) -> None:
    params = _model(args, run)
    for t in _tensors(args, run, "test"):
        _check_shape(params, t, run.config)
        result = kl_change_point(params, t, run.config)
        epochs = build_epochs(t, run.config)
        analysis.write_kl_csv(run.output(f"kl_{t.recording_id}.csv"), epochs.start_times,
                              result.divergence)
        when = "none" if result.detection_time is None else f"{result.detection_time:g}"
        print(f"{t.recording_id} threshold {result.threshold:.4g} change point {when}")


def channel_spectral_metrics(tensor: WaveletTensor, config: PipelineConfig):
    """Median metrics over the epoch slices (time x scale) of each channel."""
    epochs = build_epochs(tensor, config)
    n_channels = tensor.coefficients.shape[2]
    names = list(tensor.channel_labels) or [f"CH{c + 1}" for c in range(n_channels)]
    rows = []
    for c, name in enumerate(names):
        per_epoch = [analysis.spectral_metrics(epochs.data[i, :, :, c].T)
                     for i in range(len(epochs))
                     if np.any(epochs.data[i, :, :, c])]
        if not per_epoch:
            continue
        rows.append((tensor.recording_id, name, analysis.SpectralMetrics(
            float(np.median([m.spectral_gap for m in per_epoch])),
            float(np.median([m.numerical_rank for m in per_epoch])),
            float(np.median([m.condition_number for m in per_epoch])))))
    return rows


def cmd_analyze_spectral(args, run: Run) -> None:
    rows = []
    for t in _tensors(args, run, "test"):
        rows.extend(channel_spectral_metrics(t, run.config))
    analysis.write_spectral_csv(run.output("spectral.csv"), rows)


def cmd_baseline(args, run: Run) -> None:
    try:
        bounds = random_predictor_bounds(RandomPredictorParams(
            args.sop_minutes / 60.0, args.fpr, args.seizures, args.features, args.alpha_sig))
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    print(f"{bounds.sigma_low:.3f} {bounds.sigma_up:.3f}")
    if bounds.unbeatable:
        print("no hit count reaches significance at this rate", file=sys.stderr)


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "gridsearch": cmd_gridsearch,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "analyze-kl": cmd_analyze_kl,
    "analyze-spectral": cmd_analyze_spectral,
    "baseline": cmd_baseline,
}

# commands that only print and leave no artifacts behind
_NO_MANIFEST = {"baseline"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--seed", type=int, help="overrides the configured seed")
    common.add_argument("--mode", choices=("wavelet", "raw"), help="network input mode")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="focalpredict", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("synth", parents=[common], help="write synthetic EDF recordings")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--prefix", default="synth")
    p.add_argument("--duration", type=float, default=1800.0)
    p.add_argument("--onset", type=float, default=1500.0, help="negative for no seizure")
    p.add_argument("--transition-lead", type=float, default=600.0)
    p.add_argument("--channels", type=int, default=22)
    p.add_argument("--sampling-rate", type=int, default=256)
    p.add_argument("--theta-start", type=float, default=SynthSpec.theta_start_uv)
    p.add_argument("--theta-end", type=float, default=SynthSpec.theta_end_uv)

    for name, text in (("ingest", "preprocess EDF files into tensor caches"),
                       ("train", "train a network"),
                       ("gridsearch", "cross-validated search over e, o and l"),
                       ("analyze-spectral", "spectral metrics of wavelet slices")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("inputs", nargs="*")

    for name, text in (("predict", "write prediction traces"),
                       ("evaluate", "predict and score against onsets"),
                       ("analyze-kl", "KL-divergence change point of extracted features")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--model", help="checkpoint written by train")
        p.add_argument("inputs", nargs="*")
        if name == "evaluate":
            p.add_argument("--sop-minutes", type=float, help="default: the preictal length")
            p.add_argument("--features", type=int, default=100)
            p.add_argument("--alpha-sig", type=float, default=0.05)

    p = sub.add_parser("baseline", parents=[common], help="random-predictor sensitivity range")
    p.add_argument("--sop-minutes", type=float, default=10.0)
    p.add_argument("--fpr", type=float, required=True, help="false predictions per hour")
    p.add_argument("--seizures", type=int, required=True)
    p.add_argument("--features", type=int, default=100)
    p.add_argument("--alpha-sig", type=float, default=0.05)
    return parser


def _config(args) -> PipelineConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode is not None:
        overrides["input_mode"] = args.mode
    try:
        if args.config:
            config, extra = load_config(args.config, overrides)
            if extra:
                log.warning("ignoring unknown configuration keys: %s", ", ".join(sorted(extra)))
        else:
            config = PipelineConfig().replace(**overrides)
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise InputError(f"configuration: {exc}") from exc
    if getattr(args, "model", None) and not args.config:
        # the checkpoint carries the configuration it was trained with
        try:
            _, saved = load_checkpoint(args.model)
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"{args.model}: {exc}") from exc
        if saved:
            saved = {k: tuple(v) if isinstance(v, list) else v for k, v in saved.items()}
            config = PipelineConfig(**saved).replace(**overrides)
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = _config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, config, out)
        COMMANDS[args.command](args, run)
        if args.command not in _NO_MANIFEST:
            run.write_manifest()
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (np.linalg.LinAlgError, ValueError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
