"""``sdnfuse`` command line: synth, fuse, eval, check-grad, inspect.

Every command writes a manifest (``key=value`` lines) with the resolved
parameters, input checksums and a timestamp. The timestamp appears nowhere
else, so all other outputs are byte-identical across reruns with the same
inputs and seed.

Exit codes: 0 success, 1 failed gradient check, 2 configuration or input
error (no outputs written), 3 numerical abort during training.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, gradcheck, kernels, metrics, trainer
from .losses import ConfigError
from .trainer import NumericalError, RunConfig

log = logging.getLogger("sdnfuse")

EXIT_OK, EXIT_GRAD_FAIL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


# ---------------------------------------------------------------- config plumbing

def read_kv(path) -> dict[str, str]:
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    pairs = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (t.strip() for t in line.split("=", 1))
        pairs[key] = value
    return pairs


def parse_overrides(items: list[str] | None) -> dict[str, str]:
    pairs = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (t.strip() for t in item.split("=", 1))
        pairs[key] = value
    return pairs


def synth_spec_from_kv(pairs: dict[str, str]) -> data.SynthSpec:
    base = data.SynthSpec()
    aliases = {"M": "height", "N": "width", "L": "bands", "l": "msi_bands", "r": "ratio"}
    fields = {f.name for f in dataclasses.fields(data.SynthSpec)}
    updates = {}
    for key, raw in pairs.items():
        name = aliases.get(key, key)
        if name not in fields:
            raise ConfigError(f"unknown synth key {key!r}")
        kind = type(getattr(base, name))
        try:
            updates[name] = kind(raw)
        except ValueError:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    spec = dataclasses.replace(base, **updates)
    spec.validate()
    return spec


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_text(command: str, params: dict[str, str], inputs: dict[str, Path],
                  outputs: dict[str, Path] | None = None, status: str = "ok") -> str:
    now = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    lines = [f"command={command}", f"version={__version__}", f"kernel_backend={kernels.backend()}",
             f"status={status}", f"timestamp={now}"]
    lines += [f"param.{k}={v}" for k, v in params.items()]
    for name, path in inputs.items():
        lines += [f"input.{name}.path={path}", f"input.{name}.sha256={_sha256(path)}"]
    for name, path in (outputs or {}).items():
        lines.append(f"output.{name}.sha256={_sha256(path)}")
    return "\n".join(lines) + "\n"


def _write_manifest(path: Path, *args, **kwargs) -> None:
    path.write_text(manifest_text(*args, **kwargs))


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".manifest")


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    pairs = read_kv(args.spec) if args.spec else {}
    pairs.update(parse_overrides(args.set))
    if args.seed is not None:
        pairs["seed"] = str(args.seed)
    spec = synth_spec_from_kv(pairs)
    response = data.load_response(args.response) if args.response else None

    scene = data.synth_generate(spec, response)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {"hr_hsi": out / "hr_hsi.hsc", "lr_hsi": out / "lr_hsi.hsc", "hr_msi": out / "hr_msi.hsc",
             "response": out / "response.csv", "truth": out / "truth.ckpt"}
    data.save_cube(scene.hr_hsi, files["hr_hsi"])
    data.save_cube(scene.lr_hsi, files["lr_hsi"])
    data.save_cube(scene.hr_msi, files["hr_msi"])
    data.save_response(scene.response, files["response"])
    data.save_checkpoint({"phi": scene.phi, "abundances": scene.abundances}, files["truth"])
    params = {k: str(v) for k, v in dataclasses.asdict(spec).items()}
    inputs = {"response": Path(args.response)} if args.response else {}
    _write_manifest(out / "manifest.txt", "synth", params, inputs, files)
    log.info("synthetic scene written to %s", out)
    return EXIT_OK


def cmd_fuse(args) -> int:
    # everything that can fail on bad input happens before the output directory exists
    pairs = read_kv(args.config) if args.config else {}
    pairs.update(parse_overrides(args.set))
    if args.seed is not None:
        pairs["seed"] = str(args.seed)
    config = RunConfig.from_kv(pairs)
    lr_hsi = data.load_cube(args.hsi)
    hr_msi = data.load_cube(args.msi)
    R = data.load_response(args.response)
    trainer.check_geometry(lr_hsi, hr_msi, R)
    reference = data.load_cube(args.ref) if args.ref else None
    if reference is not None and reference.shape[:2] != hr_msi.shape[:2]:
        raise ConfigError(f"reference grid {reference.shape[:2]} differs from MSI grid {hr_msi.shape[:2]}")

    inputs = {"hsi": Path(args.hsi), "msi": Path(args.msi), "response": Path(args.response)}
    if args.config:
        inputs["config"] = Path(args.config)
    if args.ref:
        inputs["ref"] = Path(args.ref)
    out = Path(args.out)
    try:
        result = trainer.run_pipeline(lr_hsi, hr_msi, R, config)
    except NumericalError as exc:
        out.mkdir(parents=True, exist_ok=True)
        _write_manifest(out / "manifest.txt", "fuse", config.to_kv(), inputs, status=f"numerical_abort: {exc}")
        raise

    out.mkdir(parents=True, exist_ok=True)
    files = {"fused": out / "fused.hsc", "hsi_trace": out / "hsi_trace.csv",
             "msi_trace": out / "msi_trace.csv", "hsi_ckpt": out / "hsi.ckpt", "msi_ckpt": out / "msi.ckpt"}
    data.save_cube(result.fused, files["fused"])
    files["hsi_trace"].write_text(result.hsi_trace.to_csv())
    files["msi_trace"].write_text(result.msi_trace.to_csv())
    hsi_sections = {n: v.data for n, v in result.hsi_encoder.params.items()}
    hsi_sections.update({n: v.data for n, v in result.decoder.params.items()})
    hsi_sections["S_h"] = result.S_h
    data.save_checkpoint(hsi_sections, files["hsi_ckpt"])
    msi_sections = {n: v.data for n, v in result.msi_encoder.params.items()}
    msi_sections.update(S_m=result.S_m, phi=result.phi)
    data.save_checkpoint(msi_sections, files["msi_ckpt"])
    if reference is not None:
        # score the cube as stored, so eval.csv agrees with a later `eval` on fused.hsc
        report = metrics.evaluate(data.load_cube(files["fused"]), reference)
        files["eval"] = out / "eval.csv"
        files["eval"].write_text(report.to_csv())
        print(report)
    _write_manifest(out / "manifest.txt", "fuse", config.to_kv(), inputs, files)
    log.info("fused cube written to %s", files["fused"])
    return EXIT_OK


def cmd_eval(args) -> int:
    est, ref = data.load_cube(args.est), data.load_cube(args.ref)
    if est.shape != ref.shape:
        raise ConfigError(f"estimate {est.shape} and reference {ref.shape} differ in shape")
    report = metrics.evaluate(est, ref)
    out = Path(args.out)
    out.write_text(report.to_csv())
    _write_manifest(_sidecar(out), "eval", {}, {"est": Path(args.est), "ref": Path(args.ref)}, {"eval": out})
    print(report)
    return EXIT_OK


def cmd_check_grad(args) -> int:
    reports = gradcheck.objective_suite(args.seed, h=args.h, tol=args.tol)
    text = gradcheck.format_report(reports)
    sys.stdout.write(text)
    params = {"seed": str(args.seed), "h": repr(args.h), "tol": repr(args.tol)}
    ok = all(r.ok for r in reports.values())
    status = "ok" if ok else "gradient_mismatch"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.txt").write_text(text)
        _write_manifest(out / "manifest.txt", "check-grad", params, {},
                        {"report": out / "gradcheck.txt"}, status=status)
    else:
        sys.stderr.write(manifest_text("check-grad", params, {}, status=status))
    return EXIT_OK if ok else EXIT_GRAD_FAIL


def repr_histogram(S: np.ndarray, bins: int) -> str:
    """CSV histogram of representation values on [0, 1], overall and per component."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts = [np.histogram(S.ravel(), edges)[0]]
    counts += [np.histogram(S[:, k], edges)[0] for k in range(S.shape[1])]
    header = ["bin_lo", "bin_hi", "count_all", *[f"count_s{k}" for k in range(S.shape[1])]]
    rows = [",".join(header)]
    for i in range(bins):
        rows.append(",".join([repr(float(edges[i])), repr(float(edges[i + 1]))]
                             + [str(int(c[i])) for c in counts]))
    return "\n".join(rows) + "\n"


def cmd_inspect(args) -> int:
    if bool(args.cube) == bool(args.repr):
        raise ConfigError("inspect needs exactly one of --cube or --repr")
    if args.cube:
        if args.band is None or not args.png:
            raise ConfigError("--cube requires --band and --png")
        cube = data.load_cube(args.cube)
        data.save_band_png(cube, args.band, args.png)
        out, inputs = Path(args.png), {"cube": Path(args.cube)}
        params = {"band": str(args.band)}
    else:
        if not args.hist:
            raise ConfigError("--repr requires --hist")
        sections = data.load_checkpoint(args.repr)
        if args.section not in sections:
            raise ConfigError(f"checkpoint has no section {args.section!r} (have {sorted(sections)})")
        if args.bins < 1:
            raise ConfigError("--bins must be positive")
        out, inputs = Path(args.hist), {"repr": Path(args.repr)}
        out.write_text(repr_histogram(sections[args.section], args.bins))
        params = {"section": args.section, "bins": str(args.bins)}
    _write_manifest(_sidecar(out), "inspect", params, inputs, {"output": out})
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdnfuse", description="Unsupervised HSI/MSI fusion with coupled Dirichlet networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--backend", choices=kernels.available_backends(), help="simplex kernel backend")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene with known factors")
    p.add_argument("--spec", help="key=value file of SynthSpec fields")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--response", help="L x l response CSV (default: built-in Gaussian)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a spec field")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fuse", help="fuse an LR HSI with an HR MSI")
    p.add_argument("--hsi", required=True, help="LR hyperspectral cube (.hsc)")
    p.add_argument("--msi", required=True, help="HR multispectral cube (.hsc)")
    p.add_argument("--response", required=True, help="L x l response CSV")
    p.add_argument("--config", help="key=value run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ref", help="ground-truth HR HSI; writes eval.csv")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="RMSE and SAM of an estimate against a reference")
    p.add_argument("--est", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True, help="CSV report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check-grad", help="finite-difference check of the three objectives")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--out", help="directory for the report and manifest (default: manifest to stderr)")
    p.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("inspect", help="export a band image or a representation histogram")
    p.add_argument("--cube")
    p.add_argument("--band", type=int)
    p.add_argument("--png")
    p.add_argument("--repr", help="checkpoint holding a representation matrix")
    p.add_argument("--hist", help="histogram CSV path")
    p.add_argument("--section", default="S_m")
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.backend:
        kernels.use_backend(args.backend)
    try:
        return args.func(args)
    except (ConfigError, data.CubeFormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"sdnfuse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"sdnfuse {args.command}: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
