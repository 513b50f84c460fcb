"""Fit directory layout: ``params.json``, ``draws.bin`` and ``diagnostics.json``.

``draws.bin`` holds an 8-byte little-endian header length, a JSON header and
then row-major little-endian float64 draws, one block per component.
"""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from . import kernels as K
from .cascades import CovariateSchema, Standardizer
from .inference import PosteriorFit
from .mixture import MixtureModel
from .model import ParameterLayout

FORMAT = "rumorhawkes-fit/1"
LABELS = ("false", "true")


class ArtifactError(ValueError):
    pass


def _floats(a) -> list:
    return [None if not math.isfinite(v) else float(v) for v in np.asarray(a, dtype=float)]


def _unfloats(a) -> np.ndarray:
    return np.array([math.nan if v is None else v for v in a], dtype=float)


def _component(fit: PosteriorFit) -> dict:
    p = fit.map_params
    return {
        "label": fit.label,
        "names": fit.layout.names,
        "map_vector": fit.map_point.tolist(),
        "map": {
            "alpha": p.marks.alpha,
            "weights": p.marks.weights.tolist(),
            "root_kernel": p.kernels.root.to_dict(),
            "non_root_kernel": p.kernels.non_root.to_dict(),
        },
        "chains": fit.chains,
        "warmup": fit.warmup,
        "seed": fit.seed,
        "num_draws": fit.num_draws,
        "rhat": _floats(fit.rhat),
        "ess": _floats(fit.ess),
        "n_divergent": fit.n_divergent,
        "accept_rate": None if not math.isfinite(fit.accept_rate) else fit.accept_rate,
        "step_size": [float(s) for s in fit.step_size],
        "n_clamped_lags": fit.n_clamped,
    }


def write_draws(path, blocks: dict[str, np.ndarray]) -> None:
    header = {"dtype": "<f8", "order": "C",
              "blocks": [{"label": k, "shape": list(v.shape)} for k, v in blocks.items()]}
    h = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(h)))
        fh.write(h)
        for v in blocks.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_draws(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ArtifactError(f"{path}: truncated draws file")
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + n])
    pos = 8 + n
    out = {}
    for b in header["blocks"]:
        shape = tuple(b["shape"])
        size = int(np.prod(shape)) * 8
        if pos + size > len(raw):
            raise ArtifactError(f"{path}: truncated draws file")
        out[b["label"]] = np.frombuffer(raw[pos:pos + size], dtype="<f8").reshape(shape).astype(float)
        pos += size
    return out


def save_model(model: MixtureModel, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fits = {"false": model.fit_false, "true": model.fit_true}
    params = {
        "format": FORMAT,
        "schema": model.schema.to_dict(),
        "standardizer": model.standardizer.to_dict(),
        "kernel_families": {"root": model.families[0], "non_root": model.families[1]},
        "prior_false": model.prior_false,
        "mode": model.mode,
        "components": {k: _component(f) for k, f in fits.items()},
    }
    (out / "params.json").write_text(json.dumps(params, indent=2) + "\n")
    write_draws(out / "draws.bin", {k: f.draws for k, f in fits.items()})
    diag = {k: {n: f.summary()[n] for n in ("names", "rhat", "ess", "n_divergent",
                                             "accept_rate", "step_size", "num_draws",
                                             "n_clamped_lags")}
            for k, f in fits.items()}
    for d in diag.values():
        d["rhat"] = _floats(d["rhat"])
        d["ess"] = _floats(d["ess"])
        d["max_rhat"] = max((r for r in d["rhat"] if r is not None), default=None)
        d["min_ess"] = min((e for e in d["ess"] if e is not None), default=None)
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=2) + "\n")
    return out


def load_model(model_dir) -> MixtureModel:
    d = Path(model_dir)
    try:
        params = json.loads((d / "params.json").read_text())
        if params.get("format") != FORMAT:
            raise ArtifactError(f"unsupported model format {params.get('format')!r}")
        blocks = read_draws(d / "draws.bin")
    except FileNotFoundError as e:
        raise ArtifactError(f"missing model file: {e.filename}") from None
    except json.JSONDecodeError as e:
        raise ArtifactError(f"malformed params.json: {e}") from None
    schema = CovariateSchema.from_dict(params["schema"])
    std = Standardizer.from_dict(params["standardizer"])
    fam = params["kernel_families"]
    for f in (fam["root"], fam["non_root"]):
        if f not in K.FAMILIES:
            raise ArtifactError(f"unknown kernel family {f!r}")
    layout = ParameterLayout(schema, fam["root"], fam["non_root"])
    fits = {}
    for lab in LABELS:
        c = params["components"][lab]
        draws = blocks[lab]
        if draws.shape[1] != layout.dim:
            raise ArtifactError(f"draws for {lab!r} have {draws.shape[1]} columns, "
                                f"expected {layout.dim}")
        fits[lab] = PosteriorFit(
            layout, draws, np.array(c["map_vector"], dtype=float), c["chains"], c["warmup"],
            c["seed"], rhat=_unfloats(c["rhat"]), ess=_unfloats(c["ess"]),
            n_divergent=c["n_divergent"],
            accept_rate=math.nan if c["accept_rate"] is None else c["accept_rate"],
            step_size=list(c["step_size"]), label=c["label"], standardizer=std,
            n_clamped=c.get("n_clamped_lags", 0))
    return MixtureModel(fits["true"], fits["false"], schema, std, params["prior_false"],
                        params["mode"])


def component_from_dict(d: dict, schema: CovariateSchema | None = None):
    """Hand-written component parameters, e.g. for simulation.

    ``beta`` maps covariate names to coefficients on the log1p scale; unlisted
    covariates get 0.
    """
    from .model import ComponentParams, MarkCoefficients

    if schema is None:
        schema = CovariateSchema.from_dict(d["schema"]) if "schema" in d else CovariateSchema()
    beta = dict(d.get("beta", {}))
    unknown = set(beta) - set(schema.names)
    if unknown:
        raise ArtifactError(f"unknown covariates in beta: {sorted(unknown)}")
    w = [float(d["alpha"])] + [float(beta.get(n, 0.0)) for n in schema.names]
    kernels = K.KernelPair(K.KernelParams.from_dict(d["root_kernel"]),
                           K.KernelParams.from_dict(d["non_root_kernel"]))
    return ComponentParams(MarkCoefficients.from_weights(w, schema), kernels, d.get("label"),
                           schema)
