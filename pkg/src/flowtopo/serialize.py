"""Versioned model files.

A model file is a single JSON document tagged "flowtopo-model-v1" holding the
build recipe (kind, sizes) and the exact parameter values of the flow and the
base, the class prior, and free-form provenance. Floats are written with
Python's shortest round-trip repr, so save -> load reproduces every parameter
bit for bit. Writes go through a temp file and os.replace, so a crash never
leaves a half-written file at the target path.
"""

import json
import os
import tempfile

from .bases import ClassPrior, GaussianBase, MoGBase, ResampledBase, make_base
from .errors import InvalidInputError, ModelFormatError
from .flows import AffineCoupling, SplineCoupling, make_flow
from .model import FlowModel

FORMAT_TAG = "flowtopo-model-v1"


def atomic_write_bytes(path, data):
    """Write `data` to `path` via a temp file in the same directory."""
    path = os.path.abspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".tmp-flowtopo-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def flow_spec(flow):
    """Build recipe of a coupling stack, read off the live object."""
    if not flow.layers:
        raise InvalidInputError("cannot serialize an empty flow")
    first = flow.layers[0]
    hidden = [int(s) for s in first.conditioner.sizes[1:-1]]
    if isinstance(first, SplineCoupling):
        return {
            "kind": "nsf",
            "layers": len(flow.layers),
            "hidden": hidden,
            "bins": first.n_bins,
            "bound": first.bound,
        }
    if isinstance(first, AffineCoupling):
        return {
            "kind": "realnvp",
            "layers": len(flow.layers),
            "hidden": hidden,
            "bins": 8,
            "bound": 4.0,
        }
    raise InvalidInputError(f"cannot serialize flow layer {type(first).__name__}")


def base_spec(base):
    """Build recipe of a base distribution, read off the live object."""
    spec = {"kind": base.kind}
    if isinstance(base, ResampledBase):
        spec.update(
            truncation=base.truncation,
            hidden=[int(s) for s in base.net.sizes[1:-1]],
            accept_floor=base.accept_floor,
            ema_decay=base.ema_decay,
        )
    elif not isinstance(base, (GaussianBase, MoGBase)):
        raise InvalidInputError(f"cannot serialize base {type(base).__name__}")
    return spec


def model_to_dict(model, provenance=None):
    """JSON-ready document for a model; `provenance` is stored as-is."""
    prov = {}
    if model.meta:
        prov.update({k: v for k, v in model.meta.items() if k not in ("flow", "base")})
    if provenance:
        prov.update(provenance)
    return {
        "format": FORMAT_TAG,
        "d": model.d,
        "n_classes": model.n_classes,
        "flow": {**flow_spec(model.flow), "params": model.flow.state_arrays()},
        "base": {**base_spec(model.base), "params": model.base.state_arrays()},
        "prior": None if model.prior is None else model.prior.probs.tolist(),
        "provenance": prov,
    }


def save_model(model, path, provenance=None):
    doc = model_to_dict(model, provenance)
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def _rebuild(doc):
    d = int(doc["d"])
    n_classes = int(doc["n_classes"])
    fs = doc["flow"]
    flow = make_flow(
        fs["kind"], d, int(fs["layers"]), tuple(int(h) for h in fs["hidden"]),
        rng=None, n_bins=int(fs["bins"]), bound=float(fs["bound"]),
    )
    flow.load_state_arrays(fs["params"])
    bs = doc["base"]
    base = make_base(
        bs["kind"], d, n_classes, rng=None,
        hidden=tuple(int(h) for h in bs.get("hidden", ())),
        truncation=int(bs.get("truncation", 100)),
        ema_decay=float(bs.get("ema_decay", 0.99)),
        accept_floor=float(bs.get("accept_floor", 1e-3)),
    )
    base.load_state_arrays(bs["params"])
    prior = None if doc.get("prior") is None else ClassPrior(doc["prior"])
    prov = doc.get("provenance") or {}
    meta = {"flow": {k: v for k, v in fs.items() if k != "params"},
            "base": {k: v for k, v in bs.items() if k != "params"},
            **prov}
    return FlowModel(flow, base, prior, meta=meta)


def load_model(path):
    """Read, validate, and rebuild a model from a flowtopo-model-v1 file.

    Malformed content raises ModelFormatError: parse failures name the byte
    offset, tag mismatches name both tags. I/O errors propagate as OSError.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ModelFormatError(f"model file is not UTF-8: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFormatError(
            f"model file is not valid JSON (byte offset {exc.pos}): {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must hold a JSON object")
    tag = doc.get("format")
    if tag != FORMAT_TAG:
        raise ModelFormatError(
            f"unsupported model format: expected {FORMAT_TAG!r}, found {tag!r}"
        )
    try:
        return _rebuild(doc)
    except KeyError as exc:
        raise ModelFormatError(f"model file is missing field {exc.args[0]!r}") from exc
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"model file holds invalid contents: {exc}") from exc
