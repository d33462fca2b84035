"""Feeder JSON ingestion, per-unit conversion and the embedded test feeder.

A feeder document is a single JSON object with arrays ``buses``, ``lines``
and ``inverters`` plus a ``bases`` object.  ``unit`` selects how numbers
are read:

* ``"ohm"``: impedances in ohms, loads as ``load_mva`` (split by the run's
  power factor) or explicit ``p_c_mw``/``q_c_mvar``, generation in MW, and
  inverters by ``capacity_mw``.  Everything is converted to per unit at
  ingestion using ``bases``.
* ``"pu"``: all values are taken literally (``p_c``, ``q_c``, ``p_g``,
  inverter ``s``/``p``/``rho``, impedances in p.u.).

``load_feeder("builtin:sce42")`` returns the embedded 42-bus utility
feeder (41 lines, five PV inverters, 12.35 kV / 1000 kVA bases).
"""

from __future__ import annotations

import hashlib
import json
import math
from importlib import resources

from .control import Inverter
from .exceptions import ParseError
from .network import Bases, Bus, Line, build_feeder

BUILTIN_PREFIX = "builtin:"
DEFAULT_POWER_FACTOR = 0.9
DEFAULT_PV_OPERATING_FRACTION = 1.0
DEFAULT_INVERTER_OVERSIZE = 1.1
DEFAULT_MIN_IMPEDANCE_OHM = 1e-3


def _require(obj, key, context):
    try:
        return obj[key]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"missing required value in {context}", field=key) from exc


def load_feeder(
    source,
    power_factor=DEFAULT_POWER_FACTOR,
    load_scale=1.0,
    pv_operating_fraction=DEFAULT_PV_OPERATING_FRACTION,
    inverter_oversize=DEFAULT_INVERTER_OVERSIZE,
    tan_rho=None,
    min_impedance_ohm=DEFAULT_MIN_IMPEDANCE_OHM,
):
    """Load and validate a feeder from a path, builtin name, or parsed dict.

    Parameters
    ----------
    source : str | pathlib.Path | dict
        File path, ``"builtin:<name>"``, or an already-parsed document.
    power_factor : float
        Lagging power factor used to split ``load_mva`` entries into real
        and reactive consumption.
    load_scale : float
        Multiplier on all loads.
    pv_operating_fraction : float
        Inverter real output as a fraction of nameplate capacity.
    inverter_oversize : float
        Apparent capacity as a multiple of nameplate, so reactive headroom
        exists even at full real output.
    tan_rho : float, optional
        Power-factor limit applied to capacity-style inverters; None keeps
        the capacity circle as the only bound.
    min_impedance_ohm : float
        Zero impedance entries (present in some published datasets) are
        lifted to this floor before per-unit conversion; the substitution
        is recorded in the feeder metadata.
    """
    if isinstance(source, dict):
        doc, origin = source, "<dict>"
    elif isinstance(source, str) and source.startswith(BUILTIN_PREFIX):
        name = source[len(BUILTIN_PREFIX):]
        ref = resources.files("voltvar.data").joinpath(f"{name}.json")
        if not ref.is_file():
            raise ParseError(f"unknown builtin feeder {name!r}")
        doc, origin = json.loads(ref.read_text()), source
    else:
        try:
            with open(source) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{source}: invalid JSON at line {exc.lineno}") from exc
        origin = str(source)

    unit = doc.get("unit", "pu")
    if unit not in ("ohm", "pu"):
        raise ParseError(f"unit must be 'ohm' or 'pu', got {unit!r}", field="unit")

    bases = None
    if "bases" in doc:
        b = doc["bases"]
        bases = Bases(
            v_kv=float(_require(b, "v_kv", "bases")),
            s_kva=float(_require(b, "s_kva", "bases")),
            z_ohm=float(b.get("z_ohm", 0.0)),
        )
    if unit == "ohm" and bases is None:
        raise ParseError("ohm-unit files need a bases object", field="bases")
    s_base_mva = bases.s_kva / 1e3 if bases else 1.0
    z_base = bases.z_ohm if bases else 1.0

    tan_phi = math.tan(math.acos(power_factor))
    buses = []
    for rec in _require(doc, "buses", "document"):
        bid = int(_require(rec, "id", "bus record"))
        v_nom = float(rec.get("v_nom", 1.0))
        if unit == "ohm":
            if "load_mva" in rec:
                mva = float(rec["load_mva"])
                p_c = power_factor * mva / s_base_mva
                q_c = tan_phi * p_c
            else:
                p_c = float(rec.get("p_c_mw", 0.0)) / s_base_mva
                q_c = float(rec.get("q_c_mvar", 0.0)) / s_base_mva
            p_g = float(rec.get("p_g_mw", 0.0)) / s_base_mva
        else:
            p_c = float(rec.get("p_c", 0.0))
            q_c = float(rec.get("q_c", 0.0))
            p_g = float(rec.get("p_g", 0.0))
        buses.append(
            Bus(id=bid, v_nom=v_nom, p_c=load_scale * p_c, q_c=load_scale * q_c, p_g=p_g)
        )

    floored = []
    lines = []
    for rec in _require(doc, "lines", "document"):
        a = int(_require(rec, "from", "line record"))
        b = int(_require(rec, "to", "line record"))
        r = float(_require(rec, "r", "line record"))
        x = float(_require(rec, "x", "line record"))
        if unit == "ohm":
            if 0.0 <= r < min_impedance_ohm or 0.0 <= x < min_impedance_ohm:
                floored.append((a, b))
                r = max(r, min_impedance_ohm) if r >= 0 else r
                x = max(x, min_impedance_ohm) if x >= 0 else x
            r, x = r / z_base, x / z_base
        lines.append(Line(from_bus=a, to_bus=b, r=r, x=x))

    inverters = {}
    curve_specs = {}
    for rec in doc.get("inverters", []):
        bus = int(_require(rec, "bus", "inverter record"))
        if unit == "ohm" or "capacity_mw" in rec:
            cap = float(_require(rec, "capacity_mw", "inverter record")) / s_base_mva
            p = pv_operating_fraction * cap
            s = inverter_oversize * cap
            rho = math.atan(tan_rho) if tan_rho is not None else None
        else:
            s = float(_require(rec, "s", "inverter record"))
            p = float(_require(rec, "p", "inverter record"))
            rho = rec.get("rho")
            rho = float(rho) if rho is not None else None
        inverters[bus] = Inverter(s=s, p=p, rho=rho)
        if "curve" in rec:
            curve_specs[bus] = dict(rec["curve"])

    meta = {
        "name": doc.get("name", ""),
        "source": origin,
        "unit": unit,
        "power_factor": power_factor,
        "load_scale": load_scale,
        "pv_operating_fraction": pv_operating_fraction,
        "inverter_oversize": inverter_oversize,
        "tan_rho": tan_rho,
        "floored_lines": floored,
        "min_impedance_ohm": min_impedance_ohm,
    }
    return build_feeder(
        buses,
        lines,
        inverters=inverters,
        bases=bases,
        slack_label=int(doc.get("slack", 0)),
        v0=float(doc.get("v0", 1.0)),
        curve_specs=curve_specs,
        meta=meta,
    )


def feeder_to_dict(feeder):
    """Canonical per-unit document for a built feeder (round-trips exactly)."""
    buses = [{"id": feeder.slack_label}]
    for k, lab in enumerate(feeder.labels):
        buses.append(
            {
                "id": lab,
                "v_nom": float(feeder.v_nom[k]),
                "p_c": float(feeder.p_c[k]),
                "q_c": float(feeder.q_c[k]),
                "p_g": float(feeder.p_g[k]),
            }
        )
    lines = []
    for k, lab in enumerate(feeder.labels):
        p = feeder.parent[k]
        lines.append(
            {
                "from": feeder.slack_label if p < 0 else feeder.labels[p],
                "to": lab,
                "r": float(feeder.r[k]),
                "x": float(feeder.x[k]),
            }
        )
    inverters = []
    for k in sorted(feeder.inverters):
        inv = feeder.inverters[k]
        rec = {
            "bus": feeder.labels[k],
            "s": inv.s,
            "p": inv.p,
            "rho": inv.rho,
        }
        if k in feeder.curve_specs:
            rec["curve"] = dict(feeder.curve_specs[k])
        inverters.append(rec)
    doc = {
        "name": feeder.meta.get("name", ""),
        "unit": "pu",
        "slack": feeder.slack_label,
        "v0": feeder.v0,
        "buses": buses,
        "lines": lines,
        "inverters": inverters,
    }
    if feeder.bases is not None:
        doc["bases"] = {
            "v_kv": feeder.bases.v_kv,
            "s_kva": feeder.bases.s_kva,
            "z_ohm": feeder.bases.z_ohm,
        }
    return doc


def save_feeder(feeder, path):
    with open(path, "w") as fh:
        json.dump(feeder_to_dict(feeder), fh, indent=1, sort_keys=True)
        fh.write("\n")


def feeder_hash(feeder):
    """Stable content hash of the canonical feeder document."""
    payload = json.dumps(feeder_to_dict(feeder), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def feeders_equal(a, b):
    """Field-by-field equality of two feeders (labels, arrays, inverters)."""
    import numpy as np

    if (a.slack_label, a.labels, a.v0) != (b.slack_label, b.labels, b.v0):
        return False
    for attr in ("parent", "r", "x", "p_c", "q_c", "p_g", "v_nom"):
        if not np.array_equal(getattr(a, attr), getattr(b, attr)):
            return False
    if dict(a.inverters) != dict(b.inverters):
        return False
    return {k: dict(v) for k, v in a.curve_specs.items()} == {
        k: dict(v) for k, v in b.curve_specs.items()
    }
