"""Benchmark sweeps: networks x images x occlusion grid x configurations.

A manifest is a JSON object::

    {
      "networks": ["fixture:desk_shapes", "path/to/net.fnn"],
      "images": ["fixture:shape_0", "path/to/img.pgm"],
      "sizes": ["2x2", "5x5"],
      "colors": ["multiform:0.05", "multiform:0.1", "uniform:0"],
      "positions": "int",
      "seed": 0,
      "configs": {
        "base":   {"split": "1x1", "sort_labels": true, "timeout": 60, "workers": 1},
        "split":  {"split": "4x4"}
      }
    }

Only ``networks`` and ``images`` are required.  Config entries inherit the
defaults shown for ``base``.
"""
from __future__ import annotations

import json
import os
import re
import statistics

from . import fixtures
from .imageio import load_image
from .model import load_network
from .occlusion import Multiform, OcclusionSpec, Uniform
from .orchestrator import NONROBUST, VerificationConfig, format_table, summary_row, \
    verify_occlusion_robustness


class ManifestError(ValueError):
    def __init__(self, where: str, msg: str):
        super().__init__(f"{where}: {msg}")
        self.where = where


def parse_size(text: str):
    m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", str(text))
    if not m:
        raise ValueError(f"expected WxH, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def parse_color(text: str):
    mode, _, val = str(text).partition(":")
    try:
        if mode == "uniform":
            parts = [float(v) for v in val.split(",")] if val else [0.0]
            return Uniform(parts[0] if len(parts) == 1 else parts)
        if mode == "multiform":
            return Multiform(float(val))
    except ValueError as exc:
        raise ValueError(f"bad colour {text!r}: {exc}") from None
    raise ValueError(f"expected uniform:MU or multiform:EPS, got {text!r}")


def color_label(coloring) -> str:
    if isinstance(coloring, Uniform):
        return "mu=" + ",".join(f"{v:g}" for v in coloring.mu)
    return f"{coloring.eps:g}"


def resolve(ref: str, kind: str, base: str):
    if ref.startswith("fixture:"):
        name = ref.split(":", 1)[1]
        return fixtures.network(name) if kind == "network" else fixtures.image(name)
    path = ref if os.path.isabs(ref) else os.path.join(base, ref)
    return load_network(path) if kind == "network" else load_image(path)


_CONFIG_KEYS = {"split", "sort_labels", "timeout", "workers", "global_timeout", "encoding"}


def _config(where, raw: dict, seed: int) -> VerificationConfig:
    if not isinstance(raw, dict):
        raise ManifestError(where, "expected an object")
    extra = set(raw) - _CONFIG_KEYS
    if extra:
        raise ManifestError(where, f"unknown keys {sorted(extra)}")
    try:
        k_m, k_n = parse_size(raw.get("split", "1x1"))
        return VerificationConfig(
            k_m=k_m, k_n=k_n, timeout_per_query=float(raw.get("timeout", 60.0)),
            workers=int(raw.get("workers", 1)), label_sorting=bool(raw.get("sort_labels", True)),
            seed=seed, global_timeout=raw.get("global_timeout"),
            encoding=raw.get("encoding", "pairwise"))
    except (TypeError, ValueError) as exc:
        raise ManifestError(where, str(exc)) from None


def load_manifest(path: str) -> dict:
    """Parse and validate a manifest file; errors name the offending location."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from None
    return parse_manifest(raw, os.path.dirname(os.path.abspath(path)), path)


def parse_manifest(raw, base: str = ".", name: str = "manifest") -> dict:
    if not isinstance(raw, dict):
        raise ManifestError(name, "top level must be an object")
    for key in ("networks", "images"):
        if not isinstance(raw.get(key), list) or not raw[key]:
            raise ManifestError(f"{name}: {key}", "expected a non-empty list")
    out = {"seed": int(raw.get("seed", 0)), "positions": raw.get("positions", "int")}
    if out["positions"] not in ("int", "real"):
        raise ManifestError(f"{name}: positions", "expected 'int' or 'real'")
    for key, kind in (("networks", "network"), ("images", "image")):
        items = []
        for k, ref in enumerate(raw[key]):
            try:
                items.append((ref, resolve(str(ref), kind, base)))
            except (OSError, ValueError) as exc:
                raise ManifestError(f"{name}: {key}[{k}]", str(exc)) from None
        out[key] = items
    out["sizes"] = []
    for k, s in enumerate(raw.get("sizes", ["2x2"])):
        try:
            out["sizes"].append(parse_size(s))
        except ValueError as exc:
            raise ManifestError(f"{name}: sizes[{k}]", str(exc)) from None
    out["colors"] = []
    for k, c in enumerate(raw.get("colors", ["uniform:0"])):
        try:
            out["colors"].append(parse_color(c))
        except ValueError as exc:
            raise ManifestError(f"{name}: colors[{k}]", str(exc)) from None
    configs = raw.get("configs", {"base": {}})
    if not isinstance(configs, dict) or not configs:
        raise ManifestError(f"{name}: configs", "expected a non-empty object")
    out["configs"] = {cname: _config(f"{name}: configs.{cname}", c, out["seed"])
                      for cname, c in configs.items()}
    return out


def run_bench(manifest: dict, progress=None) -> dict:
    """Verify every grid cell under every configuration.

    Returns ``{"tables": {(net, config): rows}, "reports": [...], "comparisons": [...]}``
    where each report entry records its cell and the JSON-ready report.
    """
    tables, entries = {}, []
    times = {}
    for net_ref, net in manifest["networks"]:
        for cname, cfg in manifest["configs"].items():
            rows = []
            for w, h in manifest["sizes"]:
                for coloring in manifest["colors"]:
                    spec = OcclusionSpec(w, h, coloring, manifest["positions"])
                    reports = []
                    for img_ref, img in manifest["images"]:
                        rep = verify_occlusion_robustness(net, img, spec, cfg)
                        reports.append(rep)
                        cell = (net_ref, f"{w}x{h}", color_label(coloring), img_ref)
                        times.setdefault(cell, {})[cname] = (rep.t_verify, rep.overall)
                        entries.append({"network": net_ref, "config": cname, "size": f"{w}x{h}",
                                        "color": color_label(coloring), "image": img_ref,
                                        "report": rep.to_dict()})
                        if progress:
                            progress(entries[-1])
                    rows.append(summary_row(f"{w}x{h}", color_label(coloring), reports))
            tables[(net_ref, cname)] = rows
    return {"tables": tables, "reports": entries, "comparisons": compare(times, manifest)}


def compare(times: dict, manifest: dict) -> list:
    """Median speedup of each configuration over the first, on non-robust and robust cells."""
    names = list(manifest["configs"])
    if len(names) < 2:
        return []
    ref = names[0]
    out = []
    for other in names[1:]:
        entry = {"baseline": ref, "config": other}
        for verdict, key in ((NONROBUST, "nonrobust"), ("Robust", "robust")):
            ratios = [v[ref][0] / max(v[other][0], 1e-9) for v in times.values()
                      if v[ref][1] == verdict and v[other][1] == verdict]
            entry[f"median_speedup_{key}"] = statistics.median(ratios) if ratios else None
            entry[f"cells_{key}"] = len(ratios)
        entry["verdict_mismatches"] = sum(
            1 for v in times.values()
            if {v[ref][1], v[other][1]} == {"Robust", NONROBUST})
        out.append(entry)
    return out


def write_outputs(result: dict, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    parts = []
    for (net_ref, cname), rows in result["tables"].items():
        parts.append(f"network {net_ref}, config {cname}\n" + format_table(rows))
    if result["comparisons"]:
        lines = ["timing comparison (median speedup over baseline)"]
        for c in result["comparisons"]:
            nr = c["median_speedup_nonrobust"]
            rb = c["median_speedup_robust"]
            lines.append(f"{c['config']} vs {c['baseline']}: non-robust "
                         f"{'/' if nr is None else f'{nr:.2f}x'} over {c['cells_nonrobust']} cells, "
                         f"robust {'/' if rb is None else f'{rb:.2f}x'} over {c['cells_robust']} cells, "
                         f"verdict mismatches {c['verdict_mismatches']}")
        parts.append("\n".join(lines) + "\n")
    text = "\n".join(parts)
    with open(os.path.join(out_dir, "bench.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    payload = {"tables": [{"network": n, "config": c, "rows": rows}
                          for (n, c), rows in result["tables"].items()],
               "comparisons": result["comparisons"], "reports": result["reports"]}
    with open(os.path.join(out_dir, "bench.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return text
