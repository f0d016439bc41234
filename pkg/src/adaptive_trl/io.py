"""Artifact persistence: run manifests, weight files, scenario files and CSV exports.

All artifacts are JSON or CSV text. Floats are written with ``repr`` (JSON)
or 17 significant digits (CSV), both of which round-trip doubles exactly.
Every artifact carries a reference to the manifest that produced it; the
reference is a content hash of the command and configuration, so repeating
a command reproduces byte-identical artifacts.
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .features import get_layout
from .geometry import VehicleState
from .mdp import ScenarioConfig
from .policies import ParetoPoint, Scenario
from .states import StateBatch

WEIGHTS_FORMAT = "adaptive-trl-weights/1"
SCENARIOS_FORMAT = "adaptive-trl-scenarios/1"
MANIFEST_FORMAT = "adaptive-trl-manifest/1"

# slice geometry shown in the value and policy figures
SLICE_INTRUDER = (700.0, -250.0, math.radians(135.0))
SLICE_OWN_HEADING = 0.0
SLICE_SPACING = 20.0


class ArtifactError(RuntimeError):
    """Missing, malformed or incompatible artifact."""


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # running from a source tree
        return "0+unknown"


def _canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class Manifest:
    """Provenance record for one command invocation."""

    command: str
    arguments: dict
    config: dict
    seed: int
    code_version: str = field(default_factory=code_version)
    created: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat())
    finished: str | None = None
    outputs: list[str] = field(default_factory=list)

    @property
    def ref(self) -> str:
        """Stable content reference: identical command + config + code give the same ref."""
        body = _canonical({
            "command": self.command, "arguments": self.arguments,
            "config": self.config, "seed": self.seed, "code_version": self.code_version,
        })
        return hashlib.sha256(body.encode()).hexdigest()[:16]

    def stable_dict(self) -> dict:
        """Manifest content without timestamps or output paths (embedded in artifacts)."""
        d = self.as_dict()
        for k in ("created", "finished", "outputs"):
            d.pop(k)
        return d

    def as_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "ref": self.ref,
            "command": self.command,
            "arguments": self.arguments,
            "config": self.config,
            "seed": self.seed,
            "code_version": self.code_version,
            "created": self.created,
            "finished": self.finished,
            "outputs": list(self.outputs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        return cls(
            command=d["command"], arguments=d["arguments"], config=d["config"], seed=d["seed"],
            code_version=d["code_version"], created=d["created"], finished=d.get("finished"),
            outputs=list(d.get("outputs", [])),
        )

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        self.finished = _dt.datetime.now(_dt.timezone.utc).isoformat()
        path.write_text(json.dumps(self.as_dict(), indent=2) + "\n")
        return path


def _read_json(path: str | Path, fmt: str, what: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"{what} not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        raise ArtifactError(f"{path} is not a {what} (expected format {fmt!r})")
    return doc


def _write_json(path: str | Path, doc: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


# --- weights ----------------------------------------------------------------

@dataclass
class WeightsArtifact:
    theta: np.ndarray
    theta_q: np.ndarray | None
    layout: dict
    meta: dict
    manifest: dict

    def require_theta_q(self) -> np.ndarray:
        if self.theta_q is None:
            raise ArtifactError("weights file has no post-decision weights; run extract-pd first")
        return self.theta_q


def _weights_doc(art: WeightsArtifact) -> dict:
    return {
        "format": WEIGHTS_FORMAT,
        "layout": art.layout,
        "meta": art.meta,
        "manifest": art.manifest,
        "theta": [float(v) for v in art.theta],
        "theta_q": None if art.theta_q is None else [float(v) for v in art.theta_q],
    }


def save_weights(path, theta, theta_q, cfg: ScenarioConfig, manifest: dict, meta: dict | None = None) -> Path:
    """Write value and post-decision weights together with the grid/layout description."""
    layout = get_layout(cfg.features).describe()
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (layout["size"],):
        raise ArtifactError(f"theta has shape {theta.shape}, layout expects ({layout['size']},)")
    if theta_q is not None:
        theta_q = np.asarray(theta_q, dtype=float)
        if theta_q.shape != theta.shape:
            raise ArtifactError("theta and theta_q lengths differ")
    art = WeightsArtifact(theta, theta_q, layout, dict(meta or {}), manifest)
    return write_weights(path, art)


def write_weights(path, art: WeightsArtifact) -> Path:
    return _write_json(path, _weights_doc(art))


def load_weights(path, cfg: ScenarioConfig | None = None) -> WeightsArtifact:
    """Read a weights file; with ``cfg`` the stored grid layout must match the current one."""
    doc = _read_json(path, WEIGHTS_FORMAT, "weights file")
    theta = np.asarray(doc["theta"], dtype=float)
    theta_q = None if doc.get("theta_q") is None else np.asarray(doc["theta_q"], dtype=float)
    art = WeightsArtifact(theta, theta_q, doc["layout"], doc.get("meta", {}), doc.get("manifest", {}))
    if theta.shape != (art.layout.get("size"),):
        raise ArtifactError(f"{path}: theta length {theta.size} disagrees with its own layout")
    if cfg is not None:
        current = json.loads(json.dumps(get_layout(cfg.features).describe()))
        if current != art.layout:
            raise ArtifactError(
                f"{path}: feature layout in file (size {art.layout.get('size')}) is incompatible "
                f"with the current configuration (size {current['size']})"
            )
    return art


# --- scenarios --------------------------------------------------------------

def save_scenarios(path, scenarios: Sequence[Scenario], kind: str, manifest_ref: str) -> Path:
    return _write_json(path, {
        "format": SCENARIOS_FORMAT,
        "kind": kind,
        "manifest": manifest_ref,
        "scenarios": [
            {"x": s.intruder_initial.x, "y": s.intruder_initial.y, "psi": s.intruder_initial.psi,
             "noise_seed": s.noise_seed}
            for s in scenarios
        ],
    })


def load_scenarios(path) -> list[Scenario]:
    doc = _read_json(path, SCENARIOS_FORMAT, "scenario file")
    try:
        return [
            Scenario(VehicleState(float(r["x"]), float(r["y"]), float(r["psi"])), int(r["noise_seed"]))
            for r in doc["scenarios"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"{path}: malformed scenario entry ({exc})") from None


# --- CSV --------------------------------------------------------------------

def fmt(v) -> str:
    """17 significant digits for floats; integers and strings unchanged."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return "" if v is None else str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], manifest_ref: str) -> Path:
    """CSV with a leading ``# manifest: <ref>`` comment line, then a header row."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# manifest: {manifest_ref}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[str, list[dict]]:
    """Return ``(manifest_ref, rows)``; values are left as strings."""
    with Path(path).open(newline="") as fh:
        first = fh.readline()
        if not first.startswith("# manifest: "):
            raise ArtifactError(f"{path}: missing manifest reference line")
        return first[len("# manifest: "):].strip(), list(csv.DictReader(fh))


PARETO_HEADER = ("family", "param", "deviations", "n_unfiltered", "deviation_se",
                 "risk_ratio", "n_filtered", "risk_ratio_se", "error")


def write_pareto_csv(path, points: Sequence[ParetoPoint], manifest_ref: str) -> Path:
    rows = [
        (p.family, p.param, p.deviations, p.n_unfiltered, p.deviation_se,
         p.risk_ratio, p.n_filtered, p.risk_ratio_se, p.error or "")
        for p in points
    ]
    return write_csv(path, PARETO_HEADER, rows, manifest_ref)


REPORT_HEADER = ("set", "n_episodes", "n_deviations", "n_nmacs", "n_goals", "n_timeouts",
                 "risk_ratio", "mean_total_reward", "mean_steps")


def write_reports_csv(path, reports: dict, manifest_ref: str) -> Path:
    rows = []
    for name, r in reports.items():
        rows.append((name, r.n_episodes, r.n_deviations, r.n_nmacs, r.n_goals, r.n_timeouts,
                     r.risk_ratio, r.mean_total_reward, r.mean_steps))
    return write_csv(path, REPORT_HEADER, rows, manifest_ref)


# --- slices -----------------------------------------------------------------

def slice_batch(cfg: ScenarioConfig, intruder=SLICE_INTRUDER, own_heading=SLICE_OWN_HEADING,
                spacing: float = SLICE_SPACING) -> StateBatch:
    """Own position swept over the operating box on a regular pixel grid, intruder held fixed."""
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    xs = np.arange(cfg.box_x[0], cfg.box_x[1] + 0.5 * spacing, spacing)
    ys = np.arange(cfg.box_y[0], cfg.box_y[1] + 0.5 * spacing, spacing)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    n = X.size
    ix, iy, ipsi = intruder
    return StateBatch(
        ox=X.ravel(), oy=Y.ravel(), opsi=np.full(n, float(own_heading)),
        ix=np.full(n, float(ix)), iy=np.full(n, float(iy)), ipsi=np.full(n, float(ipsi)),
        dev=np.zeros(n, dtype=bool), terminal=np.zeros(n, dtype=bool),
    )


def value_slice(theta, cfg: ScenarioConfig, **kw):
    from .features import value_batch

    b = slice_batch(cfg, **kw)
    return b, value_batch(b, np.asarray(theta, dtype=float), cfg)


def policy_slice(policy, cfg: ScenarioConfig, **kw):
    b = slice_batch(cfg, **kw)
    return b, policy.act_batch(b, cfg)


def export_value_slice(theta, cfg: ScenarioConfig, path, manifest_ref: str, **kw) -> Path:
    b, v = value_slice(theta, cfg, **kw)
    return write_csv(path, ("x", "y", "value"), zip(b.ox, b.oy, v), manifest_ref)


def export_policy_slice(policy, cfg: ScenarioConfig, path, manifest_ref: str, **kw) -> Path:
    b, a = policy_slice(policy, cfg, **kw)
    column = "D" if policy.mode == "trl" else "turn_rate"
    return write_csv(path, ("x", "y", column), zip(b.ox, b.oy, a), manifest_ref)
