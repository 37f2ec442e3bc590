"""Experiment configuration: INI parsing, schema validation, resolution.

The file format is flat INI with ``key = value`` pairs:

    [experiment]
    kind = equilibrium        ; one of EXPERIMENT_KINDS
    seed = 12345
    output_dir = out/run1
    threads = 1

    [model]
    n = 3
    d = 1
    lambda = 1.0
    gamma = 1.0
    sigma = 0.0               ; only used by reservoir = ou2
    t1 = 0.5
    tn = 0.5
    reservoir = ou1
    one_body = 0.5 x^2        ; sum of even-power terms "c x^k + c x^k"
    two_body = 0.5 x^2

    [integrator]
    scheme = strang_split
    dt = 0.01
    steps = 100000
    thin = 10
    blowup_threshold = 1e12

plus one experiment-specific section named after the kind.  Unknown
sections or keys are rejected.  ``resolve`` fills in defaults and
returns both the typed objects and the fully-resolved INI text that is
embedded into summary.json (re-running from that text reproduces the
outputs byte for byte).
"""

from __future__ import annotations

import configparser
import io
import re
from dataclasses import dataclass, field
from typing import Any

from .chain_model import ChainParams, PotentialSpec, PotentialTerm, validate_growth
from .sde_dynamics import IntegratorConfig, Model

EXPERIMENT_KINDS = (
    "equilibrium", "ness", "dissipation-scaling", "tracking", "liapunov",
    "hitting", "rank", "oracle-compare", "correlation",
)


class ConfigError(ValueError):
    """Configuration file failed parsing or validation."""


_TERM_RE = re.compile(r"^\s*([+-]?[0-9.eE+-]+)\s*\*?\s*x\s*\^\s*([0-9]+)\s*$")


def parse_potential(text: str) -> tuple[PotentialTerm, ...]:
    """Parse ``"c x^k + c x^k"`` into potential terms."""
    text = text.strip()
    if not text:
        return ()
    terms = []
    # split on + that separates terms (not the sign of a coefficient)
    parts = re.split(r"(?<=[0-9.])\s*\+\s*(?=[+-]?[0-9.])", text)
    for part in parts:
        m = _TERM_RE.match(part)
        if not m:
            raise ConfigError(
                f"cannot parse potential term {part!r}; expected 'c x^k'"
            )
        try:
            terms.append(PotentialTerm(float(m.group(1)), int(m.group(2))))
        except ValueError as exc:
            raise ConfigError(f"invalid potential term {part!r}: {exc}") from exc
    return tuple(terms)


def format_potential(terms) -> str:
    return " + ".join(f"{t.coefficient:g} x^{t.exponent}" for t in terms)


# schema: section -> key -> (type, default); REQUIRED means no default
REQUIRED = object()

_SCHEMA: dict[str, dict[str, tuple]] = {
    "experiment": {
        "kind": (str, REQUIRED),
        "seed": (int, 12345),
        "output_dir": (str, "out"),
        "threads": (int, 1),
    },
    "model": {
        "n": (int, 3),
        "d": (int, 1),
        "lambda": (float, 1.0),
        "gamma": (float, 1.0),
        "sigma": (float, 0.0),
        "t1": (float, REQUIRED),
        "tn": (float, REQUIRED),
        "reservoir": (str, "ou1"),
        "one_body": (str, REQUIRED),
        "two_body": (str, REQUIRED),
    },
    "integrator": {
        "scheme": (str, "strang_split"),
        "dt": (float, 0.01),
        "steps": (int, 100_000),
        "thin": (int, 10),
        "blowup_threshold": (float, 1e12),
    },
    "equilibrium": {
        "burn_in_steps": (int, 10_000),
        "write_trajectory": (bool, False),
    },
    "ness": {
        "burn_in_steps": (int, 10_000),
        "write_trajectory": (bool, False),
    },
    "dissipation-scaling": {
        "energies": (str, "1e3,1e4,1e5,1e6"),
        "tau": (float, 1.0),
        "samples_per_e": (int, 8),
        "dt_coeff": (float, 4e-6),
    },
    "tracking": {
        "energies": (str, "1e4,1e6"),
        "tau": (float, 1.0),
        "paths_per_e": (int, 16),
        "dt_coeff": (float, 1e-5),
    },
    "liapunov": {
        "s": (float, 1.0),
        "theta": (float, 0.25),
        "n_states": (int, 20),
        "n_samples": (int, 200),
        "energy": (float, 100.0),
        "dt": (float, 0.0),          # 0 selects the adaptive default
    },
    "hitting": {
        "e0": (float, 0.0),          # 0 selects the pilot-run quantile
        "pilot_steps": (int, 200_000),
        "e0_quantile": (float, 0.99),
        "energy_factor": (float, 10.0),
        "a": (float, 0.5),
        "n_samples": (int, 1000),
        "t_max": (float, 1000.0),
        "dt": (float, 0.0),
    },
    "rank": {
        "n_points": (int, 100),
        "max_depth": (int, 4),
        "radius": (float, 1.0),
    },
    "oracle-compare": {
        "burn_in_steps": (int, 10_000),
        "simulate": (bool, True),
    },
    "correlation": {
        "observable": (str, "q_1_1"),
        "burn_in_steps": (int, 10_000),
        "max_lag_time": (float, 10.0),
        "fit_lo": (float, 0.0),
        "fit_hi": (float, 2.0),
    },
}

_BOOL_TRUE = ("1", "true", "yes", "on")
_BOOL_FALSE = ("0", "false", "no", "off")


def _convert(section: str, key: str, raw: str, typ) -> Any:
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


@dataclass
class ExperimentConfig:
    """Fully resolved experiment configuration."""

    kind: str
    seed: int
    output_dir: str
    threads: int
    model: Model
    integrator: IntegratorConfig
    options: dict[str, Any]
    resolved: dict[str, dict[str, Any]] = field(default_factory=dict)

    def resolved_ini(self) -> str:
        """Render the resolved configuration back to INI text."""
        out = io.StringIO()
        for section in ("experiment", "model", "integrator", self.kind):
            out.write(f"[{section}]\n")
            for key, value in self.resolved[section].items():
                if isinstance(value, bool):
                    value = "true" if value else "false"
                out.write(f"{key} = {value}\n")
            out.write("\n")
        return out.getvalue()


def _read_ini(path_or_text: str, is_text: bool = False) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"),
                                       interpolation=None)
    try:
        if is_text:
            parser.read_string(path_or_text)
        else:
            with open(path_or_text, "r") as fh:
                parser.read_string(fh.read(), source=str(path_or_text))
    except configparser.Error as exc:
        raise ConfigError(f"INI parse error: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parser


def resolve(path_or_text: str, is_text: bool = False,
            overrides: dict | None = None) -> ExperimentConfig:
    """Parse, validate and resolve a configuration file.

    ``overrides`` may remap ``output_dir``, ``seed`` and ``threads``
    (the CLI flags).  Raises :class:`ConfigError` on unknown sections or
    keys, missing required keys, type errors, or a model violating the
    growth condition (the H1 check in ``validate_growth``).
    """
    parser = _read_ini(path_or_text, is_text)
    if "experiment" not in parser:
        raise ConfigError("missing [experiment] section")
    kind = parser.get("experiment", "kind", fallback=None)
    if kind is None:
        raise ConfigError("[experiment] kind: missing required key")
    kind = kind.strip()
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(
            f"[experiment] kind: unknown experiment {kind!r}; "
            f"expected one of {', '.join(EXPERIMENT_KINDS)}"
        )

    allowed_sections = {"experiment", "model", "integrator", kind}
    for section in parser.sections():
        if section not in allowed_sections:
            raise ConfigError(f"unknown section [{section}]")
        schema = _SCHEMA[section]
        for key in parser[section]:
            if key not in schema:
                raise ConfigError(f"[{section}] unknown key {key!r}")

    resolved: dict[str, dict[str, Any]] = {}
    for section in ("experiment", "model", "integrator", kind):
        schema = _SCHEMA[section]
        resolved[section] = {}
        for key, (typ, default) in schema.items():
            if parser.has_option(section, key):
                resolved[section][key] = _convert(
                    section, key, parser.get(section, key), typ)
            elif default is REQUIRED:
                raise ConfigError(f"[{section}] {key}: missing required key")
            else:
                resolved[section][key] = default

    if overrides:
        for key in ("output_dir", "seed", "threads"):
            if overrides.get(key) is not None:
                resolved["experiment"][key] = overrides[key]

    mdl = resolved["model"]
    one_body = parse_potential(mdl["one_body"])
    two_body = parse_potential(mdl["two_body"])
    if not two_body:
        raise ConfigError("[model] two_body: needs at least one term")
    try:
        spec = PotentialSpec(one_body=one_body, two_body=two_body)
        params = ChainParams(
            n=mdl["n"], d=mdl["d"], lam=mdl["lambda"], gamma=mdl["gamma"],
            sigma=mdl["sigma"], temperatures=(mdl["t1"], mdl["tn"]),
            reservoir_kind=mdl["reservoir"],
        )
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}") from exc
    report = validate_growth(spec, params)
    if not report.passed:
        raise ConfigError(
            "[model] potential violates growth condition H1: "
            + "; ".join(report.reasons)
        )
    model = Model(spec, params)

    # canonicalize the potential text so resolved_ini round-trips exactly
    resolved["model"]["one_body"] = format_potential(one_body)
    resolved["model"]["two_body"] = format_potential(two_body)

    integ = resolved["integrator"]
    try:
        integrator = IntegratorConfig(
            scheme=integ["scheme"], dt=integ["dt"], steps=integ["steps"],
            seed=resolved["experiment"]["seed"], thin=integ["thin"],
            blowup_threshold=integ["blowup_threshold"],
        )
    except ValueError as exc:
        raise ConfigError(f"[integrator] {exc}") from exc

    exp = resolved["experiment"]
    if exp["threads"] < 1:
        raise ConfigError("[experiment] threads must be >= 1")
    return ExperimentConfig(
        kind=kind,
        seed=exp["seed"],
        output_dir=exp["output_dir"],
        threads=exp["threads"],
        model=model,
        integrator=integrator,
        options=dict(resolved[kind]),
        resolved=resolved,
    )


def validation_report(path: str) -> tuple[bool, list[str]]:
    """Validate without running; returns (ok, messages)."""
    messages: list[str] = []
    try:
        cfg = resolve(path)
    except ConfigError as exc:
        return False, [str(exc)]
    report = validate_growth(cfg.model.spec, cfg.model.params)
    messages.extend(f"warning: {w}" for w in report.warnings)
    if cfg.integrator.scheme == "euler_maruyama" \
            and cfg.integrator.dt * cfg.model.params.gamma >= 1.0:
        messages.append("warning: euler_maruyama with dt*gamma >= 1")
    messages.append("ok")
    return True, messages
