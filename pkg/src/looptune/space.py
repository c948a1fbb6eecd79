"""Hyperparameter search spaces: definition, parsing, validation, sampling, rendering.

A search space is a flat, ordered list of hyperparameter definitions. Four
kinds are supported: ``float`` and ``integer`` (range-bounded, optionally
log-scaled), and ``categorical`` / ``ordinal`` (explicit choice lists).
A concrete configuration is a plain dict mapping hyperparameter names to
values; :func:`validate_config` checks such a dict against a space.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping

import numpy as np

KINDS = ("categorical", "integer", "float", "ordinal")
NUMERIC_KINDS = ("integer", "float")
CHOICE_KINDS = ("categorical", "ordinal")

# A concrete assignment of hyperparameter values, keyed by name.
Config = dict[str, Any]


class SchemaError(ValueError):
    """A search-space definition is malformed."""


class ValidationError(ValueError):
    """A configuration violates its search space.

    ``violations`` holds one ``(name, value, expected)`` triple per problem.
    """

    def __init__(self, violations: list[tuple[str, Any, str]]):
        self.violations = violations
        lines = [f"{name}={value!r}: expected {expected}" for name, value, expected in violations]
        super().__init__("invalid configuration: " + "; ".join(lines))


@dataclass(frozen=True)
class HyperparameterSpec:
    """One tunable hyperparameter.

    ``lower``/``upper`` bound numeric kinds (both inclusive); ``choices``
    lists the admissible values for categorical/ordinal kinds. The
    description is free text included when the space is rendered for a
    prompt.
    """

    name: str
    kind: str
    lower: float | None = None
    upper: float | None = None
    choices: tuple[Any, ...] | None = None
    log_scale: bool = False
    description: str = ""

    def __post_init__(self):
        if not self.name:
            raise SchemaError("hyperparameter name must be non-empty")
        if self.kind not in KINDS:
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r} (expected one of {', '.join(KINDS)})")
        if self.kind in NUMERIC_KINDS:
            if self.lower is None or self.upper is None:
                raise SchemaError(f"{self.name}: kind {self.kind!r} requires a [lower, upper] range")
            if self.choices is not None:
                raise SchemaError(f"{self.name}: kind {self.kind!r} does not take choices")
            if not (self.lower < self.upper):
                raise SchemaError(f"{self.name}: range lower bound {self.lower} must be < upper bound {self.upper}")
            if self.kind == "integer" and not (
                float(self.lower).is_integer() and float(self.upper).is_integer()
            ):
                raise SchemaError(f"{self.name}: integer range bounds must be whole numbers")
            if self.log_scale and self.lower <= 0:
                raise SchemaError(f"{self.name}: log_scale requires a strictly positive lower bound, got {self.lower}")
        else:
            if self.choices is None or len(self.choices) == 0:
                raise SchemaError(f"{self.name}: kind {self.kind!r} requires a non-empty choices list")
            if self.lower is not None or self.upper is not None:
                raise SchemaError(f"{self.name}: kind {self.kind!r} does not take a range")
            if self.log_scale:
                raise SchemaError(f"{self.name}: log_scale is only valid for integer/float kinds")
            if len(set(map(repr, self.choices))) != len(self.choices):
                raise SchemaError(f"{self.name}: choices contain duplicates")

    @property
    def is_numeric(self) -> bool:
        return self.kind in NUMERIC_KINDS

    def contains(self, value: Any) -> bool:
        """True iff ``value`` satisfies this spec."""
        if self.kind in CHOICE_KINDS:
            return any(value == c for c in self.choices)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False
        if not math.isfinite(float(value)):
            return False
        if self.kind == "integer" and not float(value).is_integer():
            return False
        return self.lower <= float(value) <= self.upper

    def constraint_text(self) -> str:
        if self.kind in CHOICE_KINDS:
            return f"one of [{', '.join(str(c) for c in self.choices)}]"
        scale = " (log scale)" if self.log_scale else ""
        whole = "a whole number " if self.kind == "integer" else ""
        return f"{whole}in [{_fmt_bound(self.lower, self.log_scale)}, {_fmt_bound(self.upper, self.log_scale)}]{scale}"


@dataclass(frozen=True)
class SearchSpace:
    """Ordered, name-unique collection of hyperparameter specs."""

    specs: tuple[HyperparameterSpec, ...]
    _by_name: dict[str, HyperparameterSpec] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.specs:
            raise SchemaError("search space must declare at least one hyperparameter")
        by_name: dict[str, HyperparameterSpec] = {}
        for spec in self.specs:
            if spec.name in by_name:
                raise SchemaError(f"duplicate hyperparameter name {spec.name!r}")
            by_name[spec.name] = spec
        object.__setattr__(self, "_by_name", by_name)

    def __iter__(self) -> Iterator[HyperparameterSpec]:
        return iter(self.specs)

    def __len__(self) -> int:
        return len(self.specs)

    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    def get(self, name: str) -> HyperparameterSpec:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name


def _spec_from_dict(obj: Mapping[str, Any]) -> HyperparameterSpec:
    allowed = {"name", "kind", "log_scale", "range", "choices", "description"}
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaError(f"unknown keys in hyperparameter definition: {', '.join(sorted(unknown))}")
    name = obj.get("name", "")
    kind = obj.get("kind", "")
    lower = upper = None
    if "range" in obj:
        rng = obj["range"]
        if not (isinstance(rng, (list, tuple)) and len(rng) == 2):
            raise SchemaError(f"{name}: range must be a [lower, upper] pair")
        lower, upper = float(rng[0]), float(rng[1])
    choices = tuple(obj["choices"]) if "choices" in obj else None
    return HyperparameterSpec(
        name=name,
        kind=kind,
        lower=lower,
        upper=upper,
        choices=choices,
        log_scale=bool(obj.get("log_scale", False)),
        description=str(obj.get("description", "")),
    )


def parse_search_space(document: str | Mapping[str, Any]) -> SearchSpace:
    """Parse a search-space document.

    The document is a JSON object (or already-parsed mapping) with a single
    key ``hyperparameters`` holding an array of definitions with keys
    ``name``, ``kind``, ``log_scale``, ``range`` | ``choices`` and
    ``description``. Unknown keys are rejected.
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise SchemaError(f"search-space document is not valid JSON: {e}") from e
    if not isinstance(document, Mapping):
        raise SchemaError("search-space document must be an object")
    unknown = set(document) - {"hyperparameters"}
    if unknown:
        raise SchemaError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    items = document.get("hyperparameters")
    if not isinstance(items, (list, tuple)):
        raise SchemaError("search-space document must contain a 'hyperparameters' array")
    return SearchSpace(specs=tuple(_spec_from_dict(item) for item in items))


def serialize_search_space(space: SearchSpace) -> dict[str, Any]:
    """Inverse of :func:`parse_search_space` (round-trips exactly)."""
    items = []
    for s in space:
        item: dict[str, Any] = {"name": s.name, "kind": s.kind, "log_scale": s.log_scale}
        if s.is_numeric:
            item["range"] = [s.lower, s.upper]
        else:
            item["choices"] = list(s.choices)
        item["description"] = s.description
        items.append(item)
    return {"hyperparameters": items}


def load_search_space(path) -> SearchSpace:
    with open(path, "r", encoding="utf-8") as f:
        return parse_search_space(f.read())


def validate_config(space: SearchSpace, config: Config, mode: str = "reject") -> Config:
    """Check ``config`` against ``space``.

    In ``reject`` mode the config is returned unchanged iff fully valid.
    In ``clamp`` mode numeric out-of-range values are clipped to the nearest
    bound (non-whole integer values are rounded first); categorical
    mismatches and missing or unknown names remain errors in both modes.
    """
    if mode not in ("reject", "clamp"):
        raise ValueError(f"unknown validation mode {mode!r}")
    violations: list[tuple[str, Any, str]] = []
    out: Config = {}
    for name in config:
        if name not in space:
            violations.append((name, config[name], "a declared hyperparameter name"))
    for spec in space:
        if spec.name not in config:
            violations.append((spec.name, None, f"a value ({spec.constraint_text()})"))
            continue
        value = config[spec.name]
        if spec.contains(value):
            out[spec.name] = value
            continue
        if mode == "clamp" and spec.is_numeric and isinstance(value, (int, float)) \
                and not isinstance(value, bool) and math.isfinite(float(value)):
            clipped = min(max(float(value), spec.lower), spec.upper)
            if spec.kind == "integer":
                clipped = int(min(max(round(clipped), spec.lower), spec.upper))
            out[spec.name] = clipped
            continue
        violations.append((spec.name, value, spec.constraint_text()))
    if violations:
        raise ValidationError(violations)
    return dict(config) if mode == "reject" else out


def sample_uniform(space: SearchSpace, rng: np.random.Generator) -> Config:
    """Draw one configuration uniformly at random.

    Plain numeric ranges are sampled uniformly on [lower, upper]; log-scaled
    ranges uniformly in log10 space and exponentiated (integers rounded to
    the nearest whole number and clipped in-range); choice kinds uniformly
    over their choices.
    """
    config: Config = {}
    for spec in space:
        if spec.kind in CHOICE_KINDS:
            config[spec.name] = spec.choices[int(rng.integers(len(spec.choices)))]
        elif spec.log_scale:
            value = 10.0 ** rng.uniform(math.log10(spec.lower), math.log10(spec.upper))
            if spec.kind == "integer":
                value = int(min(max(round(value), spec.lower), spec.upper))
            config[spec.name] = value
        elif spec.kind == "integer":
            config[spec.name] = int(rng.integers(int(spec.lower), int(spec.upper) + 1))
        else:
            config[spec.name] = float(rng.uniform(spec.lower, spec.upper))
    return config


def _fmt_bound(x: float, log_scale: bool) -> str:
    """Render a range bound; log-scaled bounds use scientific notation."""
    if not log_scale:
        if float(x).is_integer() and abs(x) < 1e15:
            return str(int(x))
        return f"{x:g}"
    mantissa, exponent = f"{x:.6e}".split("e")
    mantissa = mantissa.rstrip("0").rstrip(".")
    return f"{mantissa}e{exponent}"


def describe_for_prompt(space: SearchSpace) -> str:
    """Render the space as a deterministic text block, one line per HP.

    Identical spaces produce byte-identical output; this text is what the
    proposal agent sees as its hyperparameter information.
    """
    lines = []
    for s in space:
        if s.is_numeric:
            scale = ", log scale" if s.log_scale else ""
            head = f"- {s.name} ({s.kind}{scale}) in [{_fmt_bound(s.lower, s.log_scale)}, {_fmt_bound(s.upper, s.log_scale)}]"
        else:
            head = f"- {s.name} ({s.kind}), one of [{', '.join(str(c) for c in s.choices)}]"
        lines.append(f"{head}: {s.description}" if s.description else head)
    return "\n".join(lines)
