"""Parametric reward templates.

A reward function is represented as declarative data instead of generated
source code: a named list of terms, each wired to a feature and one or two
parameters. Five term kinds cover every shipped reward (dense and sparse)
for the touch / grasp / push tasks:

  weighted-distance     sign * param * feature
  threshold-bonus       +param        if feature > threshold_param
  threshold-penalty     -param        if feature > threshold_param
  conditional-constant  +param        if feature <op> constant
  collision-penalty     +param        if feature > 0.5   (param is negative)

Templates are immutable values; ``set_params`` returns a new template with
values clipped into their declared ranges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

TERM_KINDS = (
    "weighted-distance",
    "threshold-bonus",
    "threshold-penalty",
    "conditional-constant",
    "collision-penalty",
)

_COND_OPS = {
    "lt": lambda f, c: f < c,
    "le": lambda f, c: f <= c,
    "gt": lambda f, c: f > c,
    "ge": lambda f, c: f >= c,
}

# Feature vocabulary per task. Order is canonical: replay buffers and batch
# evaluation store features as matrix columns in exactly this order.
TASK_FEATURES = {
    "touch": ("distance_to_target", "contact_force", "contacted", "collision"),
    "grasp": ("distance_to_target", "contacted", "object_height", "lift_height", "collision"),
    "push": ("distance_to_target", "distance_to_goal", "collision"),
}

# Fixed structural constant in the grasp lift term: height above this floor
# offset counts as lift progress.
LIFT_FLOOR_OFFSET = 0.01


class TemplateError(ValueError):
    """Malformed template definition or spec text."""


class UnknownParameterError(KeyError):
    """A parameter name that does not exist in the template."""


class MissingFeatureError(KeyError):
    """A feature required by a term is absent from the inputs."""


@dataclass(frozen=True)
class RewardTerm:
    """One additive term of a reward template.

    ``param`` is the tunable value parameter. ``threshold_param`` names a
    second tunable parameter for threshold-* kinds (it may alias ``param``,
    as in the touch force penalty). ``cond_op``/``cond_value`` define the
    fixed structural condition of conditional-constant terms.
    """

    kind: str
    feature: str
    param: str
    sign: int = 1
    threshold_param: str | None = None
    cond_op: str | None = None
    cond_value: float | None = None

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise TemplateError(f"unknown term kind {self.kind!r}")
        if self.kind in ("threshold-bonus", "threshold-penalty") and not self.threshold_param:
            raise TemplateError(f"{self.kind} term on {self.feature!r} needs threshold=<param>")
        if self.kind == "conditional-constant":
            if self.cond_op not in _COND_OPS or self.cond_value is None:
                raise TemplateError(
                    f"conditional-constant term on {self.feature!r} needs when=<op>:<value>"
                )
        if self.sign not in (1, -1):
            raise TemplateError("sign must be +1 or -1")

    @property
    def params(self) -> tuple[str, ...]:
        if self.threshold_param and self.threshold_param != self.param:
            return (self.param, self.threshold_param)
        return (self.param,)


@dataclass(frozen=True)
class RewardTemplate:
    """A parametric reward: ordered terms + current parameter values + ranges."""

    name: str
    terms: tuple[RewardTerm, ...]
    params: dict[str, float]
    ranges: dict[str, tuple[float, float]]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "ranges", {k: (float(v[0]), float(v[1])) for k, v in self.ranges.items()})
        self.validate()

    def validate(self):
        for term in self.terms:
            for p in term.params:
                if p not in self.params:
                    raise TemplateError(f"term references undeclared parameter {p!r}")
                if p not in self.ranges:
                    raise TemplateError(f"parameter {p!r} has no declared range")
        for name, value in self.params.items():
            lo, hi = self.ranges[name]
            if lo > hi:
                raise TemplateError(f"empty range for {name!r}: [{lo}, {hi}]")
            if not (lo <= value <= hi):
                raise TemplateError(f"{name!r}={value} outside range [{lo}, {hi}]")

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(self.params)

    def referenced_features(self) -> tuple[str, ...]:
        seen = []
        for term in self.terms:
            if term.feature not in seen:
                seen.append(term.feature)
        return tuple(seen)

    def value_params(self) -> tuple[str, ...]:
        """Parameters the reward is linear in (value params of every term)."""
        seen = []
        for term in self.terms:
            if term.param not in seen:
                seen.append(term.param)
        return tuple(seen)

    def set_params(self, new: dict[str, float]) -> "RewardTemplate":
        """Return a copy with updated values, clipped into declared ranges."""
        for name in new:
            if name not in self.params:
                raise UnknownParameterError(name)
        merged = dict(self.params)
        for name, value in new.items():
            lo, hi = self.ranges[name]
            merged[name] = float(min(max(value, lo), hi))
        return replace(self, params=merged)


def term_value(term: RewardTerm, params: dict[str, float], features) -> float:
    """Evaluate a single term against one feature mapping."""
    try:
        f = features[term.feature]
    except KeyError:
        raise MissingFeatureError(term.feature) from None
    w = params[term.param]
    if term.kind == "weighted-distance":
        return term.sign * (w * f)
    if term.kind == "threshold-bonus":
        return w if f > params[term.threshold_param] else 0.0
    if term.kind == "threshold-penalty":
        return -w if f > params[term.threshold_param] else 0.0
    if term.kind == "conditional-constant":
        return w if _COND_OPS[term.cond_op](f, term.cond_value) else 0.0
    # collision-penalty: param carries its own (negative) sign
    return w if f > 0.5 else 0.0


def evaluate(template: RewardTemplate, features) -> float:
    """Reward value for one step: the sum of all terms.

    ``features`` is any mapping feature-name -> float. Pure in
    (params, features); raises MissingFeatureError when a referenced
    feature is absent.
    """
    total = 0.0
    for term in template.terms:
        total += term_value(term, template.params, features)
    return total


def evaluate_batch(template: RewardTemplate, X: np.ndarray, feature_order) -> np.ndarray:
    """Vectorized ``evaluate`` over rows of a feature matrix.

    X has one row per step and columns ordered as ``feature_order``.
    Accumulates terms in the same order as ``evaluate`` so each row is
    bit-identical to the scalar path.
    """
    col = {name: i for i, name in enumerate(feature_order)}
    params = template.params
    total = np.zeros(X.shape[0])
    for term in template.terms:
        if term.feature not in col:
            raise MissingFeatureError(term.feature)
        f = X[:, col[term.feature]]
        w = params[term.param]
        if term.kind == "weighted-distance":
            total += term.sign * (w * f)
        elif term.kind == "threshold-bonus":
            total += np.where(f > params[term.threshold_param], w, 0.0)
        elif term.kind == "threshold-penalty":
            total += np.where(f > params[term.threshold_param], -w, 0.0)
        elif term.kind == "conditional-constant":
            total += np.where(_COND_OPS[term.cond_op](f, term.cond_value), w, 0.0)
        else:
            total += np.where(f > 0.5, w, 0.0)
    return total


def features_return(template: RewardTemplate, feature_rows) -> float:
    """Sum of per-step rewards over a sequence of feature mappings."""
    return float(sum(evaluate(template, row) for row in feature_rows))


def extract_features(obs, task: str):
    """Map a raw observation to the named feature values the task uses.

    Distances are euclidean in meters, forces in newtons, flags 0/1.
    Deterministic; raises MissingFeatureError naming the first absent
    observation field.
    """
    if task not in TASK_FEATURES:
        raise ValueError(f"unknown task {task!r}")

    def need(name):
        value = getattr(obs, name, None)
        if value is None:
            raise MissingFeatureError(name)
        return value

    ee = np.asarray(need("ee_pose"), dtype=float)[:3]
    obj = np.asarray(need("target_object_pos"), dtype=float)
    force = float(need("ee_contact_force"))
    collision = 1.0 if need("collision_flag") else 0.0
    feats = {
        "distance_to_target": float(np.linalg.norm(ee - obj)),
        "collision": collision,
    }
    if task == "touch":
        feats["contact_force"] = force
        feats["contacted"] = 1.0 if force > 0.0 else 0.0
    elif task == "grasp":
        height = float(obj[2])
        feats["contacted"] = 1.0 if force > 0.0 else 0.0
        feats["object_height"] = height
        feats["lift_height"] = max(0.0, height - LIFT_FLOOR_OFFSET)
    else:  # push
        goal = np.asarray(need("goal_pos"), dtype=float)
        feats["distance_to_goal"] = float(np.linalg.norm(obj - goal))
    return feats


# ---------------------------------------------------------------------------
# Template spec text: parse / serialize
#
# Grammar (line oriented; '#' starts a comment):
#   template <name>
#   params:
#       <param> = <float>
#   ranges:
#       <param> = [<float|-inf>, <float|inf>]
#   terms:
#       <kind> feature=<name> param=<name> [sign=+|-] [threshold=<param>]
#              [when=<lt|le|gt|ge>:<float>]
# ---------------------------------------------------------------------------


def _parse_float(text: str, lineno: int) -> float:
    t = text.strip()
    if t in ("inf", "+inf", "np.inf"):
        return math.inf
    if t in ("-inf", "-np.inf"):
        return -math.inf
    try:
        return float(t)
    except ValueError:
        raise TemplateError(f"line {lineno}: expected a number, got {t!r}") from None


def parse_template(text: str) -> RewardTemplate:
    """Parse a template spec document. Errors carry the offending line."""
    name = None
    params: dict[str, float] = {}
    ranges: dict[str, tuple[float, float]] = {}
    terms: list[RewardTerm] = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("template"):
            parts = line.split()
            if len(parts) != 2:
                raise TemplateError(f"line {lineno}: expected 'template <name>'")
            name = parts[1]
        elif line in ("params:", "ranges:", "terms:"):
            section = line[:-1]
        elif section in ("params", "ranges"):
            if "=" not in line:
                raise TemplateError(f"line {lineno}: expected '<param> = <value>'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if section == "params":
                params[key] = _parse_float(value, lineno)
            else:
                if not (value.startswith("[") and value.endswith("]")):
                    raise TemplateError(f"line {lineno}: range must look like [lo, hi]")
                lo, _, hi = value[1:-1].partition(",")
                ranges[key] = (_parse_float(lo, lineno), _parse_float(hi, lineno))
        elif section == "terms":
            fields = line.split()
            kind = fields[0]
            attrs = {}
            for item in fields[1:]:
                if "=" not in item:
                    raise TemplateError(f"line {lineno}: bad term attribute {item!r}")
                k, _, v = item.partition("=")
                attrs[k] = v
            try:
                feature = attrs.pop("feature")
                param = attrs.pop("param")
            except KeyError as exc:
                raise TemplateError(f"line {lineno}: term missing {exc.args[0]}=") from None
            sign = {"+": 1, "-": -1}.get(attrs.pop("sign", "+"))
            if sign is None:
                raise TemplateError(f"line {lineno}: sign must be + or -")
            threshold = attrs.pop("threshold", None)
            cond_op = cond_value = None
            if "when" in attrs:
                op, _, cval = attrs.pop("when").partition(":")
                cond_op, cond_value = op, _parse_float(cval, lineno)
            if attrs:
                raise TemplateError(f"line {lineno}: unknown term attribute {sorted(attrs)[0]!r}")
            try:
                terms.append(
                    RewardTerm(kind, feature, param, sign=sign, threshold_param=threshold,
                               cond_op=cond_op, cond_value=cond_value)
                )
            except TemplateError as exc:
                raise TemplateError(f"line {lineno}: {exc}") from None
        else:
            raise TemplateError(f"line {lineno}: statement outside any section: {line!r}")
    if name is None:
        raise TemplateError("missing 'template <name>' line")
    if not terms:
        raise TemplateError(f"template {name!r} declares no terms")
    return RewardTemplate(name=name, terms=tuple(terms), params=params, ranges=ranges)


def _fmt(value: float) -> str:
    if value == math.inf:
        return "inf"
    if value == -math.inf:
        return "-inf"
    return repr(value)


def serialize_template(template: RewardTemplate) -> str:
    """Render a template back to spec text; parse(serialize(t)) == t."""
    lines = [f"template {template.name}", "", "params:"]
    for name, value in template.params.items():
        lines.append(f"    {name} = {_fmt(value)}")
    lines += ["", "ranges:"]
    for name, (lo, hi) in template.ranges.items():
        lines.append(f"    {name} = [{_fmt(lo)}, {_fmt(hi)}]")
    lines += ["", "terms:"]
    for term in template.terms:
        bits = [term.kind, f"feature={term.feature}", f"param={term.param}"]
        if term.kind == "weighted-distance":
            bits.append(f"sign={'+' if term.sign > 0 else '-'}")
        if term.threshold_param:
            bits.append(f"threshold={term.threshold_param}")
        if term.cond_op:
            bits.append(f"when={term.cond_op}:{_fmt(term.cond_value)}")
        lines.append("    " + "  ".join(bits))
    return "\n".join(lines) + "\n"


_SHIPPED = {
    "touch": "touch.tmpl",
    "grasp": "grasp.tmpl",
    "push": "push.tmpl",
    "touch_sparse": "touch_sparse.tmpl",
    "grasp_sparse": "grasp_sparse.tmpl",
    "push_sparse": "push_sparse.tmpl",
}


def load_template(name: str) -> RewardTemplate:
    """Load a shipped template ('touch', 'push_sparse', ...) or a file path."""
    if name in _SHIPPED:
        text = resources.files(__package__).joinpath("templates", _SHIPPED[name]).read_text()
    else:
        with open(name) as fh:
            text = fh.read()
    return parse_template(text)
