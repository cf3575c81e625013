"""Fuzzy selection of the motion model used for the next prediction.

Innovation magnitudes are fuzzified into Low/Medium/High degrees, rules keyed
by ``(positional level, rotational level, current model)`` fire with the
product t-norm, and the consequent of the strongest rule becomes the next
model.
"""

from __future__ import annotations

import enum
import itertools
import math
import os
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, NamedTuple, Optional, Sequence


class Level(enum.IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, text: str) -> "Level":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown level {text!r}") from None


@dataclass(frozen=True, order=True)
class MotionModel:
    """Transition ``PiRj``: position velocity coefficient i, rotation coefficient j."""

    i: int
    j: int

    def __post_init__(self):
        if self.i not in (0, 1, 2) or self.j not in (0, 1, 2):
            raise ValueError(f"velocity coefficients must be 0, 1 or 2, got ({self.i}, {self.j})")

    @property
    def name(self) -> str:
        return f"P{self.i}R{self.j}"

    def __str__(self):
        return self.name

    @classmethod
    def parse(cls, text: str) -> "MotionModel":
        s = text.strip().upper()
        if len(s) != 4 or s[0] != "P" or s[2] != "R" or not (s[1].isdigit() and s[3].isdigit()):
            raise ValueError(f"malformed motion model {text!r}")
        return cls(int(s[1]), int(s[3]))

    def distance(self, other: "MotionModel") -> int:
        return abs(self.i - other.i) + abs(self.j - other.j)


ALL_MODELS = tuple(MotionModel(i, j) for i in range(3) for j in range(3))
CMM = MotionModel(1, 1)
STATIONARY = MotionModel(0, 0)


class MembershipDegrees(NamedTuple):
    low: float
    medium: float
    high: float


@dataclass(frozen=True)
class MembershipConfig:
    """Breakpoints ``(low_peak, medium_peak, high_saturation)`` per input.

    Positional breakpoints are meters, rotational ones radians.
    """

    positional: tuple = (8.0, 16.0, 24.0)
    rotational: tuple = (math.radians(2.0), math.radians(5.0), math.radians(10.0))

    def __post_init__(self):
        for name in ("positional", "rotational"):
            bp = tuple(float(v) for v in getattr(self, name))
            if len(bp) != 3 or not (0 <= bp[0] < bp[1] < bp[2]) or not all(map(math.isfinite, bp)):
                raise ValueError(f"{name} breakpoints must be three increasing nonnegative values, got {bp}")
            object.__setattr__(self, name, bp)


def fuzzify(mag: float, breakpoints) -> MembershipDegrees:
    """Triangular Low/Medium/High degrees of a nonnegative magnitude.

    Low is 1 up to the first breakpoint and falls to 0 at the second; High
    rises from 0 at the second to 1 at the third; Medium takes the rest, so
    the three degrees always sum to one.
    """
    mag = float(mag)
    if not mag >= 0:
        raise ValueError(f"magnitude must be nonnegative, got {mag}")
    lo, md, hi = breakpoints
    if mag <= lo:
        low = 1.0
    elif mag < md:
        low = (md - mag) / (md - lo)
    else:
        low = 0.0
    if mag <= md:
        high = 0.0
    elif mag < hi:
        high = (mag - md) / (hi - md)
    else:
        high = 1.0
    return MembershipDegrees(low, 1.0 - low - high, high)


class Rule(NamedTuple):
    yp_level: Level
    yr_level: Level
    current: MotionModel
    next: MotionModel

    @property
    def key(self):
        return (self.yp_level, self.yr_level, self.current)

    def format(self) -> str:
        return f"{self.yp_level.label},{self.yr_level.label},{self.current.name},{self.next.name}"


def _rows(text: str):
    return tuple(tuple(line.split()) for line in text.strip().splitlines())


# The 54 rules that every rule base must contain verbatim.
CANONICAL_RULES = _rows(
    """
    Low Low P0R0 P0R0
    Low Medium P0R0 P0R1
    Low High P0R0 P0R2
    Low Low P0R2 P0R2
    Low Medium P0R2 P0R1
    Low High P0R2 P0R0
    Low Low P1R0 P1R0
    Low Medium P1R0 P1R1
    Low High P1R0 P1R2
    Low Low P1R2 P1R2
    Low Medium P1R2 P1R1
    Low High P1R2 P1R0
    Low Low P2R0 P2R0
    Low Medium P2R0 P2R1
    Low High P2R0 P2R2
    Low Low P2R2 P2R2
    Low Medium P2R2 P2R1
    Low High P2R2 P2R0
    Medium Low P0R0 P1R0
    Medium Medium P0R0 P1R1
    Medium High P0R0 P1R2
    Medium Low P0R2 P1R2
    Medium Medium P0R2 P1R1
    Medium High P0R2 P1R0
    Medium Low P1R0 P2R0
    Medium Medium P1R0 P2R1
    Medium High P1R0 P2R2
    Medium Low P1R2 P2R2
    Medium Medium P1R2 P2R1
    Medium High P1R2 P2R0
    Medium Low P2R0 P1R0
    Medium Medium P2R0 P1R1
    Medium High P2R0 P1R2
    Medium Low P2R2 P1R2
    Medium Medium P2R2 P1R1
    Medium High P2R2 P1R0
    High Low P0R0 P2R0
    High Medium P0R0 P2R1
    High High P0R0 P2R2
    High Low P0R2 P2R2
    High Medium P0R2 P2R1
    High High P0R2 P2R0
    High Low P1R0 P0R0
    High Medium P1R0 P0R1
    High High P1R0 P0R2
    High Low P1R2 P0R2
    High Medium P1R2 P0R1
    High High P1R2 P0R0
    High Low P2R0 P0R0
    High Medium P2R0 P0R1
    High High P2R0 P0R2
    High Low P2R2 P0R2
    High Medium P2R2 P0R1
    High High P2R2 P0R0
    """
)

# Coefficient maps per input level; index = current coefficient.
POSITIONAL_PATTERN = {Level.LOW: (0, 1, 2), Level.MEDIUM: (1, 2, 1), Level.HIGH: (2, 0, 0)}
ROTATIONAL_PATTERN = {Level.LOW: (0, 1, 2), Level.MEDIUM: (1, 1, 1), Level.HIGH: (2, 1, 0)}

ALL_KEYS = tuple(
    (yp, yr, model) for yp in Level for yr in Level for model in ALL_MODELS
)


def generate_rules(rotational_high_from_one: int = 1) -> list:
    """All 81 rules from the per-axis coefficient patterns.

    ``rotational_high_from_one`` is the rotational coefficient chosen when
    the rotational innovation is High and the current coefficient is 1.
    """
    rot = dict(ROTATIONAL_PATTERN)
    high = list(rot[Level.HIGH])
    high[1] = int(rotational_high_from_one)
    rot[Level.HIGH] = tuple(high)
    return [
        Rule(yp, yr, m, MotionModel(POSITIONAL_PATTERN[yp][m.i], rot[yr][m.j]))
        for yp, yr, m in ALL_KEYS
    ]


class RuleBaseError(ValueError):
    def __init__(self, message, key=None, lines=()):
        super().__init__(message)
        self.key = key
        self.lines = tuple(lines)


class ControllerStall(RuntimeError):
    pass


def _key_text(key) -> str:
    return f"({key[0].label}, {key[1].label}, {key[2].name})"


class RuleBase:
    """Immutable lookup table of exactly one rule per antecedent key."""

    def __init__(self, rules: Iterable[Rule], check_canonical: bool = True):
        table = {}
        for rule in rules:
            if rule.key in table:
                raise RuleBaseError(f"duplicate rule for {_key_text(rule.key)}", rule.key)
            table[rule.key] = rule
        for key in ALL_KEYS:
            if key not in table:
                raise RuleBaseError(f"missing rule for {_key_text(key)}", key)
        if check_canonical:
            for row in CANONICAL_RULES:
                rule = _parse_row(row)
                if table[rule.key].next != rule.next:
                    raise RuleBaseError(
                        f"rule {_key_text(rule.key)} must map to {rule.next.name}, "
                        f"got {table[rule.key].next.name}",
                        rule.key,
                    )
        # canonical order doubles as the tie-breaking table index
        self._rules = tuple(table[key] for key in ALL_KEYS)
        self._table = dict(table)
        self._index = {rule.key: k for k, rule in enumerate(self._rules)}
        self._by_current = {
            m: tuple(r for r in self._rules if r.current == m) for m in ALL_MODELS
        }

    def __len__(self):
        return len(self._rules)

    def __iter__(self):
        return iter(self._rules)

    def lookup(self, yp: Level, yr: Level, current: MotionModel) -> MotionModel:
        return self._table[(yp, yr, current)].next

    def index(self, rule: Rule) -> int:
        return self._index[rule.key]

    def rules_for(self, current: MotionModel):
        return self._by_current[current]

    def unreachable(self):
        """Models that no rule selects as its consequent."""
        used = {r.next for r in self._rules}
        return [m for m in ALL_MODELS if m not in used]

    def to_text(self) -> str:
        return "\n".join(r.format() for r in self._rules) + "\n"


def _parse_row(row: Sequence[str]) -> Rule:
    if len(row) != 4:
        raise ValueError(f"expected 4 fields, got {len(row)}")
    return Rule(Level.parse(row[0]), Level.parse(row[1]), MotionModel.parse(row[2]), MotionModel.parse(row[3]))


class RuleFileReport(NamedTuple):
    rules: tuple  # (line_number, Rule) pairs that parsed
    problems: tuple  # human-readable messages, each naming line numbers or keys

    @property
    def ok(self) -> bool:
        return not self.problems


def check_rule_lines(lines: Iterable[str]) -> RuleFileReport:
    """Parse rule-file lines and collect every violation instead of stopping at one."""
    parsed = []
    problems = []
    seen = {}
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            rule = _parse_row([f.strip() for f in text.split(",")])
        except ValueError as exc:
            problems.append(f"line {lineno}: {exc}")
            continue
        if rule.key in seen:
            problems.append(
                f"lines {seen[rule.key]} and {lineno}: duplicate rule for {_key_text(rule.key)}"
            )
            continue
        seen[rule.key] = lineno
        parsed.append((lineno, rule))
    for key in ALL_KEYS:
        if key not in seen:
            problems.append(f"missing rule for {_key_text(key)}")
    by_key = {rule.key: (lineno, rule) for lineno, rule in parsed}
    for row in CANONICAL_RULES:
        expected = _parse_row(row)
        if expected.key in by_key:
            lineno, rule = by_key[expected.key]
            if rule.next != expected.next:
                problems.append(
                    f"line {lineno}: rule {_key_text(rule.key)} must map to {expected.next.name}, "
                    f"got {rule.next.name}"
                )
    return RuleFileReport(tuple(parsed), tuple(problems))


def default_rule_path():
    return resources.files("fammfusion") / "data" / "rules_default.txt"


def load_rules(path=None) -> RuleBase:
    """Load and validate a rule file; the packaged default when ``path`` is None."""
    if path is None:
        text = default_rule_path().read_text()
        name = "default rule file"
    else:
        with open(os.fspath(path)) as fh:
            text = fh.read()
        name = os.fspath(path)
    report = check_rule_lines(text.splitlines())
    if not report.ok:
        raise RuleBaseError(f"{name}: " + "; ".join(report.problems))
    return RuleBase(rule for _, rule in report.rules)


def build_rulebase(source=None) -> RuleBase:
    """Rule base from a file path, a generator option dict, or the packaged default."""
    if source is None or isinstance(source, (str, os.PathLike)):
        return load_rules(source)
    if isinstance(source, dict):
        return RuleBase(generate_rules(**source))
    return RuleBase(source)


def fire_rules(yp: MembershipDegrees, yr: MembershipDegrees, current: MotionModel, rb: RuleBase):
    """Firing strength of every rule: product of the two input degrees.

    Rules whose third antecedent differs from ``current`` get zero.
    """
    out = []
    for rule in rb:
        if rule.current != current:
            out.append((rule, 0.0))
        else:
            out.append((rule, yp[rule.yp_level] * yr[rule.yr_level]))
    return out


def select_model(fired, rb: Optional[RuleBase] = None) -> MotionModel:
    """Consequent of the strongest rule.

    Ties go to the consequent closest to the current model (sum of
    coefficient differences), then to the lowest table index.

    Raises
    ------
    ControllerStall
        If no rule has positive strength.
    """
    fired = list(fired)
    best = max((s for _, s in fired), default=0.0)
    if not best > 0:
        raise ControllerStall("no rule fired with positive strength")
    candidates = [(k, r) for k, (r, s) in enumerate(fired) if s == best]
    if rb is not None:
        candidates = [(rb.index(r), r) for _, r in candidates]
    _, rule = min(candidates, key=lambda kr: (kr[1].next.distance(kr[1].current), kr[0]))
    return rule.next


class FammController:
    """Stateful model selector fed with one innovation per filter step."""

    def __init__(self, rulebase: Optional[RuleBase] = None, memberships: Optional[MembershipConfig] = None,
                 initial: MotionModel = STATIONARY):
        self.rulebase = rulebase if rulebase is not None else load_rules()
        self.memberships = memberships or MembershipConfig()
        self.model = initial

    def observe(self, y_p_mag: float, y_r_mag: float) -> MotionModel:
        yp = fuzzify(y_p_mag, self.memberships.positional)
        yr = fuzzify(y_r_mag, self.memberships.rotational)
        best, choice = 0.0, None
        # only the nine rules for the current model can fire
        for rule in self.rulebase.rules_for(self.model):
            s = yp[rule.yp_level] * yr[rule.yr_level]
            if s > best:
                best, choice = s, rule
            elif s == best and choice is not None and rule.next.distance(self.model) < choice.next.distance(self.model):
                choice = rule
        if choice is None:
            raise ControllerStall("no rule fired with positive strength")
        self.model = choice.next
        return self.model


class ConstantController:
    """Fixed model, ignoring innovations (the constant motion model by default)."""

    def __init__(self, model: MotionModel = CMM):
        self.model = model

    def observe(self, y_p_mag: float, y_r_mag: float) -> MotionModel:
        return self.model


def crisp_corners():
    """Every (positional, rotational, model) triple with one-hot degrees."""
    for yp, yr, m in itertools.product(Level, Level, ALL_MODELS):
        dp = [0.0, 0.0, 0.0]
        dr = [0.0, 0.0, 0.0]
        dp[yp] = 1.0
        dr[yr] = 1.0
        yield yp, yr, m, MembershipDegrees(*dp), MembershipDegrees(*dr)
