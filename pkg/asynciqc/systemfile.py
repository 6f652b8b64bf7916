"""JSON system files describing the plant P, filter F and weight W.

Each block is either a transfer function::

    {"num": [1.0], "den": [1.0, 0.0]}

(descending powers) or an explicit realization with keys A, B, C, D.
Optional "defaults" hold h and delta, optional "search" holds SearchSpec
overrides. W defaults to F when omitted.
"""

from dataclasses import dataclass, field
import json
import logging
from pathlib import Path

from asynciqc.errors import AsyncIQCError, PreconditionError, SystemFileError
from asynciqc.lti import StateSpace, from_transfer_function

logger = logging.getLogger(__name__)

BLOCKS = ("P", "F", "W")
SEARCH_FIELDS = ("x_stability", "y_grid", "x_performance", "grid_points", "span", "refine")


@dataclass(frozen=True, eq=False)
class SystemFile:
    P: StateSpace
    F: StateSpace
    W: StateSpace
    defaults: dict = field(default_factory=dict)
    search: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)


def _line_of(text: str, key: str) -> int:
    needle = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return 0


def _parse_block(name: str, doc, text: str) -> StateSpace:
    line = _line_of(text, name)
    if not isinstance(doc, dict):
        raise SystemFileError("block must be an object", field=name, line=line)
    try:
        if "num" in doc or "den" in doc:
            if "num" not in doc or "den" not in doc:
                raise SystemFileError("transfer function needs both num and den", field=name, line=line)
            return from_transfer_function(doc["num"], doc["den"])
        missing = [k for k in "ABCD" if k not in doc]
        if missing:
            raise SystemFileError(f"missing matrices {missing}", field=name, line=line)
        return StateSpace(doc["A"], doc["B"], doc["C"], doc["D"])
    except SystemFileError:
        raise
    except (AsyncIQCError, TypeError, ValueError) as exc:
        raise SystemFileError(f"invalid block: {exc}", field=name, line=line) from exc


def parse_system(text: str) -> SystemFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SystemFileError(f"malformed JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise SystemFileError("system file must hold a JSON object", line=1)
    for name in ("P", "F"):
        if name not in doc:
            raise SystemFileError("required block missing", field=name)
    unknown = set(doc) - set(BLOCKS) - {"defaults", "search", "name"}
    if unknown:
        key = sorted(unknown)[0]
        raise SystemFileError("unknown top-level key", field=key, line=_line_of(text, key))
    P = _parse_block("P", doc["P"], text)
    F = _parse_block("F", doc["F"], text)
    W = _parse_block("W", doc["W"], text) if "W" in doc else F
    for name, blk in (("P", P), ("F", F), ("W", W)):
        if blk.n_inputs != 1 or blk.n_outputs != 1:
            raise SystemFileError("block must be single-input single-output", field=name,
                                  line=_line_of(text, name))
    defaults = doc.get("defaults", {})
    for key, value in defaults.items():
        if key not in ("h", "delta") or not isinstance(value, (int, float)):
            raise SystemFileError("defaults accept numeric h and delta", field=f"defaults.{key}",
                                  line=_line_of(text, key))
    search = doc.get("search", {})
    for key in search:
        if key not in SEARCH_FIELDS:
            raise SystemFileError("unknown search override", field=f"search.{key}", line=_line_of(text, key))
    sources = {name: doc[name] for name in BLOCKS if name in doc}
    return SystemFile(P, F, W, dict(defaults), dict(search), sources)


def load_system(path) -> SystemFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SystemFileError(f"cannot read {path}: {exc.strerror}") from exc
    system = parse_system(text)
    logger.debug("loaded system file %s", path)
    return system


def _block_doc(blk: StateSpace) -> dict:
    return {"A": blk.A.tolist(), "B": blk.B.tolist(), "C": blk.C.tolist(), "D": blk.D.tolist()}


def save_system(path, system: SystemFile):
    """Write the system; transfer-function blocks keep their coefficient form."""
    doc = {}
    for name in BLOCKS:
        if name in system.sources:
            doc[name] = system.sources[name]
        elif name != "W" or system.W is not system.F:
            doc[name] = _block_doc(getattr(system, name))
    if system.defaults:
        doc["defaults"] = system.defaults
    if system.search:
        doc["search"] = system.search
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def system_from_tf(blocks: dict, defaults: dict = None) -> SystemFile:
    """SystemFile from {'P': (num, den), 'F': (num, den)[, 'W': ...]}."""
    if "P" not in blocks or "F" not in blocks:
        raise PreconditionError("P and F are required")
    sources = {k: {"num": list(map(float, nd[0])), "den": list(map(float, nd[1]))} for k, nd in blocks.items()}
    built = {k: from_transfer_function(*nd) for k, nd in blocks.items()}
    return SystemFile(built["P"], built["F"], built.get("W", built["F"]), dict(defaults or {}), {}, sources)


def example_1() -> SystemFile:
    """P = 1/s, F = W = 1/(0.1 s + 1)."""
    return system_from_tf({"P": ([1.0], [1.0, 0.0]), "F": ([1.0], [0.1, 1.0])})


def example_2(tz: float = 0.05) -> SystemFile:
    """P = 0.9 (tz s - 1) / (s^2 + 2 s + 1), F = W = 1/(0.1 s + 1)."""
    if tz < 0:
        raise PreconditionError("tz must be non-negative")
    return system_from_tf({"P": ([0.9 * tz, -0.9], [1.0, 2.0, 1.0]), "F": ([1.0], [0.1, 1.0])})


def builtin(name: str) -> SystemFile:
    """Look up 'example1', 'example2' or 'example2:<tz>'."""
    key, _, arg = name.partition(":")
    if key == "example1":
        return example_1()
    if key == "example2":
        return example_2(float(arg) if arg else 0.05)
    raise SystemFileError(f"unknown built-in system '{name}'")


def resolve(spec: str) -> SystemFile:
    """A path to a system file, or a built-in name."""
    if spec.startswith("example") and not Path(spec).exists():
        return builtin(spec)
    return load_system(spec)
