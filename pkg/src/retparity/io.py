"""File readers and writers: JSON documents, policy files, CSV tables."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import ParseError, ValidationError
from .mdp import GroupPair, Mdp, Policy

PathLike = Union[str, Path]


def read_json(path: PathLike) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top-level value must be an object")
    return doc


def write_json(path: PathLike, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def file_digest(paths: Iterable[PathLike]) -> str:
    h = hashlib.sha256()
    for p in paths:
        data = Path(p).read_bytes()
        h.update(len(data).to_bytes(8, "little"))
        h.update(data)
    return h.hexdigest()


def load_mdp_file(path: PathLike) -> Mdp:
    doc = read_json(path)
    try:
        return Mdp.from_dict(doc)
    except ValidationError as e:
        raise ValidationError(f"{path}: {e}") from None
    except (TypeError, ValueError) as e:
        raise ParseError(f"{path}: {e}") from None


def load_pair(path0: PathLike, path1: PathLike, lam: float = 0.5) -> GroupPair:
    return GroupPair(load_mdp_file(path0), load_mdp_file(path1), lam)


def policy_to_dict(pi: Policy) -> dict:
    m, n = pi.shape
    return {"num_states": m, "num_actions": n, "policy": pi.pi.tolist()}


def save_policy(pi: Policy, path: PathLike) -> None:
    # repr-precision floats keep the policy bit-exact through the round trip
    write_json(path, policy_to_dict(pi))


def load_policy(path: PathLike) -> Policy:
    doc = read_json(path)
    if "policy" not in doc:
        raise ValidationError(f"{path}: missing field 'policy'")
    try:
        pi = Policy(doc["policy"])
    except ValidationError as e:
        raise ValidationError(f"{path}: {e}") from None
    except (TypeError, ValueError) as e:
        raise ParseError(f"{path}: {e}") from None
    m, n = pi.shape
    if doc.get("num_states", m) != m or doc.get("num_actions", n) != n:
        raise ValidationError(f"{path}: declared size does not match the policy matrix")
    return pi


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: PathLike, columns: Sequence[str], rows: Iterable[Mapping]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path: PathLike) -> list[dict]:
    """Read a CSV written by ``write_csv``; numeric cells come back as floats."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                try:
                    row[k] = float(v)
                except ValueError:
                    row[k] = {"true": True, "false": False}.get(v, v)
            out.append(row)
    return out
