from __future__ import annotations

import bisect
import logging
import re
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from .errors import CassandraFormatError, ModelError
from .pomdp import ModelVariant, PomdpModel
from .utils import fmt_number, fmt_numbers
from .world import CameraView

logger = logging.getLogger("scout")

_KEYWORDS = ("discount", "values", "states", "actions", "observations", "start", "T", "O", "R")
_ACTION_RE = re.compile(r"^snap_C(\d+)_Z(\d+)$")
_STATE_A_RE = re.compile(r"^B(\d+|absent)$")
_STATE_B_RE = re.compile(r"^B(\d+|absent)_C\d+_Z\d+$")


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def _base_reward(row: np.ndarray) -> float:
    """Most common value in a reward row; ties go to the smallest."""
    counts = Counter(float(v) for v in row)
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)


def export_cassandra(model: PomdpModel) -> str:
    """
    Render a model as a `.pomdp` document.

    Stanza order and number formatting are fixed, so identical models give
    identical bytes. Identity transitions are written with the `identity`
    keyword; other transitions as sparse `T: a : s : s' p` entries.
    """
    for name, arr in (
        ("O", model.observation_probs),
        ("R", model.rewards),
        ("start", model.initial),
    ):
        if not np.all(np.isfinite(arr)):
            raise ModelError(f"cannot export: {name} has non-finite entries")
    for t in model.transitions:
        if not np.all(np.isfinite(t.data)):
            raise ModelError("cannot export: T has non-finite entries")

    variant = model.variant.value if model.variant else "custom"
    lines: List[str] = [
        f"# scout model, variant {variant}: {model.n_states} states, "
        f"{model.n_actions} actions, {model.n_observations} observations",
        f"discount: {fmt_number(model.discount)}",
        "values: reward",
        "states: " + " ".join(model.states),
        "actions: " + " ".join(model.actions),
        "observations: " + " ".join(model.observations),
        "start: " + fmt_numbers(model.initial),
        "",
    ]

    eye = sparse.identity(model.n_states, format="csr")
    for a, name in enumerate(model.actions):
        t = model.transitions[a].tocsr()
        if (t != eye).nnz == 0:
            lines += [f"T: {name}", "identity"]
            continue
        t = t.copy()
        t.sort_indices()
        for s in range(model.n_states):
            start, end = t.indptr[s], t.indptr[s + 1]
            for s2, p in zip(t.indices[start:end], t.data[start:end]):
                if p != 0.0:
                    lines.append(f"T: {name} : {model.states[s]} : {model.states[s2]} {fmt_number(p)}")
    lines.append("")

    for a, name in enumerate(model.actions):
        lines.append(f"O: {name}")
        lines += [fmt_numbers(row) for row in model.observation_probs[a]]
    lines.append("")

    for a, name in enumerate(model.actions):
        row = model.rewards[a]
        base = _base_reward(row)
        lines.append(f"R: {name} : * : * : * {fmt_number(base)}")
        for s in np.flatnonzero(row != base):
            lines.append(f"R: {name} : {model.states[s]} : * : * {fmt_number(row[s])}")
    lines.append("")
    return "\n".join(lines)


def write_cassandra(model: PomdpModel, path: Path | str) -> Path:
    """
    Export `model` to `path`, creating parent directories.

    Returns:
        Path: The written file.
    """
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(export_cassandra(model), encoding="utf-8")
    logger.info("Wrote %s (%d states, %d actions)", p, model.n_states, model.n_actions)
    return p


# ---------------------------------------------------------------------------
# import
# ---------------------------------------------------------------------------

Token = Tuple[str, int]


def _tokenize(text: str) -> List[Token]:
    tokens: List[Token] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].replace(":", " : ")
        tokens += [(tok, lineno) for tok in body.split()]
    return tokens


def _statements(tokens: List[Token]) -> List[Tuple[str, int, List[Token]]]:
    """Split the token stream at `<keyword> :` boundaries."""
    starts = [
        i
        for i in range(len(tokens) - 1)
        if tokens[i][0] in _KEYWORDS and tokens[i + 1][0] == ":"
    ]
    if tokens and (not starts or starts[0] != 0):
        tok, line = tokens[0]
        raise CassandraFormatError(f"unexpected '{tok}'", line)
    out = []
    for n, i in enumerate(starts):
        end = starts[n + 1] if n + 1 < len(starts) else len(tokens)
        out.append((tokens[i][0], tokens[i][1], tokens[i + 2 : end]))
    return out


def _groups(body: List[Token]) -> List[List[Token]]:
    groups: List[List[Token]] = [[]]
    for tok in body:
        if tok[0] == ":":
            groups.append([])
        else:
            groups[-1].append(tok)
    return groups


def _float(tok: Token) -> float:
    try:
        return float(tok[0])
    except ValueError:
        raise CassandraFormatError(f"expected a number, got '{tok[0]}'", tok[1])


def _floats(toks: Sequence[Token], n: int, what: str, line: int) -> np.ndarray:
    if len(toks) != n:
        raise CassandraFormatError(f"{what} needs {n} numbers, got {len(toks)}", line)
    return np.array([_float(t) for t in toks])


class _Names:
    def __init__(self, kind: str, names: Sequence[str]):
        self.kind = kind
        self.names = list(names)
        self.index: Dict[str, int] = {n: i for i, n in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    def resolve(self, tok: Token) -> List[int]:
        name, line = tok
        if name == "*":
            return list(range(len(self.names)))
        if name in self.index:
            return [self.index[name]]
        if name.isdigit() and int(name) < len(self.names):
            return [int(name)]
        raise CassandraFormatError(f"unknown {self.kind} '{name}'", line)


def _declared(kind: str, toks: List[Token], line: int) -> _Names:
    if not toks:
        raise CassandraFormatError(f"{kind} declaration is empty", line)
    if len(toks) == 1 and toks[0][0].isdigit():
        n = int(toks[0][0])
        return _Names(kind, [str(i) for i in range(n)])
    return _Names(kind, [t[0] for t in toks])


class _Builder:
    def __init__(self) -> None:
        self.discount: Optional[float] = None
        self.sign = 1.0
        self.S: Optional[_Names] = None
        self.A: Optional[_Names] = None
        self.O: Optional[_Names] = None
        self.start: Optional[np.ndarray] = None
        self.T: Optional[List[sparse.lil_matrix]] = None
        self.Z: Optional[np.ndarray] = None
        self.R: Optional[np.ndarray] = None

    def _ready(self, line: int) -> None:
        if self.S is None or self.A is None or self.O is None:
            raise CassandraFormatError("states, actions and observations must be declared first", line)
        if self.T is None:
            nS, nA, nO = len(self.S), len(self.A), len(self.O)
            self.T = [sparse.lil_matrix((nS, nS)) for _ in range(nA)]
            self.Z = np.zeros((nA, nS, nO))
            self.R = np.zeros((nA, nS))

    def header(self, kw: str, line: int, body: List[Token]) -> None:
        if kw == "discount":
            if len(body) != 1:
                raise CassandraFormatError("discount takes one number", line)
            self.discount = _float(body[0])
        elif kw == "values":
            if len(body) != 1 or body[0][0] not in ("reward", "cost"):
                raise CassandraFormatError("values must be 'reward' or 'cost'", line)
            self.sign = 1.0 if body[0][0] == "reward" else -1.0
        elif kw == "states":
            self.S = _declared("state", body, line)
        elif kw == "actions":
            self.A = _declared("action", body, line)
        elif kw == "observations":
            self.O = _declared("observation", body, line)
        elif kw == "start":
            if self.S is None:
                raise CassandraFormatError("start before states", line)
            if len(body) == 1 and body[0][0] == "uniform":
                self.start = np.full(len(self.S), 1.0 / len(self.S))
            elif len(body) == 1 and not _is_number(body[0][0]):
                self.start = np.zeros(len(self.S))
                self.start[self.S.resolve(body[0])] = 1.0
            else:
                self.start = _floats(body, len(self.S), "start", line)

    def table(self, kw: str, line: int, body: List[Token]) -> None:
        self._ready(line)
        groups = _groups(body)
        specs = [g[0] for g in groups[:-1] if len(g) == 1]
        if len(specs) != len(groups) - 1 or not groups[-1]:
            raise CassandraFormatError(f"malformed {kw} entry", line)
        last = groups[-1]
        specs.append(last[0])
        values = last[1:]
        if kw == "T":
            self._transition(specs, values, line)
        elif kw == "O":
            self._observation(specs, values, line)
        else:
            self._reward(specs, values, line)

    def _transition(self, specs: List[Token], values: List[Token], line: int) -> None:
        nS = len(self.S)
        acts = self.A.resolve(specs[0])
        if len(specs) == 3:
            p = _floats(values, 1, "T entry", line)[0]
            for a in acts:
                for s in self.S.resolve(specs[1]):
                    for s2 in self.S.resolve(specs[2]):
                        _set_entry(self.T[a], s, s2, p)
        elif len(specs) == 2:
            row = self._row_or_uniform(values, nS, "T row", line)
            for a in acts:
                for s in self.S.resolve(specs[1]):
                    _set_row(self.T[a], s, row)
        elif len(specs) == 1:
            if len(values) == 1 and values[0][0] == "identity":
                mat = sparse.identity(nS, format="csr")
            elif len(values) == 1 and values[0][0] == "uniform":
                mat = np.full((nS, nS), 1.0 / nS)
            else:
                mat = _floats(values, nS * nS, "T matrix", line).reshape(nS, nS)
            # one independent builder per action; later entries edit rows in place
            for a in acts:
                self.T[a] = sparse.lil_matrix(mat)
        else:
            raise CassandraFormatError("T entry has too many fields", line)

    def _observation(self, specs: List[Token], values: List[Token], line: int) -> None:
        nS, nO = len(self.S), len(self.O)
        acts = self.A.resolve(specs[0])
        if len(specs) == 3:
            p = _floats(values, 1, "O entry", line)[0]
            for a in acts:
                for s2 in self.S.resolve(specs[1]):
                    self.Z[a, s2, self.O.resolve(specs[2])] = p
        elif len(specs) == 2:
            row = self._row_or_uniform(values, nO, "O row", line)
            for a in acts:
                self.Z[a, self.S.resolve(specs[1]), :] = row
        elif len(specs) == 1:
            if len(values) == 1 and values[0][0] == "uniform":
                mat = np.full((nS, nO), 1.0 / nO)
            else:
                mat = _floats(values, nS * nO, "O matrix", line).reshape(nS, nO)
            self.Z[acts] = mat
        else:
            raise CassandraFormatError("O entry has too many fields", line)

    def _reward(self, specs: List[Token], values: List[Token], line: int) -> None:
        if len(specs) != 4:
            raise CassandraFormatError("only 'R: a : s : s' : o v' entries are supported", line)
        if specs[2][0] != "*" or specs[3][0] != "*":
            raise CassandraFormatError("rewards that depend on next state or observation are not supported", line)
        v = _floats(values, 1, "R entry", line)[0]
        for a in self.A.resolve(specs[0]):
            self.R[a, self.S.resolve(specs[1])] = self.sign * v

    @staticmethod
    def _row_or_uniform(values: List[Token], n: int, what: str, line: int) -> np.ndarray:
        if len(values) == 1 and values[0][0] == "uniform":
            return np.full(n, 1.0 / n)
        return _floats(values, n, what, line)


def _set_entry(t: sparse.lil_matrix, s: int, s2: int, p: float) -> None:
    """Write one transition probability; rows keep their column indices sorted."""
    cols, data = t.rows[s], t.data[s]
    i = bisect.bisect_left(cols, s2)
    if i < len(cols) and cols[i] == s2:
        if p == 0.0:
            del cols[i], data[i]
        else:
            data[i] = p
    elif p != 0.0:
        cols.insert(i, s2)
        data.insert(i, p)


def _set_row(t: sparse.lil_matrix, s: int, row: np.ndarray) -> None:
    nz = np.flatnonzero(row)
    t.rows[s][:] = nz.tolist()
    t.data[s][:] = row[nz].tolist()


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _decode_names(states: Sequence[str], actions: Sequence[str]):
    views: Tuple[CameraView, ...] = ()
    matches = [_ACTION_RE.match(a) for a in actions]
    if all(matches):
        views = tuple(CameraView(int(m.group(1)), int(m.group(2))) for m in matches)

    def block(tag: str) -> Optional[int]:
        return None if tag == "absent" else int(tag)

    for variant, pattern in ((ModelVariant.A, _STATE_A_RE), (ModelVariant.B, _STATE_B_RE)):
        found = [pattern.match(s) for s in states]
        if all(found):
            return variant, views, tuple(block(m.group(1)) for m in found)
    return None, views, ()


def import_cassandra(text: str) -> PomdpModel:
    """
    Parse a `.pomdp` document.

    Supports names or indices, `*` wildcards, the `identity` and `uniform`
    keywords, single entries, rows and full matrices. Rewards may only
    depend on action and current state.
    """
    b = _Builder()
    for kw, line, body in _statements(_tokenize(text)):
        if kw in ("T", "O", "R"):
            b.table(kw, line, body)
        else:
            b.header(kw, line, body)

    if b.discount is None:
        raise CassandraFormatError("missing 'discount:'")
    b._ready(None)
    start = b.start if b.start is not None else np.full(len(b.S), 1.0 / len(b.S))
    variant, views, blocks = _decode_names(b.S.names, b.A.names)

    model = PomdpModel(
        states=tuple(b.S.names),
        actions=tuple(b.A.names),
        observations=tuple(b.O.names),
        transitions=tuple(t.tocsr() for t in b.T),
        observation_probs=b.Z,
        rewards=b.R + 0.0,
        discount=b.discount,
        initial=start,
        variant=variant,
        action_views=views,
        state_blocks=blocks,
    )
    model.check()
    logger.debug("Imported model: |S|=%d |A|=%d variant=%s", model.n_states, model.n_actions, variant)
    return model


def read_cassandra(path: Path | str) -> PomdpModel:
    """Read a `.pomdp` file; unreadable files raise CassandraFormatError."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise CassandraFormatError(f"{p} could not be read: {e}")
    return import_cassandra(text)
