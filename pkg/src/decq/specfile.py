"""Plain-text game format.

::

    # comment
    [game] agents=2 states=s0 s1 discount=0.9 0.9
    [actions 1]
    s0 a b
    s1 a
    [reward 1]
    s0 a x 1.5
    [transition]
    s0 a x s1 1.0

Actions are declared per agent and state.  Every joint action at every state
needs a reward line for each agent and at least one transition line;
transition entries that are not listed have probability zero.
"""

from __future__ import annotations

import itertools

import numpy as np

from .game import GameError, StochasticGame


class SpecError(GameError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line, self.column, self.message = line, column, message
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


def _tokens(line: str):
    """Whitespace tokens with 1-based start columns, comments stripped."""
    cut = line.find("#")
    if cut >= 0:
        line = line[:cut]
    out, k = [], 0
    while k < len(line):
        if line[k].isspace():
            k += 1
            continue
        j = k
        while j < len(line) and not line[j].isspace():
            j += 1
        out.append((line[k:j], k + 1))
        k = j
    return out


def _number(tok, lineno):
    text, col = tok
    try:
        v = float(text)
    except ValueError:
        raise SpecError(f"expected a number, got {text!r}", lineno, col) from None
    if not np.isfinite(v):
        raise SpecError(f"non-finite number {text!r}", lineno, col)
    return v


def parse_game_spec(text: str) -> StochasticGame:
    header = None
    sections: list[tuple[str, int | None, int, list]] = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = _tokens(raw)
        if not toks:
            continue
        first, col = toks[0]
        if first.startswith("["):
            body = raw.split("#", 1)[0]
            close = body.find("]")
            if close < 0:
                raise SpecError("unterminated section header", lineno, col)
            name = body[body.find("[") + 1:close].split()
            rest = _after_bracket(raw)
            if not name:
                raise SpecError("empty section header", lineno, col)
            kind = name[0]
            if kind == "game":
                if header is not None:
                    raise SpecError("second [game] section", lineno, col)
                header = (lineno, rest)
                current = None
            elif kind in ("actions", "reward"):
                if len(name) != 2 or not name[1].isdigit():
                    raise SpecError(f"[{kind} i] needs an agent number", lineno, col)
                current = (kind, int(name[1]), lineno, [])
                sections.append(current)
            elif kind == "transition":
                current = ("transition", None, lineno, [])
                sections.append(current)
            else:
                raise SpecError(f"unknown section [{kind}]", lineno, col)
            if rest and kind != "game":
                raise SpecError("unexpected tokens after section header", lineno, rest[0][1])
            continue
        if current is None:
            raise SpecError("content outside of a section", lineno, col)
        current[3].append((lineno, toks))
    if header is None:
        raise SpecError("no [game] section")

    hline, htoks = header
    fields: dict[str, list] = {}
    key = None
    for tok, col in htoks:
        if "=" in tok:
            key, _, val = tok.partition("=")
            if key not in ("agents", "states", "discount"):
                raise SpecError(f"unknown [game] key {key!r}", hline, col)
            if key in fields:
                raise SpecError(f"duplicate [game] key {key!r}", hline, col)
            fields[key] = [(val, col + len(key) + 1)] if val else []
        elif key is None:
            raise SpecError(f"unexpected token {tok!r}", hline, col)
        else:
            fields[key].append((tok, col))
    for k in ("agents", "states", "discount"):
        if k not in fields or not fields[k]:
            raise SpecError(f"[game] is missing {k}=", hline)
    if len(fields["agents"]) != 1 or not fields["agents"][0][0].isdigit():
        raise SpecError("agents= needs one positive integer", hline, fields["agents"][0][1])
    N = int(fields["agents"][0][0])
    if N < 1:
        raise SpecError("agents= needs one positive integer", hline, fields["agents"][0][1])
    states = [t for t, _ in fields["states"]]
    sidx = {}
    for t, c in fields["states"]:
        if t in sidx:
            raise SpecError(f"duplicate state {t!r}", hline, c)
        sidx[t] = len(sidx)
    S = len(states)
    disc = [_number(t, hline) for t in fields["discount"]]
    if len(disc) != N:
        raise SpecError(f"discount= lists {len(disc)} values for {N} agents", hline)

    def state_of(tok, lineno):
        if tok[0] not in sidx:
            raise SpecError(f"unknown state {tok[0]!r}", lineno, tok[1])
        return sidx[tok[0]]

    actions: list[list[list[str] | None]] = [[None] * S for _ in range(N)]
    for kind, agent, sline, lines in sections:
        if kind != "actions":
            continue
        if not 1 <= agent <= N:
            raise SpecError(f"agent {agent} out of range", sline)
        for lineno, toks in lines:
            s = state_of(toks[0], lineno)
            if actions[agent - 1][s] is not None:
                raise SpecError(f"actions of agent {agent} at {states[s]!r} declared twice",
                                lineno, toks[0][1])
            names = [t for t, _ in toks[1:]]
            if not names:
                raise SpecError("state has no actions", lineno, toks[0][1])
            if len(set(names)) != len(names):
                raise SpecError("duplicate action name", lineno, toks[0][1])
            actions[agent - 1][s] = names
    for i in range(N):
        for s in range(S):
            if actions[i][s] is None:
                raise SpecError(f"missing actions of agent {i + 1} at state {states[s]!r}")
    aidx = [[{a: k for k, a in enumerate(actions[i][s])} for s in range(S)] for i in range(N)]

    def joint_of(toks, s, lineno):
        out = []
        for i in range(N):
            t, c = toks[i]
            if t not in aidx[i][s]:
                raise SpecError(f"unknown action {t!r} of agent {i + 1} at state "
                                f"{states[s]!r}", lineno, c)
            out.append(aidx[i][s][t])
        return tuple(out)

    shapes = [tuple(len(actions[i][s]) for i in range(N)) for s in range(S)]
    rewards = [np.full((N,) + shapes[s], np.nan) for s in range(S)]
    kernel = [np.zeros(shapes[s] + (S,)) for s in range(S)]
    seen_rows = [np.zeros(shapes[s], dtype=bool) for s in range(S)]
    seen_entries = set()
    for kind, agent, sline, lines in sections:
        if kind == "reward":
            if not 1 <= agent <= N:
                raise SpecError(f"agent {agent} out of range", sline)
            for lineno, toks in lines:
                if len(toks) != N + 2:
                    raise SpecError(f"reward line needs state, {N} actions and a value",
                                    lineno, toks[0][1])
                s = state_of(toks[0], lineno)
                a = joint_of(toks[1:N + 1], s, lineno)
                if not np.isnan(rewards[s][(agent - 1,) + a]):
                    raise SpecError("duplicate reward entry", lineno, toks[0][1])
                rewards[s][(agent - 1,) + a] = _number(toks[N + 1], lineno)
        elif kind == "transition":
            for lineno, toks in lines:
                if len(toks) != N + 3:
                    raise SpecError(f"transition line needs state, {N} actions, "
                                    "next state and a probability", lineno, toks[0][1])
                s = state_of(toks[0], lineno)
                a = joint_of(toks[1:N + 1], s, lineno)
                t = state_of(toks[N + 1], lineno)
                if (s, a, t) in seen_entries:
                    raise SpecError("duplicate transition entry", lineno, toks[0][1])
                seen_entries.add((s, a, t))
                kernel[s][a + (t,)] = _number(toks[N + 2], lineno)
                seen_rows[s][a] = True
    for s in range(S):
        for a in itertools.product(*[range(k) for k in shapes[s]]):
            names = " ".join(actions[i][s][a[i]] for i in range(N))
            if not seen_rows[s][a]:
                raise SpecError(f"missing transition row for state {states[s]!r}, "
                                f"actions {names}")
            for i in range(N):
                if np.isnan(rewards[s][(i,) + a]):
                    raise SpecError(f"missing reward of agent {i + 1} for state "
                                    f"{states[s]!r}, actions {names}")
    return StochasticGame(states, actions, kernel, rewards, disc)


def _after_bracket(raw: str):
    cut = raw.find("#")
    line = raw if cut < 0 else raw[:cut]
    close = line.find("]")
    rest = line[close + 1:]
    return [(t, c + close + 1) for t, c in _tokens(rest)]


def _check_token(tok: str, what: str) -> None:
    if not tok or any(ch.isspace() for ch in tok) or "#" in tok or "=" in tok \
            or tok.startswith("["):
        raise GameError(f"{what} {tok!r} cannot be written in the text format")


def serialize_game_spec(game: StochasticGame) -> str:
    N, S = game.num_agents, game.num_states
    for s in game.states:
        _check_token(s, "state id")
    for i in range(N):
        for s in range(S):
            for a in game.actions[i][s]:
                _check_token(a, "action name")
    lines = [f"[game] agents={N} states=" + " ".join(game.states)
             + " discount=" + " ".join(repr(g) for g in game.discounts)]
    for i in range(N):
        lines.append(f"[actions {i + 1}]")
        for s in range(S):
            lines.append(game.states[s] + " " + " ".join(game.actions[i][s]))
    joints = [list(itertools.product(*[range(int(game.n_actions[i, s])) for i in range(N)]))
              for s in range(S)]
    for i in range(N):
        lines.append(f"[reward {i + 1}]")
        for s in range(S):
            for a in joints[s]:
                names = " ".join(game.actions[j][s][a[j]] for j in range(N))
                lines.append(f"{game.states[s]} {names} {float(game.rewards[(i, s) + a])!r}")
    lines.append("[transition]")
    for s in range(S):
        for a in joints[s]:
            names = " ".join(game.actions[j][s][a[j]] for j in range(N))
            row = game.kernel[(s,) + a]
            for t in np.flatnonzero(row):
                lines.append(f"{game.states[s]} {names} {game.states[t]} {float(row[t])!r}")
    return "\n".join(lines) + "\n"


def load_game(ref: str) -> StochasticGame:
    """Load ``builtin:gridworld`` (optionally ``builtin:gridworld-open``) or a file path."""
    from .gridworld import build_gridworld
    if ref.startswith("builtin:"):
        name = ref[len("builtin:"):]
        if name == "gridworld":
            return build_gridworld()
        if name == "gridworld-open":
            return build_gridworld(absorbing=False)
        raise GameError(f"unknown builtin game {name!r}")
    with open(ref, encoding="utf-8") as fh:
        return parse_game_spec(fh.read())
