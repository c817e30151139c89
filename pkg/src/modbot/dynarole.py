"""DynaRole programs: parsing, invariant evaluation, role assignment.

The concrete syntax (full grammar in docs/dynarole-grammar.md):

    role Head extends Module {
      require (self.center == $NORTH_SOUTH);
      startup initialize(_) {
        handle $EVENT_HANDLER_1 $EVENT_HANDLER_3 { Wheel.evade(0); };
        (self.enable($EVENT_HANDLER_1));
      }
    }

Roles may be abstract, inherit from a single parent (the built-in root is
"Module"), declare valued or abstract constants, accumulate `require`
invariants down the inheritance chain, and carry behaviors, commands and
event handlers. Roles are stateless: evaluation reads only a physical
state snapshot and the role's constants.
"""

from __future__ import annotations

import gzip
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

EVENT_PREFIX = "EVENT_HANDLER_"
BUILTIN_ROOT = "Module"

CENTER_AXES = ("NORTH_SOUTH", "EAST_WEST", "UP_DOWN")
DIRECTIONS = ("NORTH", "SOUTH", "EAST", "WEST", "UP", "DOWN")


@dataclass
class Diagnostic:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


class RoleSyntaxError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


class EvalError(Exception):
    pass


# Expression AST (predicates are side-effect free).

@dataclass(frozen=True)
class Lit:
    value: int


@dataclass(frozen=True)
class Sym:
    name: str  # $EAST stored as "EAST"


@dataclass(frozen=True)
class ConstRef:
    name: str


@dataclass(frozen=True)
class CenterRef:
    pass


@dataclass(frozen=True)
class ConnectedCount:
    direction: "Operand"


Operand = Union[Lit, Sym, ConstRef, CenterRef, ConnectedCount]


@dataclass(frozen=True)
class Predicate:
    op: str  # one of == != < <= > >=
    lhs: Operand
    rhs: Operand


# Actions execute in list order.

@dataclass(frozen=True)
class Turn:
    speed: Operand


@dataclass(frozen=True)
class SleepCs:
    amount: Operand


@dataclass(frozen=True)
class Enable:
    event: int


@dataclass(frozen=True)
class Invoke:
    role: str
    command: str


Action = Union[Turn, SleepCs, Enable, Invoke]


@dataclass(frozen=True)
class Handler:
    events: tuple[int, ...]
    actions: tuple[Action, ...]


@dataclass
class RoleDefinition:
    name: str
    parent: str
    abstract: bool
    line: int
    constants: dict[str, Union[int, str]] = field(default_factory=dict)
    abstract_constants: list[str] = field(default_factory=list)
    requires: list[Predicate] = field(default_factory=list)
    behaviors: list[tuple[str, tuple[Action, ...]]] = field(default_factory=list)
    commands: list[tuple[str, tuple[Action, ...]]] = field(default_factory=list)
    handlers: list[Handler] = field(default_factory=list)
    startup: Optional[tuple[str, tuple[Action, ...]]] = None


@dataclass
class RoleProgram:
    roles: list[RoleDefinition]
    source_text: str

    def __post_init__(self):
        self._by_name = {r.name: r for r in self.roles}

    def role(self, name: str) -> RoleDefinition:
        return self._by_name[name]

    def has_role(self, name: str) -> bool:
        return name in self._by_name

    def chain(self, name: str) -> list[RoleDefinition]:
        """Inheritance chain, root-most ancestor first, `name` last."""
        out: list[RoleDefinition] = []
        while name != BUILTIN_ROOT:
            role = self._by_name[name]
            out.append(role)
            name = role.parent
        out.reverse()
        return out

    def descends(self, name: str, ancestor: str) -> bool:
        if ancestor == BUILTIN_ROOT:
            return True
        return any(r.name == ancestor for r in self.chain(name))

    def effective_constants(self, name: str) -> dict[str, Union[int, str]]:
        out: dict[str, Union[int, str]] = {}
        for role in self.chain(name):
            out.update(role.constants)
        return out

    def effective_requires(self, name: str) -> list[Predicate]:
        out: list[Predicate] = []
        for role in self.chain(name):
            out.extend(role.requires)
        return out

    def effective_behaviors(self, name: str) -> list[tuple[str, tuple[Action, ...]]]:
        return self._effective_named(name, "behaviors")

    def effective_commands(self, name: str) -> list[tuple[str, tuple[Action, ...]]]:
        return self._effective_named(name, "commands")

    def _effective_named(self, name, attr):
        out: list[tuple[str, tuple[Action, ...]]] = []
        seen: dict[str, int] = {}
        for role in self.chain(name):
            for item_name, actions in getattr(role, attr):
                if item_name in seen:
                    out[seen[item_name]] = (item_name, actions)  # override in place
                else:
                    seen[item_name] = len(out)
                    out.append((item_name, actions))
        return out

    def effective_handlers(self, name: str) -> list[Handler]:
        out: list[Handler] = []
        for role in self.chain(name):
            out.extend(role.handlers)
        return out

    def effective_startup(self, name: str) -> tuple[Action, ...]:
        out: list[Action] = []
        for role in self.chain(name):
            if role.startup is not None:
                out.extend(role.startup[1])
        return tuple(out)

    def concrete_roles(self) -> list[RoleDefinition]:
        return [r for r in self.roles if not r.abstract]


# Lexer.

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<int>-?\d+)
  | (?P<sym>\$[A-Za-z_][A-Za-z_0-9]*)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>==|!=|<=|>=|[{}();,=.<>])
    """,
    re.VERBOSE,
)

_KEYWORDS = {
    "role", "abstract", "extends", "require", "constant",
    "startup", "behavior", "command", "handle", "sizeof", "self",
}


@dataclass
class _Token:
    type: str  # int, sym, name, keyword, op, eof
    value: str
    line: int


def _lex(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    line = 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise RoleSyntaxError([Diagnostic(line, f"unexpected character {text[pos]!r}")])
        kind = m.lastgroup
        value = m.group()
        if kind == "ws" or kind == "comment":
            line += value.count("\n")
        elif kind == "sym":
            tokens.append(_Token("sym", value[1:], line))
        elif kind == "name":
            tokens.append(_Token("keyword" if value in _KEYWORDS else "name", value, line))
        else:
            tokens.append(_Token(kind, value, line))
        pos = m.end()
    tokens.append(_Token("eof", "", line))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self._tokens = tokens
        self._pos = 0

    def _peek(self) -> _Token:
        return self._tokens[self._pos]

    def _next(self) -> _Token:
        tok = self._tokens[self._pos]
        if tok.type != "eof":
            self._pos += 1
        return tok

    def _fail(self, message: str, tok: _Token | None = None):
        tok = tok or self._peek()
        raise RoleSyntaxError([Diagnostic(tok.line, message)])

    def _expect(self, type_: str, value: str | None = None) -> _Token:
        tok = self._next()
        if tok.type != type_ or (value is not None and tok.value != value):
            want = value or type_
            self._fail(f"expected {want!r}, found {tok.value or 'end of input'!r}", tok)
        return tok

    def _accept(self, type_: str, value: str | None = None) -> Optional[_Token]:
        tok = self._peek()
        if tok.type == type_ and (value is None or tok.value == value):
            return self._next()
        return None

    # program := { roledecl }
    def parse(self) -> list[RoleDefinition]:
        roles = []
        while self._peek().type != "eof":
            roles.append(self._role_decl())
        return roles

    def _role_decl(self) -> RoleDefinition:
        is_abstract = self._accept("keyword", "abstract") is not None
        self._expect("keyword", "role")
        name_tok = self._expect("name")
        self._expect("keyword", "extends")
        parent_tok = self._expect("name")
        role = RoleDefinition(
            name=name_tok.value, parent=parent_tok.value,
            abstract=is_abstract, line=name_tok.line,
        )
        self._expect("op", "{")
        while not self._accept("op", "}"):
            self._member(role)
        return role

    def _member(self, role: RoleDefinition) -> None:
        tok = self._peek()
        if tok.type == "keyword" and tok.value == "require":
            self._next()
            self._expect("op", "(")
            role.requires.append(self._predicate())
            self._expect("op", ")")
            self._expect("op", ";")
        elif tok.type == "keyword" and tok.value == "abstract":
            self._next()
            self._expect("keyword", "constant")
            name = self._expect("name").value
            self._expect("op", ";")
            role.abstract_constants.append(name)
        elif tok.type == "keyword" and tok.value == "constant":
            self._next()
            name = self._expect("name").value
            self._expect("op", "=")
            role.constants[name] = self._const_value()
            self._expect("op", ";")
        elif tok.type == "keyword" and tok.value in ("startup", "behavior", "command"):
            self._next()
            name = self._expect("name").value
            self._params()
            actions = self._block(role)
            self._accept("op", ";")
            if tok.value == "startup":
                if role.startup is not None:
                    self._fail("duplicate startup block", tok)
                role.startup = (name, actions)
            elif tok.value == "behavior":
                role.behaviors.append((name, actions))
            else:
                role.commands.append((name, actions))
        elif tok.type == "keyword" and tok.value == "handle":
            role.handlers.append(self._handler(role))
        elif tok.type == "name":
            self._next()
            self._expect("op", "=")
            role.constants[tok.value] = self._const_value()
            self._expect("op", ";")
        else:
            self._fail(f"unexpected {tok.value!r} in role body", tok)

    def _const_value(self) -> Union[int, str]:
        tok = self._next()
        if tok.type == "int":
            return int(tok.value)
        if tok.type == "sym":
            return tok.value
        self._fail("expected integer or $SYMBOL constant", tok)

    def _params(self) -> None:
        self._expect("op", "(")
        while not self._accept("op", ")"):
            tok = self._next()
            if tok.type not in ("name", "int", "sym") and not (tok.type == "op" and tok.value == ","):
                self._fail("bad parameter list", tok)

    def _handler(self, role: RoleDefinition) -> Handler:
        tok = self._expect("keyword", "handle")
        events = []
        while self._peek().type == "sym":
            events.append(self._event_id(self._next()))
        if not events:
            self._fail("handle needs at least one $EVENT_HANDLER_n", tok)
        actions = self._block(role)
        self._accept("op", ";")
        return Handler(tuple(events), actions)

    def _event_id(self, tok: _Token) -> int:
        if tok.value.startswith(EVENT_PREFIX) and tok.value[len(EVENT_PREFIX):].isdigit():
            return int(tok.value[len(EVENT_PREFIX):])
        self._fail(f"expected $EVENT_HANDLER_n, found ${tok.value}", tok)

    # block := "{" { stmt } "}"; handle blocks hoist to the role.
    def _block(self, role: RoleDefinition) -> tuple[Action, ...]:
        self._expect("op", "{")
        actions: list[Action] = []
        while not self._accept("op", "}"):
            tok = self._peek()
            if tok.type == "keyword" and tok.value == "handle":
                role.handlers.append(self._handler(role))
            else:
                actions.append(self._action_stmt())
        return tuple(actions)

    def _action_stmt(self) -> Action:
        wrapped = self._accept("op", "(")
        action = self._call()
        if wrapped:
            self._expect("op", ")")
        self._expect("op", ";")
        return action

    def _call(self) -> Action:
        tok = self._next()
        if tok.type == "keyword" and tok.value == "self":
            self._expect("op", ".")
            target = self._next()
            if target.type == "sym":
                if target.value != "TURN_CONTINUOUSLY":
                    self._fail(f"unknown actuation ${target.value}", target)
                args = self._args()
                if len(args) != 1:
                    self._fail("$TURN_CONTINUOUSLY takes one argument", target)
                return Turn(args[0])
            if target.type == "name" and target.value == "sleepcs":
                args = self._args()
                if len(args) != 1:
                    self._fail("sleepcs takes one argument", target)
                return SleepCs(args[0])
            if target.type == "name" and target.value == "enable":
                self._expect("op", "(")
                sym = self._next()
                if sym.type != "sym":
                    self._fail("enable takes an $EVENT_HANDLER_n", sym)
                event = self._event_id(sym)
                self._expect("op", ")")
                return Enable(event)
            self._fail(f"unknown action self.{target.value}", target)
        if tok.type == "name":
            self._expect("op", ".")
            command = self._expect("name").value
            self._args()  # arguments are parsed and ignored
            return Invoke(tok.value, command)
        self._fail(f"expected an action, found {tok.value!r}", tok)

    def _args(self) -> list[Operand]:
        self._expect("op", "(")
        args: list[Operand] = []
        if not self._accept("op", ")"):
            while True:
                args.append(self._operand())
                if self._accept("op", ")"):
                    break
                self._expect("op", ",")
        return args

    def _predicate(self) -> Predicate:
        lhs = self._operand()
        op_tok = self._next()
        if op_tok.type != "op" or op_tok.value not in ("==", "!=", "<", "<=", ">", ">="):
            self._fail("expected a comparison operator", op_tok)
        rhs = self._operand()
        return Predicate(op_tok.value, lhs, rhs)

    def _operand(self) -> Operand:
        tok = self._next()
        if tok.type == "int":
            return Lit(int(tok.value))
        if tok.type == "sym":
            return Sym(tok.value)
        if tok.type == "keyword" and tok.value == "self":
            self._expect("op", ".")
            attr = self._next()
            if attr.type == "name" and attr.value == "center":
                return CenterRef()
            self._fail(f"unknown accessor self.{attr.value}", attr)
        if tok.type == "keyword" and tok.value == "sizeof":
            self._expect("op", "(")
            self._expect("keyword", "self")
            self._expect("op", ".")
            self._expect("name", "connected")
            self._expect("op", "(")
            direction = self._operand()
            self._expect("op", ")")
            self._expect("op", ")")
            return ConnectedCount(direction)
        if tok.type == "name":
            return ConstRef(tok.value)
        self._fail(f"expected a value, found {tok.value!r}", tok)


def _validate(roles: list[RoleDefinition]) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    by_name: dict[str, RoleDefinition] = {}
    for role in roles:
        if role.name == BUILTIN_ROOT:
            diags.append(Diagnostic(role.line, f"role name {BUILTIN_ROOT!r} is reserved"))
        elif role.name in by_name:
            diags.append(Diagnostic(role.line, f"duplicate role {role.name!r}"))
        else:
            by_name[role.name] = role
    for role in by_name.values():
        if role.parent != BUILTIN_ROOT and role.parent not in by_name:
            diags.append(Diagnostic(role.line, f"unknown parent role {role.parent!r}"))
    if diags:
        return diags
    # Cycle detection, then abstract-constant coverage per concrete role.
    for role in by_name.values():
        seen = {role.name}
        cur = role
        while cur.parent != BUILTIN_ROOT:
            if cur.parent in seen:
                diags.append(Diagnostic(role.line, f"inheritance cycle through {role.name!r}"))
                break
            seen.add(cur.parent)
            cur = by_name[cur.parent]
    if diags:
        return diags
    for role in by_name.values():
        if role.abstract:
            continue
        chain: list[RoleDefinition] = []
        cur = role
        while True:
            chain.append(cur)
            if cur.parent == BUILTIN_ROOT:
                break
            cur = by_name[cur.parent]
        valued = {name for r in chain for name in r.constants}
        for r in chain:
            for name in r.abstract_constants:
                if name not in valued:
                    diags.append(Diagnostic(
                        role.line,
                        f"abstract constant {name!r} has no value in concrete role {role.name!r}",
                    ))
    return diags


def parse_program(text: str) -> RoleProgram:
    """Parse a role program; raises RoleSyntaxError carrying line-numbered
    diagnostics on syntax or consistency errors."""
    roles = _Parser(_lex(text)).parse()
    diags = _validate(roles)
    if diags:
        raise RoleSyntaxError(diags)
    return RoleProgram(roles=roles, source_text=text)


# Physical-state snapshot consumed by predicate evaluation.

@dataclass(frozen=True)
class PhysSnapshot:
    center: str
    connections: Mapping[str, tuple[str, ...]]  # direction label -> connected ids
    sensors: Mapping[int, int] = field(default_factory=dict)

    def connected_ids(self, direction: str) -> tuple[str, ...]:
        return tuple(self.connections.get(direction, ()))


def _eval_operand(op: Operand, state: PhysSnapshot, consts: Mapping[str, Union[int, str]]):
    if isinstance(op, Lit):
        return op.value
    if isinstance(op, Sym):
        return op.name
    if isinstance(op, CenterRef):
        return state.center
    if isinstance(op, ConstRef):
        if op.name not in consts:
            raise EvalError(f"undefined constant {op.name!r}")
        return consts[op.name]
    if isinstance(op, ConnectedCount):
        direction = _eval_operand(op.direction, state, consts)
        if not isinstance(direction, str):
            raise EvalError(f"connected() needs a direction, got {direction!r}")
        return len(state.connected_ids(direction))
    raise EvalError(f"cannot evaluate {op!r}")


def eval_predicate(pred: Predicate, state: PhysSnapshot, consts: Mapping[str, Union[int, str]]) -> bool:
    lhs = _eval_operand(pred.lhs, state, consts)
    rhs = _eval_operand(pred.rhs, state, consts)
    if pred.op == "==":
        return lhs == rhs
    if pred.op == "!=":
        return lhs != rhs
    if not (isinstance(lhs, int) and isinstance(rhs, int)):
        raise EvalError(f"ordered comparison needs integers, got {lhs!r} {pred.op} {rhs!r}")
    return {"<": lhs < rhs, "<=": lhs <= rhs, ">": lhs > rhs, ">=": lhs >= rhs}[pred.op]


def eval_requires(program: RoleProgram, role_name: str, state: PhysSnapshot) -> bool:
    """True iff every require of the role and all its ancestors holds."""
    consts = program.effective_constants(role_name)
    return all(
        eval_predicate(pred, state, consts)
        for pred in program.effective_requires(role_name)
    )


@dataclass
class AssignResult:
    role: Optional[str]
    candidates: list[str]
    excluded: list[tuple[str, str]]  # (role, evaluation error)

    @property
    def ambiguous(self) -> bool:
        return len(self.candidates) > 1


def assign_role(program: RoleProgram, state: PhysSnapshot) -> AssignResult:
    """Pure function of (program, state): the concrete roles whose
    invariants hold, with the lexicographically smallest name winning a
    multi-candidate tie."""
    candidates: list[str] = []
    excluded: list[tuple[str, str]] = []
    for role in program.concrete_roles():
        try:
            if eval_requires(program, role.name, state):
                candidates.append(role.name)
        except EvalError as exc:
            excluded.append((role.name, str(exc)))
    candidates.sort()
    return AssignResult(candidates[0] if candidates else None, candidates, excluded)


def measure_text(data: bytes) -> tuple[int, int]:
    """(raw byte count, gzip byte count) with deterministic gzip output:
    level 9, no filename, mtime pinned to 0."""
    return len(data), len(gzip.compress(data, compresslevel=9, mtime=0))


def measure_program_size(program: RoleProgram) -> tuple[int, int]:
    return measure_text(program.source_text.encode("utf-8"))
