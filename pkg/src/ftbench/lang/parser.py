"""Recursive-descent parser for recovery scripts.

A syntax error is reported with its line number and the parser skips to
the next newline, so one bad line does not hide later ones.
"""

from __future__ import annotations

from ..model import STATUSES
from . import nodes as n
from .diag import Diagnostics
from .lexer import EOF, NL, NUM, REAL, REF, STR, SYM, WORD, Token, tokenize

KIND_WORDS = {"T": "task", "TASK": "task", "THREAD": "task",
              "G": "group", "GROUP": "group", "LOGICAL": "group",
              "N": "node", "NODE": "node"}
CMP_WORDS = {"EQ": "==", "NEQ": "!=", "NE": "!=", "GT": ">", "GE": ">=",
             "LT": "<", "LE": "<="}
UNITS = {"MS": 1000, "MSEC": 1000, "MILLISEC": 1000, "US": 1, "USEC": 1,
         "MICROSEC": 1, "TICKS": 1, "S": 1_000_000, "SEC": 1_000_000}
ALGORITHMS = ("MAJORITY", "MEDIAN", "PLURALITY", "WEIGHTED_AVERAGE", "CONSENSUS")
_SIMPLE_VERBS = {"STOP": "stop", "ISOLATE": "isolate", "REBOOT": "reboot",
                 "RESTART": "restart", "START": "start", "ENABLE": "enable"}


class ParseError(Exception):
    def __init__(self, line: int, msg: str):
        super().__init__(msg)
        self.line = line


def is_timeout_name(word: str) -> bool:
    return word.endswith("_TIMEOUT") or word.endswith("_TIMEOUT_B")


class Parser:
    def __init__(self, text: str):
        self.toks, lex_errors = tokenize(text)
        self.i = 0
        self.diags = Diagnostics()
        for e in lex_errors:
            self.diags.error(e.line, str(e), "syntax")
        self.ast = n.Ast(line_count=text.count("\n") + (0 if text.endswith("\n") or not text else 1))

    # -- token helpers

    def peek(self, k: int = 0) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.peek()
        if t.type != EOF:
            self.i += 1
        return t

    def fail(self, msg: str | None = None, tok: Token | None = None):
        tok = tok or self.peek()
        if msg is None:
            shown = "end of line" if tok.type == NL else ("end of file" if tok.type == EOF
                                                         else repr(tok.text or str(tok.value)))
            msg = f"unexpected {shown}"
        raise ParseError(tok.line, msg)

    def word(self, *words: str) -> Token:
        t = self.peek()
        if not t.is_word(*words):
            self.fail(f"expected {' or '.join(words)}" + self._near(t))
        return self.next()

    def sym(self, s: str) -> Token:
        t = self.peek()
        if not t.is_sym(s):
            self.fail(f"expected '{s}'" + self._near(t))
        return self.next()

    def _near(self, t: Token) -> str:
        if t.type == NL:
            return " before end of line"
        if t.type == EOF:
            return " before end of file"
        return f" near {t.text or t.value!r}"

    def opt_word(self, *words: str) -> bool:
        if self.peek().is_word(*words):
            self.next()
            return True
        return False

    def opt_sym(self, s: str) -> bool:
        if self.peek().is_sym(s):
            self.next()
            return True
        return False

    def num(self, display_prefix: str = "") -> n.Num:
        t = self.peek()
        if t.type == NUM:
            return self.next().value
        if t.type == REF:
            self.next()
            self.ast.refs.append((f"{display_prefix}{{{t.value}}}", t.value, t.line))
            return n.Ref(t.value, t.line)
        self.fail("expected a number" + self._near(t))

    def real(self) -> float:
        t = self.peek()
        if t.type in (NUM, REAL):
            return float(self.next().value)
        self.fail("expected a real number" + self._near(t))

    def string(self) -> str:
        t = self.peek()
        if t.type != STR:
            self.fail("expected a string" + self._near(t))
        return self.next().value

    def at_sep(self) -> bool:
        t = self.peek()
        return t.type in (NL, EOF) or t.is_sym(";")

    def end_stmt(self) -> None:
        self.opt_sym(".")
        t = self.peek()
        if t.type == EOF:
            return
        if t.type == NL or t.is_sym(";"):
            self.next()
            return
        self.fail()

    def skip_seps(self) -> None:
        while self.peek().type == NL or self.peek().is_sym(";"):
            self.next()

    def sync(self) -> None:
        while self.peek().type not in (NL, EOF):
            self.next()
        self.next()

    def unit(self, default: int = 1000) -> int:
        t = self.peek()
        if t.type == WORD and t.value in UNITS:
            self.next()
            return UNITS[t.value]
        return default

    # -- program

    def parse(self) -> n.Ast:
        while self.peek().type != EOF:
            if self.peek().type == NL or self.peek().is_sym(";"):
                self.next()
                continue
            try:
                self.statement()
            except ParseError as e:
                self.diags.error(e.line, str(e), "syntax")
                self.sync()
        return self.ast

    def statement(self) -> None:
        t = self.peek()
        if t.type != WORD:
            self.fail()
        w = t.value
        items = self.ast.config_items
        if w == "INCLUDE":
            self.next()
            items.append(n.Include(self.string(), t.line))
            self.end_stmt()
        elif w == "NPROCS":
            self.next()
            self.sym("=")
            items.append(n.NProcs(self.num(), t.line))
            self.end_stmt()
        elif w in ("DEF", "DEFINE"):
            self.next()
            items.append(self.role_def(t.line))
            self.end_stmt()
        elif w == "NUMTASKS":
            self.next()
            node = self.num()
            self.sym("=")
            items.append(n.NumTasks(node, self.num(), t.line))
            self.end_stmt()
        elif is_timeout_name(w):
            self.next()
            self.sym("=")
            value = self.num()
            items.append(n.TimeoutSet(w, value, t.line))
            self.end_stmt()
        elif w in ("TASK", "T") and not self.peek(1).is_sym("@", "~", "$", "*"):
            self.next()
            items.append(self.task_decl(t.line))
            self.end_stmt()
        elif w in ("LOGICAL", "GROUP"):
            self.next()
            items.append(self.logical_decl(t.line))
            self.end_stmt()
        elif w == "ALPHACOUNT":
            self.next()
            task = self.num()
            th, k = self.alpha_body()
            items.append(n.AlphaDecl(task, th, k, t.line))
            self.end_stmt()
        elif w == "WATCHDOG":
            self.next()
            items.append(self.watchdog(t.line))
        elif w == "NVERSION":
            self.next()
            items.append(self.nversion(t.line))
        elif w == "INJECT":
            self.next()
            items.append(self.injection(t.line))
            self.end_stmt()
        elif w == "IF":
            self.ast.sections.append(self.section())
        else:
            self.fail()

    # -- configuration

    def role_def(self, line: int) -> n.RoleDef:
        first = self.num()
        nodes_: list[n.Num] = [first]
        interval = None
        if self.opt_sym("-"):
            interval = (first, self.num())
            nodes_ = []
        else:
            while self.opt_sym(","):
                nodes_.append(self.num())
        self.sym("=")
        r = self.word("MANAGER", "ASSISTANT", "ASSISTANTS")
        role = "manager" if r.value == "MANAGER" else "assistant"
        return n.RoleDef(nodes_, interval, role, line)

    def span(self) -> n.Span:
        if self.opt_sym("["):
            lo = self.num()
            self.sym(",")
            hi = self.num()
            self.sym("]")
            return n.Span(lo, hi, True)
        v = self.num()
        return n.Span(v, v, False)

    def task_decl(self, line: int):
        ids = self.span()
        name = None
        if self.opt_sym("="):
            name = self.string()
        self.word("IS")
        self.skip_nl()
        if self.opt_word("MBOX"):
            mbox = self.span()
            self.sym(",")
            self.skip_nl()
            self.word("ALIAS")
            return n.AliasDecl(ids, mbox, self.span(), line)
        self.word("NODE")
        node = self.num()
        self.sym(",")
        self.skip_nl()
        self.word("TASKID")
        return n.TaskDecl(ids, name, node, self.span(), line)

    def skip_nl(self) -> None:
        while self.peek().type == NL:
            self.next()

    def logical_decl(self, line: int) -> n.LogicalDecl:
        gid = self.num()
        name = None
        if self.opt_sym("="):
            name = self.string()
        self.word("IS")
        self.skip_nl()
        self.word("TASK", "T")
        members = [self.num()]
        while self.opt_sym(","):
            self.skip_nl()
            self.opt_word("TASK", "T")
            members.append(self.num())
        self.skip_nl()
        self.end_keyword("LOGICAL")
        return n.LogicalDecl(gid, name, members, line)

    def end_keyword(self, what: str) -> None:
        t = self.peek()
        if t.is_word("END" + what):
            self.next()
            return
        self.word("END")
        self.word(what)

    def alpha_body(self) -> tuple[float, float]:
        self.word("IS")
        self.word("THRESHOLD")
        self.sym("=")
        th = self.real()
        self.sym(",")
        self.word("FACTOR")
        self.sym("=")
        k = self.real()
        t = self.peek()
        if t.is_word("ENDALPHA", "ENDALPHACOUNT"):
            self.next()
        else:
            self.word("END")
            self.opt_word("ALPHA", "ALPHACOUNT")
        return th, k

    def block(self, end: str, clause) -> None:
        """Parse clause lines until END <end>; errors skip one clause."""
        while True:
            self.skip_seps()
            t = self.peek()
            if t.type == EOF:
                self.fail(f"missing END {end}", t)
            if t.is_word("END" + end) or (t.is_word("END") and self.peek(1).is_word(end)):
                self.end_keyword(end)
                self.end_stmt()
                return
            try:
                clause()
            except ParseError as e:
                self.diags.error(e.line, str(e), "syntax")
                self.sync()

    def watchdog(self, line: int) -> n.WatchdogDecl:
        self.opt_word("TASK", "T")
        wid = self.num()
        watched = None
        if self.opt_word("WATCHES"):
            self.opt_word("TASK", "T")
            watched = self.num()
        decl = n.WatchdogDecl(wid, watched, None, 1000, ("warn_backbone",), None, line)

        def clause():
            t = self.peek()
            if t.is_word("HEARTBEATS", "HEARTBEAT"):
                self.next()
                self.word("EVERY")
                decl.period = self.num()
                decl.unit = self.unit()
            elif t.is_word("ON"):
                self.next()
                self.word("ERROR")
                if self.opt_word("WARN"):
                    if self.opt_word("BACKBONE"):
                        decl.on_error = ("warn_backbone",)
                    else:
                        self.word("TASK", "T")
                        decl.on_error = ("warn_task", self.num())
                elif self.opt_word("REBOOT"):
                    decl.on_error = ("reboot",)
                else:
                    self.word("RESTART")
                    decl.on_error = ("restart",)
            elif t.is_word("ALPHACOUNT"):
                self.next()
                decl.alpha = self.alpha_body()
            else:
                self.fail()
            if not self.peek().is_word("END"):
                self.end_stmt()

        self.block("WATCHDOG", clause)
        return decl

    def nversion(self, line: int) -> n.NVersionDecl:
        self.word("TASK", "T", "LOGICAL", "GROUP")
        nid = self.num()
        decl = n.NVersionDecl(nid, [], "MAJORITY", "", None, None, None, line)

        def clause():
            t = self.peek()
            if t.is_word("VERSION"):
                self.next()
                rank = self.num()
                self.word("IS")
                spare = self.opt_word("SPARE")
                self.opt_word("TASK", "T")
                task = self.num()
                timeout, unit = None, 1000
                if self.opt_word("TIMEOUT"):
                    timeout = self.num()
                    unit = self.unit()
                decl.versions.append(n.VersionDecl(rank, task, spare, timeout, unit, t.line))
            elif t.is_word("VOTING"):
                self.next()
                self.word("ALGORITHM")
                self.word("IS")
                decl.algorithm = self.word(*ALGORITHMS).value
            elif t.is_word("METRIC"):
                self.next()
                decl.metric = self.string()
            elif t.is_word("ON"):
                self.next()
                if self.opt_word("SUCCESS"):
                    self.opt_word("TASK", "T")
                    decl.on_success = self.num()
                else:
                    self.word("ERROR")
                    self.opt_word("TASK", "T")
                    decl.on_error = self.num()
                    if not self.at_sep():
                        decl.on_error_extra = self.num()
            else:
                self.fail()
            self.end_stmt()

        self.end_stmt()
        self.block("NVERSION", clause)
        return decl

    def injection(self, line: int) -> n.InjectDecl:
        fault = self.word("BFAULT", "MFAULT").value
        self.word("ON")
        what = self.word("NODE", "COMPONENT").value
        target = self.num()
        self.word("AFTER")
        after = self.num()
        self.opt_word("TICKS")
        return n.InjectDecl(fault, what, target, after, line)

    # -- entities and guards

    def entity(self) -> n.EntityExpr:
        t = self.peek()
        if t.type != WORD or t.value not in KIND_WORDS:
            self.fail("expected an entity" + self._near(t))
        self.next()
        kind = KIND_WORDS[t.value]
        prefix = t.text or t.value
        nx = self.peek()
        if nx.is_sym("@"):
            self.next()
            if self.peek().type == NUM:
                return n.EntityExpr(kind, "at", self.next().value, t.line, prefix)
            return n.EntityExpr(kind, "match", None, t.line, prefix)
        if nx.is_sym("~"):
            self.next()
            return n.EntityExpr(kind, "tilde", self.num(), t.line, prefix)
        if nx.is_sym("$"):
            self.next()
            return n.EntityExpr(kind, "dollar", self.num(), t.line, prefix)
        if nx.is_sym("*"):
            self.next()
            return n.EntityExpr(kind, "star", None, t.line, prefix)
        return n.EntityExpr(kind, "lit", self.num(prefix), t.line, prefix)

    def expr(self):
        left = self.and_expr()
        while self.peek().is_word("OR") or self.peek().is_sym("|"):
            self.next()
            left = n.BinExpr("OR", left, self.and_expr())
        return left

    def and_expr(self):
        left = self.unary()
        while self.peek().is_word("AND") or self.peek().is_sym("&"):
            self.next()
            left = n.BinExpr("AND", left, self.unary())
        return left

    def unary(self):
        if self.opt_word("NOT"):
            return n.NotExpr(self.unary())
        return self.primary()

    def compare(self) -> str:
        t = self.peek()
        if t.is_sym("==", "!=", ">", ">=", "<", "<="):
            return self.next().value
        if t.is_sym("="):
            self.next()
            return "=="
        if t.type == WORD and t.value in CMP_WORDS:
            self.next()
            return CMP_WORDS[t.value]
        self.fail("expected a comparison operator" + self._near(t))

    def primary(self):
        t = self.peek()
        if t.is_sym("("):
            self.next()
            e = self.expr()
            self.sym(")")
            return e
        if t.type == WORD and t.value in STATUSES:
            self.next()
            return n.AtomExpr(t.value, self.entity(), line=t.line)
        if t.is_word("ERRN", "ERRT", "PHASE"):
            self.next()
            self.sym("(")
            ent = self.entity()
            self.sym(")")
            cmp = self.compare()
            return n.AtomExpr(t.value, ent, cmp, self.num(), line=t.line)
        if t.is_word("DEADLOCKED"):
            self.next()
            a = self.entity()
            return n.AtomExpr("DEADLOCKED", a, other=self.entity(), line=t.line)
        self.fail("expected a guard atom" + self._near(t))

    # -- sections and actions

    def section(self) -> n.Section:
        start = self.word("IF")
        branches = [self.branch(start.line)]
        else_actions = None
        while self.peek().is_word("ELIF"):
            t = self.next()
            branches.append(self.branch(t.line))
        if self.opt_word("ELSE"):
            self.skip_seps()
            else_actions = self.actions(start.line)
        fi = self.word("FI")
        self.end_stmt()
        return n.Section(branches, else_actions, start.line, fi.line)

    def branch(self, line: int) -> n.Branch:
        self.sym("[")
        guard = self.expr()
        self.sym("]")
        self.skip_seps()
        self.word("THEN")
        self.skip_seps()
        return n.Branch(guard, self.actions(line), line)

    def actions(self, section_line: int) -> list:
        out: list = []
        while True:
            self.skip_seps()
            t = self.peek()
            if t.type == EOF:
                raise ParseError(section_line, "IF without matching FI")
            if t.is_word("ELIF", "ELSE", "FI"):
                return out
            if t.is_word("IF"):
                out.append(self.section())
                continue
            try:
                out.extend(self.action_line())
            except ParseError as e:
                self.diags.error(e.line, str(e), "syntax")
                self.sync()

    def action_line(self) -> list:
        first = self.recovery_action()
        acts = [first]
        while self.peek().is_word("AND") and self.peek(1).is_word("WARN"):
            t = self.next()
            self.next()
            w = n.Action("warn", t.line, entity=self.entity(), subject=first.entity)
            w.args = self.arg_list()
            acts.append(w)
        self.end_stmt()
        return acts

    def arg_list(self) -> list:
        if not self.opt_sym("("):
            return []
        args = [self.num()]
        while self.opt_sym(","):
            args.append(self.num())
        self.sym(")")
        return args

    def recovery_action(self) -> n.Action:
        t = self.peek()
        if t.type != WORD:
            self.fail("expected a recovery action" + self._near(t))
        w = t.value
        line = t.line
        if w in _SIMPLE_VERBS:
            self.next()
            return n.Action(_SIMPLE_VERBS[w], line, entity=self.entity())
        if w == "SEND":
            self.next()
            if self.opt_word("FAULTY"):
                return n.Action("send_faulty", line, entity=self.entity())
            value = self.num()
            return n.Action("send", line, entity=self.entity(), value=value)
        if w == "ERR":
            self.next()
            code = self.num()
            subject = self.entity()
            self.word("WARN")
            a = n.Action("warn", line, entity=self.entity(), err_code=code, subject=subject)
            a.args = self.arg_list()
            return a
        if w == "WARN":
            self.next()
            a = n.Action("warn", line, entity=self.entity())
            a.args = self.arg_list()
            return a
        if w == "REMOVE":
            self.next()
            sel = self.word("PHASE", "ANY").value.lower()
            ent = self.entity()
            self.word("FROM")
            self.word("ERRORLIST")
            return n.Action("remove", line, entity=ent, selector=sel)
        if w == "CALL":
            self.next()
            a = n.Action("call", line, value=self.num())
            a.args = self.arg_list()
            return a
        if w == "PAUSE":
            self.next()
            return n.Action("pause", line, value=self.num())
        self.fail("expected a recovery action" + self._near(t))


def parse(script: str) -> tuple[n.Ast, Diagnostics]:
    """Parse ``script``; the tree is partial when diagnostics hold errors."""
    p = Parser(script)
    ast = p.parse()
    return ast, p.diags
