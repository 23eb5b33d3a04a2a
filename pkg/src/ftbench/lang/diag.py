from __future__ import annotations

from dataclasses import dataclass, field

ERROR, WARNING = "error", "warning"


@dataclass(frozen=True)
class Diagnostic:
    line: int
    severity: str
    message: str
    phase: str = "syntax"     # syntax, symbol, semantical

    def __str__(self):
        if self.severity == WARNING:
            return f"Line {self.line}: warning: {self.message}"
        return f"Line {self.line}: {self.phase} error: {self.message}"


@dataclass
class Diagnostics:
    items: list[Diagnostic] = field(default_factory=list)

    def error(self, line: int, message: str, phase: str) -> None:
        self.items.append(Diagnostic(line, ERROR, message, phase))

    def warn(self, line: int, message: str, phase: str = "semantical") -> None:
        self.items.append(Diagnostic(line, WARNING, message, phase))

    def extend(self, other: "Diagnostics") -> None:
        self.items.extend(other.items)

    @property
    def errors(self) -> list[Diagnostic]:
        return [d for d in self.items if d.severity == ERROR]

    @property
    def warnings(self) -> list[Diagnostic]:
        return [d for d in self.items if d.severity == WARNING]

    def has_errors(self) -> bool:
        return any(d.severity == ERROR for d in self.items)

    def messages(self) -> list[str]:
        return [d.message for d in self.items]

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)
