import ply.lex as lex

from ..errors import ConfigError


number = r"[-+]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][-+]?[0-9]+)?"
ident = r"[A-Za-z_][A-Za-z0-9_\-]*"

tokens = [
    "NUMBER",
    "STRING",
    "IDENT",
]

literals = "{}:;,"

t_ignore = " \t\r\f"


def t_comment(t):
    r"/\*(.|\n)*?\*/"
    t.lexer.lineno += t.value.count("\n")


def t_line_comment(t):
    r"\#[^\n]*"


def t_newline(t):
    r"\n+"
    t.lexer.lineno += len(t.value)


@lex.TOKEN(number)
def t_NUMBER(t):
    text = t.value
    t.value = int(text) if text.lstrip("+-").isdigit() else float(text)
    return t


def t_STRING(t):
    r"\"([^\"\\\n]|\\.)*\"|'([^'\\\n]|\\.)*'"
    t.value = t.value[1:-1]
    return t


@lex.TOKEN(ident)
def t_IDENT(t):
    return t


def t_error(t):
    raise ConfigError("illegal character %r" % t.value[0], line=t.lexer.lineno)


lexer = lex.lex()


def tokenize(text):
    """All tokens of a scenario text as (type, value, line) triples."""
    scanner = lexer.clone()
    scanner.lineno = 1
    scanner.input(text)
    return [(token.type, token.value, token.lineno) for token in scanner]
