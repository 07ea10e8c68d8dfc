import ply.yacc as yacc

from ..errors import ConfigError
from .lexer import lexer, tokens  # noqa
from .tree import Block, Declaration


def p_config(p):
    """
    config : statements
    """
    p[0] = Block("config", items=p[1], line=1)


def p_statements_empty(p):
    """
    statements :
    """
    p[0] = []


def p_statements(p):
    """
    statements : statements statement
    """
    p[0] = p[1] + [p[2]]


def p_declaration(p):
    """
    statement : IDENT ':' values ';'
    """
    p[0] = Declaration(p[1], p[3], p.lineno(1))


def p_block(p):
    """
    statement : IDENT '{' statements '}'
    """
    p[0] = Block(p[1], None, p[3], p.lineno(1))


def p_labelled_block(p):
    """
    statement : IDENT IDENT '{' statements '}'
    """
    p[0] = Block(p[1], p[2], p[4], p.lineno(1))


def p_values(p):
    """
    values : value
           | values ',' value
    """
    if len(p) == 2:
        p[0] = [p[1]]
    else:
        p[0] = p[1] + [p[3]]


def p_value(p):
    """
    value : NUMBER
          | STRING
          | IDENT
    """
    p[0] = p[1]


def p_error(t):
    if t is None:
        raise ConfigError("unexpected end of input")
    raise ConfigError("unexpected %r" % (t.value,), line=t.lineno)


parser = yacc.yacc(write_tables=False, debug=False)


def parse(text):
    """Parse scenario text into a root Block named "config"."""
    scanner = lexer.clone()
    scanner.lineno = 1
    return parser.parse(text, lexer=scanner)
