from .lexer import tokenize
from .parser import parse
from .scenario import ScenarioConfig, build_family, build_model, load_scenario


__all__ = ["tokenize", "parse", "load_scenario", "build_model", "build_family", "ScenarioConfig"]
