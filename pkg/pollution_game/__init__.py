from . import errors
from . import config
from .game.equilibrium import solve_equilibrium
from .game.model import build_game
from .io.scenario_loader import parse_scenario

__all__ = ["errors", "config", "solve_equilibrium", "build_game", "parse_scenario"]
