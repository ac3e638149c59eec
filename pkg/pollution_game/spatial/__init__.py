from . import geometry
from . import assembly
from . import linsolve
from . import utils
