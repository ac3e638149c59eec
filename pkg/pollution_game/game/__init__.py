from . import model
from . import equilibrium
from . import simulation
from . import verification
