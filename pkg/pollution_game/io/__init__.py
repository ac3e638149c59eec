from . import scenario_loader
from . import field_writer
