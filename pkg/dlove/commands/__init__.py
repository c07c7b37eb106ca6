from .experiment import experiment_commands
from .stages import stage_commands
