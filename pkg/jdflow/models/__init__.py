# Flake8: noqa: F403, F401
from jdflow.models.noise import *
from jdflow.models.coefficients import *
from jdflow.models.costs import *
from jdflow.models.path import *
from jdflow.models.control import *
from jdflow.models.reports import *
from jdflow.models.config import *
