"""
cfhet: augmented control-function estimation for linear IV models
with endogenous heteroskedasticity
"""

import config

__version__ = config.VERSION
