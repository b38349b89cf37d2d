"""
Estimation services: least squares, baseline estimators, skedastic and
control-function fits, inference and Monte Carlo simulation
"""
