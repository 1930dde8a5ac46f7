"""Perimeter-control laboratory: a mesoscopic grid simulator, baseline
perimeter controllers, DDQN cordon agents and the experiment harness."""

__version__ = "0.1.0"
