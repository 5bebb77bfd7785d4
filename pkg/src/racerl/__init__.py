"""racerl: a 2D telemetry racing simulator, a DDPG variant family, and a benchmark harness."""

__version__ = "0.1.0"
