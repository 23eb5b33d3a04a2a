"""Application-level fault-tolerance toolkit: a recovery-script compiler
and virtual machine, a simulated distributed backbone with voting and
watchdog tools, and analytic models for gossiping and reliability."""

__version__ = "0.1.0"
