"""Semi-decentralized control of agents in aggregative games with coupling constraints."""

__version__ = "0.1.0"
