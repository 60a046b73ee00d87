"""Turn-budgeted screening dialogues: RL question selection over per-user
response simulators with a linear classifier on averaged embeddings."""

__version__ = "0.1.0"
