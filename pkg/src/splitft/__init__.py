"""Budget-adaptive split federated LoRA fine-tuning simulator."""

__version__ = "0.1.0"
