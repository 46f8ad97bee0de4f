"""Non-fine-tunable learning at desk scale: protect small models so that
fine-tuning them on a restricted domain is no better than training from scratch."""

__version__ = "0.1.0"
