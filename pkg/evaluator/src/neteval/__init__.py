"""neteval: a small normal-from-shading network that scores candidate
shape datasets for the evolution engine over a stdio JSON protocol."""

__version__ = "0.1.0"
