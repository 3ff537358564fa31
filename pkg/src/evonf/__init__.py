"""EvoNF: evolutionary optimised Takagi-Sugeno fuzzy inference with gradient fine-tuning."""

from typing import Final

__version__: Final = "1.0.0"
