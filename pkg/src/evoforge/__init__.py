"""evoforge: LLM-guided program evolution with a MAP-Elites archive and a DAG evaluation pipeline."""

__version__ = "0.1.0"
