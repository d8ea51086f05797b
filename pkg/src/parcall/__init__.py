"""Plan, schedule and run LLM function calls in parallel, with fault recovery."""

__version__ = "0.1.0"
