"""Model access: prompt templates, structured outputs, and the cached gateway."""
