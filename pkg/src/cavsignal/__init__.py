"""Signal control and surrogate safety at a single intersection with mixed traffic."""
