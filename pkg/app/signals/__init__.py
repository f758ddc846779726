"""EDF parsing, annotation decoding and epoching."""
