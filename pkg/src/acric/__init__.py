"""ACRIC: authenticated CRC for legacy protocols."""
