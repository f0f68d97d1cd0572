"""SAMC-family adaptive Monte Carlo samplers."""
