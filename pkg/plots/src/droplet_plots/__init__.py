"""Post-hoc decay-plot rendering for droplet-lab run directories."""

__version__ = "0.1.0"
