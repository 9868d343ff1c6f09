"""DNS firewall and digital-hygiene analytics toolkit."""

__version__ = "0.1.0"
