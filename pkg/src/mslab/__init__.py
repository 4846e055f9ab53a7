"""Quality measures for sampling point sets on spheres and flat tori."""
__version__ = "0.1.0"
