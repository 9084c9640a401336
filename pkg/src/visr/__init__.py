"""visr — dual-stream (audio + image hotword) speech recognition toolkit.

Pure-python/numpy training stack with an optional compiled kernel backend.
Entry points: the ``visr`` CLI (see ``visr.cli``) or the library modules
(``visr.model``, ``visr.training``, ``visr.evaluate``).
"""

__version__ = "0.1.0"
