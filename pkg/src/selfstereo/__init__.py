"""Self-supervised stereo matching on synthetic vein-like scenes.

A self-contained research codebase: a small reverse-mode autodiff
engine (`autodiff`), differentiable stereo building blocks (`stereo`),
the four-part self-supervision objective (`losses`), a toy pyramid
stereo network (`network`), an exact-ground-truth synthetic data
generator (`synth`), file formats (`fileio`), the Adam training loop
with binary checkpoints (`trainer`), metrics and a block-match baseline
(`evaluate`), and a command-line front end (`cli`).
"""

__version__ = "0.1.0"
