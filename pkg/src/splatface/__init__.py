"""Audio-driven deformable 3D Gaussian head renderer.

Subpackage map: autodiff/optim/nn (differentiation and optimization),
fields (canonical Gaussian primitives), triplane (position encoding),
cmdm (cross-modal features), hmmm (fusion and motion prediction),
renderer/kernels (tile-based splatting), losses (training and evaluation),
synth (synthetic benchmark), model/train/config/cli (assembly and tooling).
"""

__version__ = "0.1.0"
