"""gapcam: small CNNs with global-pooling heads whose classifier weights
project back onto the last feature maps, locating each class's evidence.

Subpackage map:

- ``nn``: numpy layer ops with hand-derived gradients and a gradient checker
- ``gapnet``: network assembly, the training loop, and head swapping
- ``synthdata``: the five-class procedural shape dataset
- ``cam``: class activation maps, the score identity, bilinear upsampling
  and the gradient-saliency baseline
- ``localize``: thresholding, connected components and box proposals
- ``evaluate``: IoU, localization error and the benchmark harness
- ``features``: frozen-feature linear probes and unit ranking
- ``io``: tensor/checkpoint/dataset files and PNG rendering
- ``cli``: the ``gapcam`` command line
"""

__version__ = "0.1.0"
