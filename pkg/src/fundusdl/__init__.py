"""fundusdl: a small, self-contained CNN training toolkit for fundus images.

Everything numerical is implemented directly on float64 numpy arrays in
(batch, channels, height, width) layout: convolution and pooling primitives,
differentiable layers with hand-written backward rules, Adam, binary
cross-entropy over a softmax head, miniature DenseNet/ResNet builders, the
fundus preprocessing filters (rgb / green / high-contrast), and a trainer
that runs the 2-architecture x 3-filter experiment matrix.
"""

__version__ = "0.1.0"
