"""Neural networks whose parameters are functions on a compact set Z.

The algebra C(Z) is represented by samples at a finite set of anchors, and
parameter functions live in a span of Gaussian RBFs centred on those anchors.
"""

__version__ = "0.1.0"

from cstarnet.algebra import AElement, AnchorSet, AVector, inner_product, norm  # noqa: E402
from cstarnet.basis import BasisSpec, MeasureD, RidgeProjector, make_grid_anchors  # noqa: E402

__all__ = ["AElement", "AVector", "AnchorSet", "BasisSpec", "MeasureD", "RidgeProjector",
           "inner_product", "make_grid_anchors", "norm"]
