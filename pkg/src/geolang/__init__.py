"""Geography-aware language model pre-training on a POI/query graph.

Modules: ``dgg`` (S2 cells and multi-level geocodes), ``geograph``
(heterogeneous graph and snapshots), ``sampler`` (random-walk corpora),
``masker`` (whole-entity masking), ``numerics`` (autodiff and Adam),
``model`` (encoder, TranSAGE, heads, pre-training), ``tasks`` (downstream
heads and metrics) and ``cli``.
"""

__version__ = "0.1.0"
