from .plan import (DEFAULT_S_CAP, CompressedModel, CompressionAction, CompressionPlan, LayerResult,
                   PruneContext, apply_plan, build_masks, granularity, resolve_dependencies)
from .pruning import (FINE_GRAINED, TECHNIQUES, ChannelSelector, PruningMask, n_pruned,
                      prune_bernoulli, prune_fm_reconstruction, prune_l1_ranked, prune_l2_ranked,
                      prune_level, prune_sensitivity, prune_splicing)
from .quant import (LAPLACE_LAMBDA, ActQuant, QuantParams, calibrate_activations, fake_quant,
                    laplace_clip, quantize_layer, quantize_weights)
