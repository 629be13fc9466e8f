"""Instance-grounded video diffusion mechanisms at desk scale, plus instance-aware metrics."""

from .bench import EvalReport, ToyColorProvider, aggregate, evaluate_video, iou, match_instances
from .encoder import EmbedderConfig, encode_prompt, extra_id_tokens
from .grounding import (BBox, DownscaleSpec, InstanceTrack, MaskConfig, VideoGrounding,
                        build_mask, rescale_bbox, select_key_frames)
from .guidance import GuidanceConfig, LrSchedule, lr_at, run_guided_step, saug_combine
from .model import ForwardState, ShapeConfig, forward_stack, init_weights
from .numerics import adaln_modulate, masked_attention

__version__ = "0.1.0"
