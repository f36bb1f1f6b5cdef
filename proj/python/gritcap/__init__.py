"""Caption generation, vocabulary building and caption metrics."""

try:
    from ._gritcap import *  # noqa: F401,F403
    from ._gritcap import __doc__ as _native_doc  # noqa: F401
except ImportError:
    # In-tree builds put the extension next to the build tree, not the package.
    from _gritcap import *  # noqa: F401,F403

__all__ = [
    "BOS_ID",
    "Decoder",
    "EOS_ID",
    "Error",
    "FeatureBundle",
    "IoError",
    "PAD_ID",
    "ParseError",
    "UNK_ID",
    "ValidationError",
    "Vocabulary",
    "CaptionRecord",
    "bleu",
    "build_vocab",
    "cider",
    "evaluate",
    "interpret_bleu",
    "load_coco_json",
    "meteor",
    "normalize",
    "parse_coco_json",
    "portuguese_stem",
    "rouge_l",
    "sinusoidal_embedding",
    "synthesize_features",
    "tokenize",
]
