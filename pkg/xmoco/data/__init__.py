from xmoco.data.pairs import ModalityPair, PairDataset, batches, load_pairs, split, write_pairs
from xmoco.data.synthetic import SynthSpec, generate_synthetic

__all__ = [
    "ModalityPair",
    "PairDataset",
    "SynthSpec",
    "batches",
    "generate_synthetic",
    "load_pairs",
    "split",
    "write_pairs",
]
