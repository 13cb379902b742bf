"""Unsupervised feature learning, dynamic pooling and raw end-to-end vectors."""
from .kmeans import Codebook, kmeans_train, triangle_encode
from .dictionary import Dictionary, DictPair, EncoderConfig, extract_patches, omp1_train
from .pooling import POOL_KINDS, encode_location, make_pool_region, pooled_feature
from .endtoend import end_to_end_vector

__all__ = [
    "Codebook", "kmeans_train", "triangle_encode",
    "Dictionary", "DictPair", "EncoderConfig", "extract_patches", "omp1_train",
    "POOL_KINDS", "encode_location", "make_pool_region", "pooled_feature",
    "end_to_end_vector",
]
