from .optim import Adadelta, Adam
from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    cosine_similarity,
    cosine_similarity_matrix,
    default_dtype,
    div,
    dropout,
    embedding_lookup,
    exp,
    gelu_fast,
    get_default_dtype,
    getitem,
    l2_normalize,
    layer_norm,
    log,
    logsumexp,
    matmul,
    mean,
    mul,
    no_grad,
    reduce_sum,
    reshape,
    set_default_dtype,
    softmax,
    sqrt,
    sub,
    transpose,
)
