from src.network.engine import (
    ForwardPass,
    calibrate_temperature,
    evaluate,
    forward,
    input_gradient,
    load_model,
    logits_of,
    predict,
    save_model,
    softmax,
    train,
)
