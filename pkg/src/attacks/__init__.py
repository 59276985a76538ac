from src.attacks.advgen import AttackConfig, AttackEntry, AttackReport, attack_suite, generate
from src.attacks.poison import (
    BackdoorSpec,
    corrupt_dataset,
    corruption_threshold,
    decay_scale,
    evaluate_backdoor,
    make_backdoor_signal,
    pick_seed_image,
    select_poison_indices,
    threshold_backdoor_predict,
    train_with_decay,
)
from src.attacks.stego import StegoCodec, Steganogram, build_codec, decode, encode, k_sweep, reconstruction_errors
from src.attacks.tilt import (
    TiltPlan,
    adversarial_distance,
    apply_tilt_to_model,
    binary_tilt_sweep,
    logit_drift,
    mlp_pixel_backdoor,
    pixel_flip_value,
    reflect_adversarial,
    tilt_binary,
    tilt_layer,
)
