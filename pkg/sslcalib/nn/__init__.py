from .layers import Linear
from .classifier import MlpClassifier, ModelPair, mlp_forward, predict_proba, ema_update, cross_feature_forward
from .vae import VaeNet, vae_encode, reparameterize, vae_decode

__all__ = [
    "Linear", "MlpClassifier", "ModelPair", "mlp_forward", "predict_proba", "ema_update",
    "cross_feature_forward", "VaeNet", "vae_encode", "reparameterize", "vae_decode",
]
