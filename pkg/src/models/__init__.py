from src.models.dataset import Dataset
from src.models.network import Mlp, TrainConfig, binary_model, binary_weights, logistic_regression
