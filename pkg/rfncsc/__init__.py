"Convolutional sparse coding with receptive field normalization"

__version__ = "0.1"
