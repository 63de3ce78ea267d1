"""GM-VQ: Gaussian Mixture Vector Quantization 桌面规模实现"""

__version__ = "1.0.0"
__author__ = "xyt"
__email__ = "wuw038030@gmail.com"
