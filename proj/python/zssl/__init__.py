# Copyright 2025-2026 The zssl Authors
#
# Licensed under the Apache License, Version 2.0
"""Python surface of the zssl core: tensors with reverse-mode gradients,
feature extraction, the multi-rate encoder, masked-prediction losses, CTC
training and decoding, n-gram fusion, clustering, and the optimizer."""

from _zssl import *  # noqa: F401,F403
from _zssl import __doc__  # noqa: F401
