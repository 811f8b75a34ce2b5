# Copyright 2026 The capreg Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.


"""Capacity-regularised self-supervised representation learning.

Thin re-export of the compiled core. Arrays are float64 numpy arrays; loss
functions return ``(value, gradients)``.
"""

from ._capreg import (
    ConfigError,
    barlow_twins,
    canonical_config,
    estimate_mi_lower_bound,
    gradcheck,
    info_nce,
    macro_f1,
    mmcr_loss,
    nt_xent,
    nuclear_norm,
    probe,
    pretrain,
    run_cli,
    svd,
    ua_discrepancy,
)

__all__ = [
    "ConfigError",
    "barlow_twins",
    "canonical_config",
    "estimate_mi_lower_bound",
    "gradcheck",
    "info_nce",
    "macro_f1",
    "mmcr_loss",
    "nt_xent",
    "nuclear_norm",
    "probe",
    "pretrain",
    "run_cli",
    "svd",
    "ua_discrepancy",
]
