// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_TENSOR_IO_H_
#define MSFNET_TENSOR_IO_H_

#include <string>

#include "msfnet/tensor.h"

namespace msf {

// Debug text format: the first line holds the space-separated shape, then one
// value per line in row-major order with 17 significant digits.
void dump_tensor_text(const Tensor& t, const std::string& path);
Tensor load_tensor_text(const std::string& path);

}  // namespace msf

#endif  // MSFNET_TENSOR_IO_H_
