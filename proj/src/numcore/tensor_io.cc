// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/tensor_io.h"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "msfnet/error.h"

namespace msf {

void dump_tensor_text(const Tensor& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (std::size_t i = 0; i < t.shape().size(); ++i) {
    if (i) out << ' ';
    out << t.shape()[i];
  }
  out << '\n' << std::setprecision(17);
  for (double v : t.data()) out << v << '\n';
  if (!out) throw DataError("short write to " + path);
}

Tensor load_tensor_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": missing shape line");
  Shape shape;
  std::istringstream header(line);
  std::int64_t e = 0;
  while (header >> e) shape.push_back(e);
  std::vector<double> data;
  double v = 0.0;
  while (in >> v) data.push_back(v);
  if (!in.eof()) throw DataError(path + ": malformed value");
  return Tensor::from(std::move(shape), std::move(data));
}

}  // namespace msf
