#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "linrel/types.hpp"

namespace linrel {

/// Named dense f64 array in row-major order. This is the boundary type for
/// serialized weights; in-memory math lives in Eigen types.
struct Tensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data; // row-major

  std::int64_t element_count() const;

  /// Validating constructor for externally sourced payloads: shape must be
  /// positive, product(shape) == data.size(), all values finite.
  static Tensor checked(std::string name, std::vector<std::int64_t> shape,
                        std::vector<double> data);

  static Tensor from_matrix(std::string name, const Mat& m);
  static Tensor from_vector(std::string name, const Vec& v);

  Mat to_matrix() const; // rank-2 only
  Vec to_vector() const; // rank-1 only
};

namespace io {

void write_u32(std::ostream& os, std::uint32_t v);
std::uint32_t read_u32(std::istream& is);
void write_string(std::ostream& os, const std::string& s);
std::string read_string(std::istream& is);
void write_f64_array(std::ostream& os, const double* data, std::size_t n);
void read_f64_array(std::istream& is, double* data, std::size_t n);

} // namespace io

/// Tensor record: name length, name bytes, rank, dims (u32), f64 payload,
/// all little-endian.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

} // namespace linrel
