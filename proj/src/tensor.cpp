#include "linrel/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

#include "linrel/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialized formats are little-endian; big-endian hosts need a swap pass");

namespace linrel {

std::int64_t Tensor::element_count() const {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

Tensor Tensor::checked(std::string name, std::vector<std::int64_t> shape,
                       std::vector<double> data) {
  Tensor t{std::move(name), std::move(shape), std::move(data)};
  if (t.shape.empty()) throw InputError("tensor '" + t.name + "': empty shape");
  for (std::int64_t d : t.shape) {
    if (d <= 0) throw InputError("tensor '" + t.name + "': non-positive dimension");
  }
  if (t.element_count() != static_cast<std::int64_t>(t.data.size())) {
    throw InputError("tensor '" + t.name + "': shape does not match payload size");
  }
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      throw InputError("tensor '" + t.name + "': non-finite value in payload");
    }
  }
  return t;
}

Tensor Tensor::from_matrix(std::string name, const Mat& m) {
  Tensor t;
  t.name = std::move(name);
  t.shape = {m.rows(), m.cols()};
  t.data.resize(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) t.data[k++] = m(r, c);
  }
  return t;
}

Tensor Tensor::from_vector(std::string name, const Vec& v) {
  Tensor t;
  t.name = std::move(name);
  t.shape = {v.size()};
  t.data.assign(v.data(), v.data() + v.size());
  return t;
}

Mat Tensor::to_matrix() const {
  if (shape.size() != 2) throw FormatError("tensor '" + name + "': expected rank 2");
  Mat m(shape[0], shape[1]);
  std::size_t k = 0;
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = data[k++];
  }
  return m;
}

Vec Tensor::to_vector() const {
  if (shape.size() != 1) throw FormatError("tensor '" + name + "': expected rank 1");
  return Eigen::Map<const Vec>(data.data(), static_cast<Index>(data.size()));
}

namespace io {

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw FormatError("unexpected end of file while reading u32");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const std::uint32_t n = read_u32(is);
  if (n > (1u << 24)) throw FormatError("implausible string length in file");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw FormatError("unexpected end of file while reading string");
  return s;
}

void write_f64_array(std::ostream& os, const double* data, std::size_t n) {
  os.write(reinterpret_cast<const char*>(data),
           static_cast<std::streamsize>(n * sizeof(double)));
}

void read_f64_array(std::istream& is, double* data, std::size_t n) {
  is.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw FormatError("unexpected end of file while reading f64 payload");
}

} // namespace io

void write_tensor(std::ostream& os, const Tensor& t) {
  io::write_string(os, t.name);
  io::write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
  for (std::int64_t d : t.shape) io::write_u32(os, static_cast<std::uint32_t>(d));
  io::write_f64_array(os, t.data.data(), t.data.size());
}

Tensor read_tensor(std::istream& is) {
  std::string name = io::read_string(is);
  const std::uint32_t rank = io::read_u32(is);
  if (rank == 0 || rank > 8) throw FormatError("tensor '" + name + "': bad rank");
  std::vector<std::int64_t> shape(rank);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<std::int64_t>(io::read_u32(is));
    if (shape[i] <= 0) throw FormatError("tensor '" + name + "': bad dimension");
    count *= static_cast<std::size_t>(shape[i]);
  }
  if (count > (1u << 28)) throw FormatError("tensor '" + name + "': implausible size");
  std::vector<double> data(count);
  io::read_f64_array(is, data.data(), count);
  return Tensor::checked(std::move(name), std::move(shape), std::move(data));
}

} // namespace linrel
