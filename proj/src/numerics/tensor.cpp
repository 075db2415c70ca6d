#include "dcmrl/tensor.hpp"

#include <cstring>
#include <sstream>

#include "dcmrl/error.hpp"

namespace dcmrl {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : shape{rows, cols}, data(std::move(values)) {
  if (data.size() != rows * cols) {
    fail(ErrorKind::invalid_argument, "tensor data length " + std::to_string(data.size()) +
                                          " does not match shape [" + std::to_string(rows) + "," +
                                          std::to_string(cols) + "]");
  }
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(1, n, std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> flat;
  flat.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) fail(ErrorKind::invalid_argument, "ragged rows in Tensor::from_rows");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(flat));
}

double Tensor::item() const {
  if (!is_scalar()) fail(ErrorKind::invalid_argument, "item() on non-scalar tensor " + shape_str());
  return data[0];
}

void Tensor::zero_grad() { grad.assign(data.size(), 0.0); }

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[' << rows() << ',' << cols() << ']';
  return os.str();
}

std::uint64_t checksum(const std::vector<const Parameter*>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Parameter* p : params) {
    for (double v : p->value.data) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

}  // namespace dcmrl
