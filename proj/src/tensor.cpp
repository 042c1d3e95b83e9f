#include "nodx/tensor.hpp"

#include <cmath>
#include <sstream>

namespace nodx {

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ',';
    os << shape_[i];
  }
  os << ')';
  return os.str();
}

bool all_finite(const Tensor& t) {
  for (size_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

}  // namespace nodx
