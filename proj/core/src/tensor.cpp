#include "vg/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace vg {

namespace {
std::int64_t count(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
        n *= d;
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), fill);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
    Tensor t;
    if (count(shape) != static_cast<std::int64_t>(values.size()))
        throw ShapeError("value count does not match shape " + vg::shape_str(shape));
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
}

void Tensor::zero() { std::memset(data_.data(), 0, data_.size() * sizeof(double)); }

void Tensor::add_scaled(const Tensor& other, double alpha) {
    if (!same_shape(other)) throw ShapeError("add_scaled shape mismatch: " + shape_str() + " vs " + other.shape_str());
    const double* src = other.data();
    double* dst = data();
    for (size_t i = 0; i < data_.size(); ++i) dst[i] += alpha * src[i];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const { return vg::shape_str(shape_); }

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

ShapeError::ShapeError(const std::string& msg) : std::runtime_error(msg) {}

}  // namespace vg
