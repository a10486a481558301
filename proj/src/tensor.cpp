#include "nfebench/tensor.hpp"

#include <cmath>
#include <numeric>

#include "nfebench/error.hpp"

namespace nfe {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
        throw ShapeError("Tensor", "shape " + shape_str(shape_) + " holds " +
                                       std::to_string(shape_numel(shape_)) + " values, got " +
                                       std::to_string(data_.size()));
    }
}

Tensor Tensor::row(std::span<const double> values) {
    return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

std::size_t Tensor::rows() const {
    if (shape_.size() != 2) throw ShapeError("rows", "expected rank 2, got " + shape_str(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (shape_.size() != 2) throw ShapeError("cols", "expected rank 2, got " + shape_str(shape_));
    return shape_[1];
}

std::span<const double> Tensor::row_span(std::size_t r) const {
    const std::size_t c = cols();
    return std::span<const double>(data_).subspan(r * c, c);
}

std::span<double> Tensor::row_span(std::size_t r) {
    const std::size_t c = cols();
    return std::span<double>(data_).subspan(r * c, c);
}

Tensor Tensor::gather_rows(std::span<const std::size_t> idx) const {
    const std::size_t c = cols();
    Tensor out = Tensor::matrix(idx.size(), c);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= rows()) throw InvalidArgument("gather_rows: index out of range");
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(idx[i] * c), c,
                    out.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    return out;
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
    const std::size_t c = cols();
    if (begin > end || end > rows()) throw InvalidArgument("slice_rows: bad range");
    return Tensor({end - begin, c},
                  std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                                      data_.begin() + static_cast<std::ptrdiff_t>(end * c)));
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item", "tensor of shape " + shape_str(shape_) + " is not a scalar");
    return data_[0];
}

bool Tensor::all_finite() const noexcept {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {
void require_same(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError(op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) {
    require_same("operator+", a, b);
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    require_same("operator-", a, b);
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Tensor operator*(double s, const Tensor& a) {
    Tensor out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

Tensor axpy(const Tensor& a, double s, const Tensor& b) {
    require_same("axpy", a, b);
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * b[i];
    return out;
}

double squared_norm(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v * v;
    return acc;
}

Tensor vstack(std::span<const Tensor> parts) {
    if (parts.empty()) return {};
    const std::size_t c = parts[0].cols();
    std::size_t r = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw ShapeError("vstack", "column count differs");
        r += p.rows();
    }
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
    return Tensor({r, c}, std::move(data));
}

}  // namespace nfe
