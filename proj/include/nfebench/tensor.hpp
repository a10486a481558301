#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace nfe {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Dense row-major array of doubles. Rank-2 is the working case; scalars are [1,1].
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
        return Tensor({rows, cols}, fill);
    }
    static Tensor scalar(double v) { return Tensor({1, 1}, v); }
    static Tensor row(std::span<const double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    const std::vector<double>& vec() const noexcept { return data_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<const double> row_span(std::size_t r) const;
    std::span<double> row_span(std::size_t r);

    // Rows gathered by index (indices may repeat).
    Tensor gather_rows(std::span<const std::size_t> idx) const;
    Tensor slice_rows(std::size_t begin, std::size_t end) const;

    double item() const;
    bool all_finite() const noexcept;
    bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

std::size_t shape_numel(const Shape& s);

// Small elementwise helpers used by the samplers (value-level, no tape).
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
// a + s * b
Tensor axpy(const Tensor& a, double s, const Tensor& b);
double squared_norm(const Tensor& a);
Tensor vstack(std::span<const Tensor> parts);

}  // namespace nfe
