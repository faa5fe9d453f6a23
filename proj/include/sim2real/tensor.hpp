#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "sim2real/errors.hpp"

namespace sim2real {

// Batch × height × width × channels. Storage is NHWC so a tensor can be viewed
// as a (n·h·w) × c row-major matrix, which is what the GEMM-based kernels use.
struct Shape {
    int n = 0;
    int h = 0;
    int w = 0;
    int c = 0;

    [[nodiscard]] std::int64_t size() const {
        return static_cast<std::int64_t>(n) * h * w * c;
    }
    [[nodiscard]] int positions() const { return n * h * w; }
    friend bool operator==(const Shape&, const Shape&) = default;

    [[nodiscard]] std::string str() const {
        std::ostringstream os;
        os << "(" << n << "," << h << "," << w << "," << c << ")";
        return os.str();
    }
};

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
class Tensor {
public:
    using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
    using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

    Tensor() = default;
    explicit Tensor(const Shape& shape) : shape_(shape), data_(Vector<Scalar>::Zero(shape.size())) {}
    Tensor(const Shape& shape, Vector<Scalar> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.size()) {
            throw DimensionError("tensor data size does not match shape " + shape_.str());
        }
    }

    static Tensor constant(const Shape& shape, Scalar value) {
        return Tensor(shape, Vector<Scalar>::Constant(shape.size(), value));
    }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::int64_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.size() == 0; }

    Vector<Scalar>& data() { return data_; }
    [[nodiscard]] const Vector<Scalar>& data() const { return data_; }

    Scalar& operator()(int n, int y, int x, int c) { return data_[index(n, y, x, c)]; }
    Scalar operator()(int n, int y, int x, int c) const { return data_[index(n, y, x, c)]; }

    [[nodiscard]] std::int64_t index(int n, int y, int x, int c) const {
        return ((static_cast<std::int64_t>(n) * shape_.h + y) * shape_.w + x) * shape_.c + c;
    }

    // (n·h·w) × c view.
    MatrixMap matrix() { return MatrixMap(data_.data(), shape_.positions(), shape_.c); }
    [[nodiscard]] ConstMatrixMap matrix() const {
        return ConstMatrixMap(data_.data(), shape_.positions(), shape_.c);
    }

    // One sample of the batch, copied.
    [[nodiscard]] Tensor slice(int n) const {
        Shape s{1, shape_.h, shape_.w, shape_.c};
        const std::int64_t len = s.size();
        return Tensor(s, data_.segment(static_cast<std::int64_t>(n) * len, len));
    }

    template <typename Other>
    [[nodiscard]] Tensor<Other> cast() const {
        return Tensor<Other>(shape_, data_.template cast<Other>());
    }

private:
    Shape shape_{};
    Vector<Scalar> data_;
};

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const std::string& what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(what + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
}

// Concatenate along the channel axis.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        throw DimensionError("channel concat: spatial mismatch " + sa.str() + " vs " + sb.str());
    }
    Tensor<Scalar> out(Shape{sa.n, sa.h, sa.w, sa.c + sb.c});
    auto m = out.matrix();
    m.leftCols(sa.c) = a.matrix();
    m.rightCols(sb.c) = b.matrix();
    return out;
}

// Stack single images (or batches) along n.
template <typename Scalar>
Tensor<Scalar> stack_batch(const std::vector<Tensor<Scalar>>& items) {
    if (items.empty()) {
        return {};
    }
    Shape s = items.front().shape();
    int total = 0;
    for (const auto& t : items) {
        if (t.shape().h != s.h || t.shape().w != s.w || t.shape().c != s.c) {
            throw DimensionError("stack_batch: inconsistent item shapes");
        }
        total += t.shape().n;
    }
    Tensor<Scalar> out(Shape{total, s.h, s.w, s.c});
    std::int64_t offset = 0;
    for (const auto& t : items) {
        out.data().segment(offset, t.size()) = t.data();
        offset += t.size();
    }
    return out;
}

}  // namespace sim2real
