#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "latefuse/core/errors.hpp"

namespace latefuse {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major tensor. Rank 1 and 2 are what the engine uses; higher
// ranks are storable but only the generic accessors apply to them.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_size(shape_) != data_.size()) {
            throw DimensionError("shape " + shape_string(shape_) + " does not match " +
                                 std::to_string(data_.size()) + " values");
        }
    }

    static BasicTensor matrix(std::size_t rows, std::size_t cols, T fill = T{0}) {
        return BasicTensor({rows, cols}, fill);
    }

    static BasicTensor vector(std::size_t n, T fill = T{0}) { return BasicTensor({n}, fill); }

    static BasicTensor from_rows(std::initializer_list<std::initializer_list<T>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        std::vector<T> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) {
                throw DimensionError("ragged rows in from_rows");
            }
            data.insert(data.end(), row.begin(), row.end());
        }
        return BasicTensor({r, c}, std::move(data));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const {
        require_rank2();
        return shape_[0];
    }
    std::size_t cols() const {
        require_rank2();
        return shape_[1];
    }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* raw() noexcept { return data_.data(); }
    const T* raw() const noexcept { return data_.data(); }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }
    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

    std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
    std::span<const T> row(std::size_t r) const {
        return std::span<const T>(data_).subspan(r * cols(), cols());
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const noexcept {
        for (const T v : data_) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicTensor<U>(shape_, std::move(out));
    }

    bool same_shape(const BasicTensor& other) const noexcept { return shape_ == other.shape_; }

private:
    void require_rank2() const {
        if (shape_.size() != 2) {
            throw DimensionError("expected a matrix, got shape " + shape_string(shape_));
        }
    }

    Shape shape_{0};
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

// Same shape and same bit patterns.
template <typename T>
bool bit_identical(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return a.shape() == b.shape() &&
           (a.size() == 0 || std::memcmp(a.raw(), b.raw(), a.size() * sizeof(T)) == 0);
}

}  // namespace latefuse
