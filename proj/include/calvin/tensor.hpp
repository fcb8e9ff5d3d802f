#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace calvin {

// Dense row-major float32 tensor. Plain value type; all autodiff state lives
// in Graph, not here.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(checked_numel(shape_), 0.0f);
    }

    Tensor(std::vector<int> shape, std::vector<float> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_numel(shape_))
            throw std::invalid_argument("Tensor: data length does not match shape");
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, float v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int extent(int axis) const { return shape_.at(axis); }
    size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& operator[](size_t i) { return data_[i]; }
    float operator[](size_t i) const { return data_[i]; }

    // Multi-index access, row-major.
    float& at(std::initializer_list<int> idx) { return data_[flat_index(idx)]; }
    float at(std::initializer_list<int> idx) const { return data_[flat_index(idx)]; }

    size_t flat_index(std::initializer_list<int> idx) const {
        if (static_cast<int>(idx.size()) != rank())
            throw std::invalid_argument("Tensor::at: index rank mismatch");
        size_t flat = 0;
        int axis = 0;
        for (int i : idx) {
            if (i < 0 || i >= shape_[axis])
                throw std::out_of_range("Tensor::at: index out of range on axis " +
                                        std::to_string(axis));
            flat = flat * shape_[axis] + i;
            ++axis;
        }
        return flat;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    float max_value() const {
        float m = -INFINITY;
        for (float v : data_) m = std::max(m, v);
        return m;
    }

    float min_value() const {
        float m = INFINITY;
        for (float v : data_) m = std::min(m, v);
        return m;
    }

    static size_t shape_numel(const std::vector<int>& shape) {
        size_t n = 1;
        for (int e : shape) n *= static_cast<size_t>(e);
        return n;
    }

    static std::string shape_str(const std::vector<int>& shape) {
        std::string s = "(";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }

  private:
    static size_t checked_numel(const std::vector<int>& shape) {
        size_t n = 1;
        for (int e : shape) {
            if (e <= 0) throw std::invalid_argument("Tensor: extents must be positive");
            n *= static_cast<size_t>(e);
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<float> data_;
};

}  // namespace calvin
