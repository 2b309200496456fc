#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

namespace mmcdfsl {

/// Row-major dense matrix; token sequences are stored one token per row.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense T x H x W x C float tensor (frame-major, channels innermost).
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(int t, int h, int w, int c)
      : t_(t), h_(h), w_(w), c_(c), data_(static_cast<std::size_t>(t) * h * w * c, 0.0f) {}

  int frames() const noexcept { return t_; }
  int height() const noexcept { return h_; }
  int width() const noexcept { return w_; }
  int channels() const noexcept { return c_; }
  std::size_t size() const noexcept { return data_.size(); }

  float& at(int t, int y, int x, int c) { return data_[index(t, y, x, c)]; }
  float at(int t, int y, int x, int c) const { return data_[index(t, y, x, c)]; }

  std::vector<float>& data() noexcept { return data_; }
  const std::vector<float>& data() const noexcept { return data_; }

  bool operator==(const Tensor4&) const = default;

 private:
  std::size_t index(int t, int y, int x, int c) const noexcept {
    return ((static_cast<std::size_t>(t) * h_ + y) * w_ + x) * c_ + c;
  }

  int t_ = 0, h_ = 0, w_ = 0, c_ = 0;
  std::vector<float> data_;
};

}  // namespace mmcdfsl
