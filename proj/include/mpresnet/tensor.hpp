#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mpresnet {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Reverse-mode recording is on by default. A NoGradGuard disables it for the
// current thread, so forward passes neither keep intermediate buffers alive
// nor attach backward closures.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `self.grad` and accumulates into `self.parents[i]->grad`.
  std::function<void(Node& self)> backward;

  void accumulate_grad(std::span<const T> g);
};

}  // namespace detail

// Dense NCHW-style array and autodiff node. Copies are shallow handles onto
// the same storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t rank() const { return static_cast<int64_t>(shape().size()); }
  int64_t dim(int64_t axis) const;
  int64_t numel() const;

  std::span<const T> data() const;
  // Direct writes bypass the graph; only meant for leaves (parameters,
  // running statistics, test inputs).
  std::span<T> mutable_data();
  T item() const;

  T at(int64_t n, int64_t c, int64_t h, int64_t w) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  // Deep copy with no history.
  Tensor clone() const;
  // Same values, no history, requires_grad = false.
  Tensor detach() const { return clone(); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Used by operator implementations.
  static Tensor from_node(std::shared_ptr<detail::Node<T>> node);
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

// Geometry of a (transposed) convolution. For conv2d the weight is
// [out, in, kh, kw]; for conv_transpose2d it is [in, out, kh, kw].
struct ConvSpec {
  int64_t in_channels = 1;
  int64_t out_channels = 1;
  int64_t kernel_h = 1;
  int64_t kernel_w = 1;
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t dilation = 1;
  int64_t output_padding = 0;  // transposed convolution only
  bool has_bias = false;

  static ConvSpec square(int64_t in, int64_t out, int64_t kernel, int64_t stride = 1,
                         int64_t padding = 0, int64_t dilation = 1) {
    ConvSpec s;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel_h = s.kernel_w = kernel;
    s.stride = stride;
    s.padding = padding;
    s.dilation = dilation;
    return s;
  }

  // floor((in + 2p - d(k-1) - 1)/s) + 1; throws ConfigError if < 1.
  int64_t conv_out_extent(int64_t in, int64_t kernel) const;
  // (in-1)s - 2p + d(k-1) + output_padding + 1; throws ConfigError if < 1.
  int64_t transpose_out_extent(int64_t in, int64_t kernel) const;
};

enum class BatchNormMode { kTrain, kEval };

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvSpec& spec);

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           const ConvSpec& spec);

// Train mode normalizes with the biased batch variance and folds the unbiased
// variance into the running estimate: r <- (1-m) r + m s.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormStats<T>& stats, BatchNormMode mode, double momentum,
                       double epsilon);

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, int64_t kernel, int64_t stride, int64_t padding);

// Half-pixel centres (align_corners = false), source coordinate clamped at 0.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& input, int64_t out_h, int64_t out_w);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs);
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits);
template <typename T>
Tensor<T> sum(const Tensor<T>& input);

// Mean over non-ignored pixels of -log softmax(logits)[label]. `labels` is
// N*H*W, row-major, matching the logits' batch and spatial extents.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const uint8_t> labels,
                        int ignore_index);

// Populates .grad() on every requires_grad leaf reachable from `loss`, then
// releases the recorded graph.
template <typename T>
void backward(const Tensor<T>& loss);

// <a, b> accumulated in long double.
template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace mpresnet
