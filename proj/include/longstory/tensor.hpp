#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace longstory::nn {

namespace detail {

struct TensorImpl {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily
  bool track = false;        // participates in the backward graph
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Accumulates this node's grad into its parents. Takes the node itself as
  // an argument so the closure never captures a pointer to its own impl.
  std::function<void(TensorImpl&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major matrix with reverse-mode autodiff. A 1x1 tensor doubles as
/// a scalar. The graph is a DAG of shared_ptr parents rebuilt per forward
/// pass; backward() walks it once in reverse topological order.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols, bool track = false);
  static Tensor full(std::size_t rows, std::size_t cols, double v, bool track = false);
  static Tensor from_values(std::size_t rows, std::size_t cols, std::vector<double> v,
                            bool track = false);
  static Tensor scalar(double v, bool track = false);

  bool defined() const { return impl_ != nullptr; }
  std::size_t rows() const { return impl_->rows; }
  std::size_t cols() const { return impl_->cols; }
  std::size_t size() const { return impl_->value.size(); }
  bool track() const { return impl_ && impl_->track; }

  // Tensor is a shared handle: accessors are const, the payload is shared.
  double& at(std::size_t r, std::size_t c) const { return impl_->value[r * impl_->cols + c]; }
  std::vector<double>& value() const { return impl_->value; }
  /// Gradient buffer (allocated zero-filled on first use).
  std::vector<double>& grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }

  /// Value of a 1x1 tensor.
  double item() const;

  void zero_grad() const {
    if (impl_) impl_->grad.assign(impl_->value.size(), 0.0);
  }

  std::string shape_str() const;

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Seeds d(loss)/d(loss)=1 and propagates through the graph. loss must be 1x1.
/// Gradients accumulate; callers zero them between steps.
void backward(const Tensor& loss);

/// Value copy severed from the graph.
Tensor detach(const Tensor& t);

// ---- core ops (each registers a backward rule) ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Elementwise add; also accepts b of shape [1 x cols] broadcast over rows.
Tensor add(const Tensor& a, const Tensor& b);
/// Elementwise product, same shapes.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// a scaled by a 1x1 tensor (gradient flows to both).
Tensor scale_by(const Tensor& a, const Tensor& s);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Elementwise 1/x.
Tensor reciprocal(const Tensor& a);
/// Row-wise softmax. Entries <= -1e30 are treated as fully masked and get
/// exactly zero probability.
Tensor softmax_rows(const Tensor& a);
/// Row-wise layer norm with per-column gain/bias of shape [1 x cols].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// Gathers table rows by id; backward scatter-adds into the table.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);
/// Column-wise mean over rows -> [1 x cols].
Tensor mean_rows(const Tensor& a);
/// Copies a, writing `fill` where mask is nonzero; masked positions pass no
/// gradient. mask.size() must equal a.size().
Tensor masked_fill(const Tensor& a, const std::vector<std::uint8_t>& mask, double fill);
Tensor sum_all(const Tensor& a);
/// Mean negative log-likelihood of targets under row-wise softmax(logits).
/// Rows whose target equals ignore_id contribute nothing. Errors if every
/// row is ignored.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                          int ignore_id = -1);
/// Numerically stable binary cross-entropy on a 1x1 logit against target
/// y in {0,1}: max(z,0) - z*y + log1p(exp(-|z|)).
Tensor bce_with_logit(const Tensor& logit, double target);

// ---- parameters ----

struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Named trainable tensors, ordered by name. Names must be unique.
class ParamStore {
 public:
  Tensor create(const std::string& name, std::size_t rows, std::size_t cols);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  void zero_grad();
  std::size_t total_elements() const;

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace longstory::nn
