#include "longstory/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace longstory::nn {

using detail::TensorImpl;

namespace {

std::shared_ptr<TensorImpl> make_impl(std::size_t rows, std::size_t cols) {
  auto impl = std::make_shared<TensorImpl>();
  impl->rows = rows;
  impl->cols = cols;
  impl->value.assign(rows * cols, 0.0);
  return impl;
}

bool any_track(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->track()) return true;
  return false;
}

void attach(const std::shared_ptr<TensorImpl>& out, std::vector<std::shared_ptr<TensorImpl>> parents,
            std::function<void(TensorImpl&)> fn) {
  out->track = true;
  out->parents = std::move(parents);
  out->backprop = std::move(fn);
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << a.shape_str() << " and " << b.shape_str();
  throw std::invalid_argument(os.str());
}

}  // namespace

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool track) {
  auto impl = make_impl(rows, cols);
  impl->track = track;
  return Tensor(impl);
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double v, bool track) {
  auto impl = make_impl(rows, cols);
  std::fill(impl->value.begin(), impl->value.end(), v);
  impl->track = track;
  return Tensor(impl);
}

Tensor Tensor::from_values(std::size_t rows, std::size_t cols, std::vector<double> v, bool track) {
  if (v.size() != rows * cols)
    throw std::invalid_argument("Tensor::from_values: data length does not match shape");
  auto impl = std::make_shared<TensorImpl>();
  impl->rows = rows;
  impl->cols = cols;
  impl->value = std::move(v);
  impl->track = track;
  return Tensor(impl);
}

Tensor Tensor::scalar(double v, bool track) { return from_values(1, 1, {v}, track); }

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("Tensor::item: tensor is " + shape_str() + ", expected [1 x 1]");
  return impl_->value[0];
}

std::string Tensor::shape_str() const {
  if (!impl_) return "[undefined]";
  std::ostringstream os;
  os << "[" << impl_->rows << " x " << impl_->cols << "]";
  return os.str();
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  // Iterative post-order DFS for the topological order.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> done;
  struct Frame {
    TensorImpl* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{loss.impl().get(), 0}};
  std::unordered_set<TensorImpl*> on_stack{loss.impl().get()};
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next_parent++].get();
      if (!done.count(p) && !on_stack.count(p)) {
        stack.push_back({p, 0});
        on_stack.insert(p);
      }
    } else {
      done.insert(f.node);
      order.push_back(f.node);
      on_stack.erase(f.node);
      stack.pop_back();
    }
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backprop) node->backprop(*node);
  }
}

Tensor detach(const Tensor& t) {
  return Tensor::from_values(t.rows(), t.cols(), t.value(), false);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros(m, n);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* ov = out.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv + p * n;
      double* orow = ov + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  if (any_track({&a, &b})) {
    auto pa = a.impl(), pb = b.impl();
    attach(out.impl(), {pa, pb}, [pa, pb, m, k, n](TensorImpl& self) {
      // dA = G * B^T ; dB = A^T * G
      if (pa->track) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* grow = self.grad.data() + i * n;
            const double* brow = pb->value.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            pa->grad[i * k + p] += acc;
          }
      }
      if (pb->track) {
        pb->ensure_grad();
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t i = 0; i < m; ++i) {
            const double aip = pa->value[i * k + p];
            if (aip == 0.0) continue;
            const double* grow = self.grad.data() + i * n;
            double* brow = pb->grad.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
          }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  if (a.track()) {
    auto pa = a.impl();
    attach(out.impl(), {pa}, [pa, m, n](TensorImpl& self) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) pa->grad[i * n + j] += self.grad[j * m + i];
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  const bool broadcast = b.rows() == 1 && a.cols() == b.cols() && a.rows() != 1;
  if (!broadcast && (a.rows() != b.rows() || a.cols() != b.cols())) shape_error("add", a, b);
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  const std::size_t n = a.size(), cols = a.cols();
  for (std::size_t i = 0; i < n; ++i)
    out.value()[i] = a.value()[i] + (broadcast ? b.value()[i % cols] : b.value()[i]);
  if (any_track({&a, &b})) {
    auto pa = a.impl(), pb = b.impl();
    attach(out.impl(), {pa, pb}, [pa, pb, n, cols, broadcast](TensorImpl& self) {
      if (pa->track) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i];
      }
      if (pb->track) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) pb->grad[broadcast ? i % cols : i] += self.grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("mul", a, b);
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * b.value()[i];
  if (any_track({&a, &b})) {
    auto pa = a.impl(), pb = b.impl();
    attach(out.impl(), {pa, pb}, [pa, pb, n](TensorImpl& self) {
      if (pa->track) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i] * pb->value[i];
      }
      if (pb->track) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) pb->grad[i] += self.grad[i] * pa->value[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * s;
  if (a.track()) {
    auto pa = a.impl();
    attach(out.impl(), {pa}, [pa, s, n](TensorImpl& self) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i] * s;
    });
  }
  return out;
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw std::invalid_argument("scale_by: scale must be 1x1, got " + s.shape_str());
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  const std::size_t n = a.size();
  const double sv = s.value()[0];
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * sv;
  if (any_track({&a, &s})) {
    auto pa = a.impl(), ps = s.impl();
    attach(out.impl(), {pa, ps}, [pa, ps, n](TensorImpl& self) {
      if (pa->track) {
        pa->ensure_grad();
        const double sv = ps->value[0];
        for (std::size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i] * sv;
      }
      if (ps->track) {
        ps->ensure_grad();
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += self.grad[i] * pa->value[i];
        ps->grad[0] += acc;
      }
    });
  }
  return out;
}

Tensor tanh(const Tensor& a) {
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = std::tanh(a.value()[i]);
  if (a.track()) {
    auto pa = a.impl();
    attach(out.impl(), {pa}, [pa, n](TensorImpl& self) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double y = self.value[i];
        pa->grad[i] += self.grad[i] * (1.0 - y * y);
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a.value()[i];
    // Saturating-stable form.
    out.value()[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  if (a.track()) {
    auto pa = a.impl();
    attach(out.impl(), {pa}, [pa, n](TensorImpl& self) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double y = self.value[i];
        pa->grad[i] += self.grad[i] * y * (1.0 - y);
      }
    });
  }
  return out;
}

Tensor reciprocal(const Tensor& a) {
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = 1.0 / a.value()[i];
  if (a.track()) {
    auto pa = a.impl();
    attach(out.impl(), {pa}, [pa, n](TensorImpl& self) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double y = self.value[i];
        pa->grad[i] -= self.grad[i] * y * y;
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  constexpr double kMaskedBelow = -1e30;
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  const std::size_t m = a.rows(), n = a.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.value().data() + i * n;
    double* orow = out.value().data() + i * n;
    double mx = kMaskedBelow;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = row[j] <= kMaskedBelow ? 0.0 : std::exp(row[j] - mx);
      orow[j] = e;
      sum += e;
    }
    if (sum <= 0.0) throw std::invalid_argument("softmax_rows: a row is fully masked");
    for (std::size_t j = 0; j < n; ++j) orow[j] /= sum;
  }
  if (a.track()) {
    auto pa = a.impl();
    attach(out.impl(), {pa}, [pa, m, n](TensorImpl& self) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = self.value.data() + i * n;
        const double* g = self.grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
        double* pg = pa->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) pg[j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n) shape_error("layer_norm(gain)", x, gain);
  if (bias.rows() != 1 || bias.cols() != n) shape_error("layer_norm(bias)", x, bias);
  Tensor out = Tensor::zeros(m, n);
  // Cache normalized values and inverse stddevs for backward.
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.value().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * inv;
      (*xhat)[i * n + j] = h;
      out.at(i, j) = h * gain.value()[j] + bias.value()[j];
    }
  }
  if (any_track({&x, &gain, &bias})) {
    auto px = x.impl(), pg = gain.impl(), pb = bias.impl();
    attach(out.impl(), {px, pg, pb}, [px, pg, pb, xhat, inv_std, m, n](TensorImpl& self) {
      if (pb->track) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) pb->grad[j] += self.grad[i * n + j];
      }
      if (pg->track) {
        pg->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            pg->grad[j] += self.grad[i * n + j] * (*xhat)[i * n + j];
      }
      if (px->track) {
        px->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          const double* g = self.grad.data() + i * n;
          const double* h = xhat->data() + i * n;
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dh = g[j] * pg->value[j];
            sum_dh += dh;
            sum_dh_h += dh * h[j];
          }
          const double inv = (*inv_std)[i];
          const double nd = static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const double dh = g[j] * pg->value[j];
            px->grad[i * n + j] += inv * (dh - sum_dh / nd - h[j] * sum_dh_h / nd);
          }
        }
      }
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  const std::size_t n = table.cols();
  Tensor out = Tensor::zeros(ids.size(), n);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const int id = ids[r];
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows())
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) + " outside table " +
                              table.shape_str());
    std::copy_n(table.value().data() + static_cast<std::size_t>(id) * n, n,
                out.value().data() + r * n);
  }
  if (table.track()) {
    auto pt = table.impl();
    auto ids_copy = ids;
    attach(out.impl(), {pt}, [pt, ids_copy, n](TensorImpl& self) {
      pt->ensure_grad();
      for (std::size_t r = 0; r < ids_copy.size(); ++r) {
        double* dst = pt->grad.data() + static_cast<std::size_t>(ids_copy[r]) * n;
        const double* src = self.grad.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) shape_error("concat_rows", parts[0], p);
    m += p.rows();
  }
  Tensor out = Tensor::zeros(m, n);
  std::size_t r = 0;
  for (const auto& p : parts) {
    std::copy(p.value().begin(), p.value().end(), out.value().begin() + r * n);
    r += p.rows();
  }
  bool track = false;
  for (const auto& p : parts) track = track || p.track();
  if (track) {
    std::vector<std::shared_ptr<TensorImpl>> ps;
    for (const auto& p : parts) ps.push_back(p.impl());
    attach(out.impl(), ps, [ps, n](TensorImpl& self) {
      std::size_t r = 0;
      for (auto& p : ps) {
        if (p->track) {
          p->ensure_grad();
          for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += self.grad[r * n + i];
        }
        r += p->rows;
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) shape_error("concat_cols", parts[0], p);
    n += p.cols();
  }
  Tensor out = Tensor::zeros(m, n);
  std::size_t c = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(p.value().data() + i * p.cols(), p.cols(), out.value().data() + i * n + c);
    c += p.cols();
  }
  bool track = false;
  for (const auto& p : parts) track = track || p.track();
  if (track) {
    std::vector<std::shared_ptr<TensorImpl>> ps;
    for (const auto& p : parts) ps.push_back(p.impl());
    attach(out.impl(), ps, [ps, m, n](TensorImpl& self) {
      std::size_t c = 0;
      for (auto& p : ps) {
        if (p->track) {
          p->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p->cols; ++j)
              p->grad[i * p->cols + j] += self.grad[i * n + c + j];
        }
        c += p->cols;
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  if (r0 >= r1 || r1 > a.rows())
    throw std::out_of_range("slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                            ") outside " + a.shape_str());
  const std::size_t n = a.cols();
  Tensor out = Tensor::zeros(r1 - r0, n);
  std::copy_n(a.value().data() + r0 * n, (r1 - r0) * n, out.value().data());
  if (a.track()) {
    auto pa = a.impl();
    attach(out.impl(), {pa}, [pa, r0, n](TensorImpl& self) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.value.size(); ++i) pa->grad[r0 * n + i] += self.grad[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  if (c0 >= c1 || c1 > a.cols())
    throw std::out_of_range("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                            ") outside " + a.shape_str());
  const std::size_t m = a.rows(), n = a.cols(), w = c1 - c0;
  Tensor out = Tensor::zeros(m, w);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(a.value().data() + i * n + c0, w, out.value().data() + i * w);
  if (a.track()) {
    auto pa = a.impl();
    attach(out.impl(), {pa}, [pa, c0, m, n, w](TensorImpl& self) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) pa->grad[i * n + c0 + j] += self.grad[i * w + j];
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros(1, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.value()[j] += a.at(i, j);
  for (std::size_t j = 0; j < n; ++j) out.value()[j] /= static_cast<double>(m);
  if (a.track()) {
    auto pa = a.impl();
    attach(out.impl(), {pa}, [pa, m, n](TensorImpl& self) {
      pa->ensure_grad();
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) pa->grad[i * n + j] += self.grad[j] * inv;
    });
  }
  return out;
}

Tensor masked_fill(const Tensor& a, const std::vector<std::uint8_t>& mask, double fill) {
  if (mask.size() != a.size())
    throw std::invalid_argument("masked_fill: mask length " + std::to_string(mask.size()) +
                                " does not match tensor " + a.shape_str());
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = mask[i] ? fill : a.value()[i];
  if (a.track()) {
    auto pa = a.impl();
    auto mask_copy = mask;
    attach(out.impl(), {pa}, [pa, mask_copy, n](TensorImpl& self) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        if (!mask_copy[i]) pa->grad[i] += self.grad[i];
    });
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  Tensor out = Tensor::zeros(1, 1);
  double acc = 0.0;
  for (double v : a.value()) acc += v;
  out.value()[0] = acc;
  if (a.track()) {
    auto pa = a.impl();
    attach(out.impl(), {pa}, [pa](TensorImpl& self) {
      pa->ensure_grad();
      for (auto& g : pa->grad) g += self.grad[0];
    });
  }
  return out;
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets, int ignore_id) {
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m)
    throw std::invalid_argument("cross_entropy_rows: " + std::to_string(targets.size()) +
                                " targets for " + logits.shape_str() + " logits");
  std::size_t counted = 0;
  double total = 0.0;
  // Cache row softmaxes for backward.
  auto probs = std::make_shared<std::vector<double>>(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] == ignore_id) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= n)
      throw std::out_of_range("cross_entropy_rows: target id " + std::to_string(targets[i]) +
                              " outside vocab of " + std::to_string(n));
    const double* row = logits.value().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    total += lse - row[targets[i]];
    double* prow = probs->data() + i * n;
    for (std::size_t j = 0; j < n; ++j) prow[j] = std::exp(row[j] - lse);
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("cross_entropy_rows: all targets ignored");
  Tensor out = Tensor::scalar(total / static_cast<double>(counted));
  if (logits.track()) {
    auto pl = logits.impl();
    auto tgt = targets;
    attach(out.impl(), {pl}, [pl, tgt, probs, m, n, counted, ignore_id](TensorImpl& self) {
      pl->ensure_grad();
      const double g = self.grad[0] / static_cast<double>(counted);
      for (std::size_t i = 0; i < m; ++i) {
        if (tgt[i] == ignore_id) continue;
        const double* prow = probs->data() + i * n;
        double* grow = pl->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) grow[j] += g * prow[j];
        grow[tgt[i]] -= g;
      }
    });
  }
  return out;
}

Tensor bce_with_logit(const Tensor& logit, double target) {
  if (logit.size() != 1)
    throw std::invalid_argument("bce_with_logit: logit must be 1x1, got " + logit.shape_str());
  const double z = logit.value()[0];
  const double loss = std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
  Tensor out = Tensor::scalar(loss);
  if (logit.track()) {
    auto pl = logit.impl();
    attach(out.impl(), {pl}, [pl, target](TensorImpl& self) {
      pl->ensure_grad();
      const double z = pl->value[0];
      const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      pl->grad[0] += self.grad[0] * (s - target);
    });
  }
  return out;
}

Tensor ParamStore::create(const std::string& name, std::size_t rows, std::size_t cols) {
  if (params_.count(name))
    throw std::invalid_argument("ParamStore: duplicate parameter name '" + name + "'");
  Tensor t = Tensor::zeros(rows, cols, /*track=*/true);
  params_.emplace(name, t);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("ParamStore: no parameter '" + name + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

}  // namespace longstory::nn
