#include "nest/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <utility>

#include "nest/error.hpp"

namespace nest {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using CMatMap = Eigen::Map<const Mat>;

MatMap view(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MatMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

CMatMap view(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return CMatMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Records `fn` when a tape is active and some input carries grad; marks the
// outputs accordingly either way.
void finish_op(std::initializer_list<const Tensor*> ins, std::initializer_list<Tensor*> outs,
               std::function<void(GradMap&)> fn) {
  const bool rg = any_requires_grad(ins);
  for (Tensor* o : outs) o->set_requires_grad(rg);
  Tape* tape = Tape::current();
  if (!rg || tape == nullptr) return;
  Tape::Record rec;
  for (const Tensor* t : ins) rec.inputs.push_back(t->handle());
  for (Tensor* t : outs) rec.outputs.push_back(t->handle());
  rec.backward = std::move(fn);
  tape->record(rec);
}

std::vector<double>* accum_if_needed(GradMap& map, const TensorImpl* node) {
  if (!node->requires_grad) return nullptr;
  return &sweep_accum(map, node);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Stable log-sum-exp of one row.
double row_logsumexp(const double* row, std::size_t n) {
  double m = row[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, row[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(row[i] - m);
  return m + std::log(s);
}

void check_2d(const Tensor& t, const char* name) {
  if (t.rank() != 2) throw DimensionError(std::string(name) + ": expected a 2-D tensor");
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  check_2d(a, "matmul lhs");
  check_2d(b, "matmul rhs");
  const std::size_t p = trans_a ? a.cols() : a.rows();
  const std::size_t q = trans_a ? a.rows() : a.cols();
  const std::size_t qb = trans_b ? b.cols() : b.rows();
  const std::size_t r = trans_b ? b.rows() : b.cols();
  if (q != qb) throw DimensionError("matmul: inner extents do not match");

  Tensor c = Tensor::zeros({p, r});
  {
    auto A = view(a.data(), a.rows(), a.cols());
    auto B = view(b.data(), b.rows(), b.cols());
    auto C = view(c.data(), p, r);
    if (!trans_a && !trans_b)
      C.noalias() = A * B;
    else if (trans_a && !trans_b)
      C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b)
      C.noalias() = A * B.transpose();
    else
      C.noalias() = A.transpose() * B.transpose();
  }

  auto ah = a.handle();
  auto bh = b.handle();
  auto ch = c.handle();
  finish_op({&a, &b}, {&c}, [ah, bh, ch, trans_a, trans_b, p, r](GradMap& map) {
    const auto* dc = sweep_grad(map, ch.get());
    if (dc == nullptr) return;
    auto dC = view(*dc, p, r);
    auto A = view(ah->data, ah->shape[0], ah->shape[1]);
    auto B = view(bh->data, bh->shape[0], bh->shape[1]);
    if (auto* da = accum_if_needed(map, ah.get())) {
      auto dA = view(*da, ah->shape[0], ah->shape[1]);
      if (!trans_a && !trans_b)
        dA.noalias() += dC * B.transpose();
      else if (trans_a && !trans_b)
        dA.noalias() += B * dC.transpose();
      else if (!trans_a && trans_b)
        dA.noalias() += dC * B;
      else
        dA.noalias() += B.transpose() * dC.transpose();
    }
    if (auto* db = accum_if_needed(map, bh.get())) {
      auto dB = view(*db, bh->shape[0], bh->shape[1]);
      if (!trans_a && !trans_b)
        dB.noalias() += A.transpose() * dC;
      else if (trans_a && !trans_b)
        dB.noalias() += A * dC;
      else if (!trans_a && trans_b)
        dB.noalias() += dC.transpose() * A;
      else
        dB.noalias() += dC.transpose() * A.transpose();
    }
  });
  return c;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("add: shape mismatch");
  Tensor c = Tensor::from_data(a.shape(), a.data());
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];

  auto ah = a.handle();
  auto bh = b.handle();
  auto ch = c.handle();
  finish_op({&a, &b}, {&c}, [ah, bh, ch](GradMap& map) {
    const auto* dc = sweep_grad(map, ch.get());
    if (dc == nullptr) return;
    for (const auto& h : {ah, bh}) {
      if (auto* d = accum_if_needed(map, h.get())) {
        for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += (*dc)[i];
      }
    }
  });
  return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("mul: shape mismatch");
  Tensor c = Tensor::from_data(a.shape(), a.data());
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= b.data()[i];

  auto ah = a.handle();
  auto bh = b.handle();
  auto ch = c.handle();
  finish_op({&a, &b}, {&c}, [ah, bh, ch](GradMap& map) {
    const auto* dc = sweep_grad(map, ch.get());
    if (dc == nullptr) return;
    if (auto* da = accum_if_needed(map, ah.get())) {
      for (std::size_t i = 0; i < da->size(); ++i) (*da)[i] += (*dc)[i] * bh->data[i];
    }
    if (auto* db = accum_if_needed(map, bh.get())) {
      for (std::size_t i = 0; i < db->size(); ++i) (*db)[i] += (*dc)[i] * ah->data[i];
    }
  });
  return c;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor c = Tensor::from_data(a.shape(), a.data());
  for (double& v : c.data()) v *= factor;

  auto ah = a.handle();
  auto ch = c.handle();
  finish_op({&a}, {&c}, [ah, ch, factor](GradMap& map) {
    const auto* dc = sweep_grad(map, ch.get());
    if (dc == nullptr) return;
    if (auto* da = accum_if_needed(map, ah.get())) {
      for (std::size_t i = 0; i < da->size(); ++i) (*da)[i] += factor * (*dc)[i];
    }
  });
  return c;
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor c = Tensor::scalar(s);

  auto ah = a.handle();
  auto ch = c.handle();
  finish_op({&a}, {&c}, [ah, ch](GradMap& map) {
    const auto* dc = sweep_grad(map, ch.get());
    if (dc == nullptr) return;
    if (auto* da = accum_if_needed(map, ah.get())) {
      for (double& g : *da) g += (*dc)[0];
    }
  });
  return c;
}

Tensor softmax_rows(const Tensor& x, const std::vector<std::uint8_t>* keep) {
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (cols == 0) throw DimensionError("softmax_rows: empty rows");
  if (keep != nullptr && keep->size() != x.size()) {
    throw DimensionError("softmax_rows: mask size mismatch");
  }

  Tensor y = Tensor::zeros(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * cols;
    double* out = y.data().data() + r * cols;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (keep == nullptr || (*keep)[r * cols + c]) m = std::max(m, in[c]);
    }
    if (!std::isfinite(m)) throw DegenerateRowError("softmax_rows: fully masked row");
    double denom = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (keep == nullptr || (*keep)[r * cols + c]) {
        out[c] = std::exp(in[c] - m);
        denom += out[c];
      }
    }
    for (std::size_t c = 0; c < cols; ++c) out[c] /= denom;
  }

  auto xh = x.handle();
  auto yh = y.handle();
  finish_op({&x}, {&y}, [xh, yh, rows, cols](GradMap& map) {
    const auto* dy = sweep_grad(map, yh.get());
    if (dy == nullptr) return;
    if (auto* dx = accum_if_needed(map, xh.get())) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = yh->data.data() + r * cols;
        const double* dyr = dy->data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += yr[c] * dyr[c];
        double* dxr = dx->data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) dxr[c] += yr[c] * (dyr[c] - dot);
      }
    }
  });
  return y;
}

Tensor layer_norm_biasfree(const Tensor& x, const Tensor& gain, double eps) {
  const std::size_t rows = x.rows();
  const std::size_t d = x.cols();
  if (d < 2) throw DimensionError("layer_norm_biasfree: needs at least 2 features");
  if (gain.size() != d) throw DimensionError("layer_norm_biasfree: gain size mismatch");

  Tensor y = Tensor::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += in[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = in[c] - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    double* xh = xhat->data() + r * d;
    double* out = y.data().data() + r * d;
    for (std::size_t c = 0; c < d; ++c) {
      xh[c] = (in[c] - mean) * is;
      out[c] = gain.data()[c] * xh[c];
    }
  }

  auto xh = x.handle();
  auto gh = gain.handle();
  auto yh = y.handle();
  finish_op({&x, &gain}, {&y}, [xh, gh, yh, xhat, inv_std, rows, d](GradMap& map) {
    const auto* dy = sweep_grad(map, yh.get());
    if (dy == nullptr) return;
    auto* dg = accum_if_needed(map, gh.get());
    auto* dx = accum_if_needed(map, xh.get());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dyr = dy->data() + r * d;
      const double* xhr = xhat->data() + r * d;
      if (dg != nullptr) {
        for (std::size_t c = 0; c < d; ++c) (*dg)[c] += dyr[c] * xhr[c];
      }
      if (dx != nullptr) {
        double m1 = 0.0;  // mean of g*dy
        double m2 = 0.0;  // mean of g*dy*xhat
        for (std::size_t c = 0; c < d; ++c) {
          const double gd = gh->data[c] * dyr[c];
          m1 += gd;
          m2 += gd * xhr[c];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        double* dxr = dx->data() + r * d;
        const double is = (*inv_std)[r];
        for (std::size_t c = 0; c < d; ++c) {
          const double gd = gh->data[c] * dyr[c];
          dxr[c] += is * (gd - m1 - xhr[c] * m2);
        }
      }
    }
  });
  return y;
}

Tensor swiglu_ffn(const Tensor& x, const Tensor& w_in, const Tensor& w_gate,
                  const Tensor& w_out) {
  check_2d(w_in, "swiglu_ffn w_in");
  check_2d(w_gate, "swiglu_ffn w_gate");
  check_2d(w_out, "swiglu_ffn w_out");
  const std::size_t rows = x.rows();
  const std::size_t d = x.cols();
  const std::size_t hdim = w_in.shape()[1];
  if (w_in.shape()[0] != d || w_gate.shape()[0] != d || w_gate.shape()[1] != hdim ||
      w_out.shape()[0] != hdim || w_out.shape()[1] != d) {
    throw DimensionError("swiglu_ffn: weight shapes do not conform");
  }

  auto u = std::make_shared<std::vector<double>>(rows * hdim);
  auto z = std::make_shared<std::vector<double>>(rows * hdim);
  std::vector<double> gated(rows * hdim);
  {
    auto X = view(x.data(), rows, d);
    view(*u, rows, hdim).noalias() = X * view(w_in.data(), d, hdim);
    view(*z, rows, hdim).noalias() = X * view(w_gate.data(), d, hdim);
  }
  for (std::size_t i = 0; i < gated.size(); ++i) {
    const double zi = (*z)[i];
    gated[i] = zi * sigmoid(zi) * (*u)[i];
  }
  Tensor y = Tensor::zeros({rows, d});
  view(y.data(), rows, d).noalias() = view(gated, rows, hdim) * view(w_out.data(), hdim, d);

  auto xh = x.handle();
  auto wih = w_in.handle();
  auto wgh = w_gate.handle();
  auto woh = w_out.handle();
  auto yh = y.handle();
  finish_op({&x, &w_in, &w_gate, &w_out}, {&y},
            [xh, wih, wgh, woh, yh, u, z, rows, d, hdim](GradMap& map) {
              const auto* dy = sweep_grad(map, yh.get());
              if (dy == nullptr) return;
              auto dY = view(*dy, rows, d);

              std::vector<double> gated(rows * hdim);
              std::vector<double> silu_z(rows * hdim);
              for (std::size_t i = 0; i < gated.size(); ++i) {
                const double zi = (*z)[i];
                silu_z[i] = zi * sigmoid(zi);
                gated[i] = silu_z[i] * (*u)[i];
              }

              std::vector<double> dgated(rows * hdim);
              view(dgated, rows, hdim).noalias() = dY * view(woh->data, hdim, d).transpose();
              if (auto* dwo = accum_if_needed(map, woh.get())) {
                view(*dwo, hdim, d).noalias() += view(gated, rows, hdim).transpose() * dY;
              }

              std::vector<double> du(rows * hdim);
              std::vector<double> dz(rows * hdim);
              for (std::size_t i = 0; i < du.size(); ++i) {
                du[i] = dgated[i] * silu_z[i];
                const double zi = (*z)[i];
                const double sg = sigmoid(zi);
                const double dsilu = sg * (1.0 + zi * (1.0 - sg));
                dz[i] = dgated[i] * (*u)[i] * dsilu;
              }

              auto X = view(xh->data, rows, d);
              if (auto* dx = accum_if_needed(map, xh.get())) {
                auto dX = view(*dx, rows, d);
                dX.noalias() += view(du, rows, hdim) * view(wih->data, d, hdim).transpose();
                dX.noalias() += view(dz, rows, hdim) * view(wgh->data, d, hdim).transpose();
              }
              if (auto* dwi = accum_if_needed(map, wih.get())) {
                view(*dwi, d, hdim).noalias() += X.transpose() * view(du, rows, hdim);
              }
              if (auto* dwg = accum_if_needed(map, wgh.get())) {
                view(*dwg, d, hdim).noalias() += X.transpose() * view(dz, rows, hdim);
              }
            });
  return y;
}

Tensor gelu(const Tensor& x) {
  Tensor y = Tensor::from_data(x.shape(), x.data());
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  for (double& v : y.data()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));

  auto xh = x.handle();
  auto yh = y.handle();
  finish_op({&x}, {&y}, [xh, yh, kInvSqrt2](GradMap& map) {
    const auto* dy = sweep_grad(map, yh.get());
    if (dy == nullptr) return;
    if (auto* dx = accum_if_needed(map, xh.get())) {
      constexpr double kInvSqrt2Pi = 0.3989422804014326779;
      for (std::size_t i = 0; i < dx->size(); ++i) {
        const double v = xh->data[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        (*dx)[i] += (*dy)[i] * (cdf + v * pdf);
      }
    }
  });
  return y;
}

namespace {

// Pair frequencies base^(-2i/d) for one rotary application.
std::vector<double> rope_freqs(std::size_t d, double base) {
  std::vector<double> f(d / 2);
  for (std::size_t i = 0; i < f.size(); ++i) {
    f[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
  }
  return f;
}

void rope_apply(double* row, std::size_t d, double pos, const std::vector<double>& freqs,
                bool inverse) {
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double angle = pos * freqs[i];
    const double c = std::cos(angle);
    const double s = inverse ? -std::sin(angle) : std::sin(angle);
    const double a = row[2 * i];
    const double b = row[2 * i + 1];
    row[2 * i] = c * a - s * b;
    row[2 * i + 1] = s * a + c * b;
  }
}

}  // namespace

Tensor rope_rotate(const Tensor& x, const std::vector<long>& positions, double base) {
  const std::size_t rows = x.rows();
  const std::size_t d = x.cols();
  if (d % 2 != 0) throw ConfigError("rope_rotate: feature dimension must be even");
  if (positions.size() != rows) throw DimensionError("rope_rotate: one position per row required");

  Tensor y = Tensor::from_data(x.shape(), x.data());
  const auto freqs = rope_freqs(d, base);
  for (std::size_t r = 0; r < rows; ++r) {
    rope_apply(y.data().data() + r * d, d, static_cast<double>(positions[r]), freqs, false);
  }

  auto xh = x.handle();
  auto yh = y.handle();
  finish_op({&x}, {&y}, [xh, yh, positions, freqs, rows, d](GradMap& map) {
    const auto* dy = sweep_grad(map, yh.get());
    if (dy == nullptr) return;
    if (auto* dx = accum_if_needed(map, xh.get())) {
      std::vector<double> tmp(d);
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy(dy->begin() + r * d, dy->begin() + (r + 1) * d, tmp.begin());
        rope_apply(tmp.data(), d, static_cast<double>(positions[r]), freqs, true);
        for (std::size_t c = 0; c < d; ++c) (*dx)[r * d + c] += tmp[c];
      }
    }
  });
  return y;
}

Tensor rope_rotate(const Tensor& x, long position, double base) {
  return rope_rotate(x, std::vector<long>(x.rows(), position), base);
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must lie in [0, 1)");
  if (rate == 0.0) return x;

  auto kept = std::make_shared<std::vector<std::uint8_t>>(x.size());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double inv_keep = 1.0 / (1.0 - rate);
  Tensor y = Tensor::from_data(x.shape(), x.data());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool keep = unit(rng) >= rate;
    (*kept)[i] = keep ? 1 : 0;
    y.data()[i] = keep ? y.data()[i] * inv_keep : 0.0;
  }

  auto xh = x.handle();
  auto yh = y.handle();
  finish_op({&x}, {&y}, [xh, yh, kept, inv_keep](GradMap& map) {
    const auto* dy = sweep_grad(map, yh.get());
    if (dy == nullptr) return;
    if (auto* dx = accum_if_needed(map, xh.get())) {
      for (std::size_t i = 0; i < dx->size(); ++i) {
        if ((*kept)[i]) (*dx)[i] += (*dy)[i] * inv_keep;
      }
    }
  });
  return y;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int32_t>& ids) {
  check_2d(table, "embedding_lookup table");
  const std::size_t vocab = table.shape()[0];
  const std::size_t d = table.shape()[1];
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw EncodingError("embedding_lookup: token id outside table");
    }
  }
  Tensor y = Tensor::zeros({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const double* src = table.data().data() + static_cast<std::size_t>(ids[r]) * d;
    std::copy(src, src + d, y.data().data() + r * d);
  }

  auto th = table.handle();
  auto yh = y.handle();
  finish_op({&table}, {&y}, [th, yh, ids, d](GradMap& map) {
    const auto* dy = sweep_grad(map, yh.get());
    if (dy == nullptr) return;
    if (auto* dt = accum_if_needed(map, th.get())) {
      for (std::size_t r = 0; r < ids.size(); ++r) {
        double* dst = dt->data() + static_cast<std::size_t>(ids[r]) * d;
        const double* src = dy->data() + r * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    }
  });
  return y;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  const std::size_t d = x.cols();
  const std::size_t n = x.rows();
  for (std::size_t r : rows) {
    if (r >= n) throw DimensionError("gather_rows: row index out of range");
  }
  Tensor y = Tensor::zeros({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = x.data().data() + rows[i] * d;
    std::copy(src, src + d, y.data().data() + i * d);
  }

  auto xh = x.handle();
  auto yh = y.handle();
  finish_op({&x}, {&y}, [xh, yh, rows, d](GradMap& map) {
    const auto* dy = sweep_grad(map, yh.get());
    if (dy == nullptr) return;
    if (auto* dx = accum_if_needed(map, xh.get())) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        double* dst = dx->data() + rows[i] * d;
        const double* src = dy->data() + i * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    }
  });
  return y;
}

Tensor replace_rows(const Tensor& x, const std::vector<std::size_t>& rows,
                    const Tensor& replacement) {
  const std::size_t d = x.cols();
  if (replacement.cols() != d || replacement.rows() != rows.size()) {
    throw DimensionError("replace_rows: replacement shape mismatch");
  }
  for (std::size_t r : rows) {
    if (r >= x.rows()) throw DimensionError("replace_rows: row index out of range");
  }
  Tensor y = Tensor::from_data(x.shape(), x.data());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = replacement.data().data() + i * d;
    std::copy(src, src + d, y.data().data() + rows[i] * d);
  }

  auto xh = x.handle();
  auto rh = replacement.handle();
  auto yh = y.handle();
  finish_op({&x, &replacement}, {&y}, [xh, rh, yh, rows, d](GradMap& map) {
    const auto* dy = sweep_grad(map, yh.get());
    if (dy == nullptr) return;
    if (auto* dx = accum_if_needed(map, xh.get())) {
      std::vector<std::uint8_t> replaced(xh->data.size() / d, 0);
      for (std::size_t r : rows) replaced[r] = 1;
      for (std::size_t r = 0; r < replaced.size(); ++r) {
        if (replaced[r]) continue;
        for (std::size_t c = 0; c < d; ++c) (*dx)[r * d + c] += (*dy)[r * d + c];
      }
    }
    if (auto* dr = accum_if_needed(map, rh.get())) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t c = 0; c < d; ++c) (*dr)[i * d + c] += (*dy)[rows[i] * d + c];
      }
    }
  });
  return y;
}

Tensor repeat_rows(const Tensor& x, std::size_t times) {
  if (times == 0) throw ConfigError("repeat_rows: times must be >= 1");
  const std::size_t d = x.cols();
  const std::size_t n = x.rows();
  Tensor y = Tensor::zeros({n * times, d});
  for (std::size_t r = 0; r < n; ++r) {
    const double* src = x.data().data() + r * d;
    for (std::size_t k = 0; k < times; ++k) {
      std::copy(src, src + d, y.data().data() + (r * times + k) * d);
    }
  }

  auto xh = x.handle();
  auto yh = y.handle();
  finish_op({&x}, {&y}, [xh, yh, times, n, d](GradMap& map) {
    const auto* dy = sweep_grad(map, yh.get());
    if (dy == nullptr) return;
    if (auto* dx = accum_if_needed(map, xh.get())) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < times; ++k) {
          const double* src = dy->data() + (r * times + k) * d;
          for (std::size_t c = 0; c < d; ++c) (*dx)[r * d + c] += src[c];
        }
      }
    }
  });
  return y;
}

Tensor time2vec_embed(const Tensor& omega, const Tensor& phi, const std::vector<double>& times) {
  const std::size_t d = omega.size();
  if (phi.size() != d) throw DimensionError("time2vec_embed: omega/phi size mismatch");
  if (d < 1) throw DimensionError("time2vec_embed: empty parameters");
  for (double t : times) {
    if (!std::isfinite(t)) throw InputError("time2vec_embed: non-finite time");
  }

  Tensor y = Tensor::zeros({times.size(), d});
  for (std::size_t r = 0; r < times.size(); ++r) {
    double* out = y.data().data() + r * d;
    out[0] = omega.data()[0] * times[r] + phi.data()[0];
    for (std::size_t i = 1; i < d; ++i) {
      out[i] = std::sin(omega.data()[i] * times[r] + phi.data()[i]);
    }
  }

  auto oh = omega.handle();
  auto ph = phi.handle();
  auto yh = y.handle();
  finish_op({&omega, &phi}, {&y}, [oh, ph, yh, times, d](GradMap& map) {
    const auto* dy = sweep_grad(map, yh.get());
    if (dy == nullptr) return;
    auto* domega = accum_if_needed(map, oh.get());
    auto* dphi = accum_if_needed(map, ph.get());
    if (domega == nullptr && dphi == nullptr) return;
    for (std::size_t r = 0; r < times.size(); ++r) {
      const double* dyr = dy->data() + r * d;
      const double t = times[r];
      if (domega != nullptr) (*domega)[0] += dyr[0] * t;
      if (dphi != nullptr) (*dphi)[0] += dyr[0];
      for (std::size_t i = 1; i < d; ++i) {
        const double c = std::cos(oh->data[i] * t + ph->data[i]);
        if (domega != nullptr) (*domega)[i] += dyr[i] * c * t;
        if (dphi != nullptr) (*dphi)[i] += dyr[i] * c;
      }
    }
  });
  return y;
}

Tensor multihead_attention(const Tensor& x, const Tensor& w_q, const Tensor& w_k,
                           const Tensor& w_v, const Tensor& w_o, const AttentionSpec& spec) {
  const std::size_t rows = x.rows();
  const std::size_t d = x.cols();
  const std::size_t G = spec.group_size;
  const std::size_t H = spec.n_heads;
  if (G == 0 || rows % G != 0) throw DimensionError("multihead_attention: bad group size");
  if (H == 0 || d % H != 0) throw ConfigError("multihead_attention: heads must divide d_model");
  for (const Tensor* w : {&w_q, &w_k, &w_v, &w_o}) {
    if (w->rank() != 2 || w->shape()[0] != d || w->shape()[1] != d) {
      throw DimensionError("multihead_attention: projections must be d_model x d_model");
    }
  }
  const std::size_t dk = d / H;
  const bool use_rope = spec.positions != nullptr;
  if (use_rope && dk % 2 != 0) {
    throw ConfigError("multihead_attention: rotary encoding needs even head dim");
  }
  if (use_rope && spec.positions->size() != rows) {
    throw DimensionError("multihead_attention: one position per row required");
  }
  if (spec.key_valid != nullptr && spec.key_valid->size() != rows) {
    throw DimensionError("multihead_attention: key mask size mismatch");
  }
  const std::size_t S = rows / G;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  constexpr double kMaskedScore = -1e30;

  auto q = std::make_shared<std::vector<double>>(rows * d);
  auto k = std::make_shared<std::vector<double>>(rows * d);
  auto v = std::make_shared<std::vector<double>>(rows * d);
  auto ctx = std::make_shared<std::vector<double>>(rows * d, 0.0);
  auto probs = std::make_shared<std::vector<double>>(S * H * G * G, 0.0);

  {
    auto X = view(x.data(), rows, d);
    view(*q, rows, d).noalias() = X * view(w_q.data(), d, d);
    view(*k, rows, d).noalias() = X * view(w_k.data(), d, d);
    view(*v, rows, d).noalias() = X * view(w_v.data(), d, d);
  }
  if (use_rope) {
    const auto freqs = rope_freqs(dk, spec.rope_base);
    for (std::size_t r = 0; r < rows; ++r) {
      const double pos = static_cast<double>((*spec.positions)[r]);
      for (std::size_t h = 0; h < H; ++h) {
        rope_apply(q->data() + r * d + h * dk, dk, pos, freqs, false);
        rope_apply(k->data() + r * d + h * dk, dk, pos, freqs, false);
      }
    }
  }

  Mat scores(G, G);
  for (std::size_t g = 0; g < S; ++g) {
    bool any_valid_key = false;
    for (std::size_t j = 0; j < G; ++j) {
      if (spec.key_valid == nullptr || (*spec.key_valid)[g * G + j]) {
        any_valid_key = true;
        break;
      }
    }
    if (!any_valid_key) continue;  // outputs stay zero for this group

    auto Q = view(*q, rows, d);
    auto K = view(*k, rows, d);
    auto V = view(*v, rows, d);
    for (std::size_t h = 0; h < H; ++h) {
      auto Qg = Q.block(g * G, h * dk, G, dk);
      auto Kg = K.block(g * G, h * dk, G, dk);
      scores.noalias() = Qg * Kg.transpose() * inv_sqrt_dk;
      if (spec.key_valid != nullptr) {
        for (std::size_t j = 0; j < G; ++j) {
          if (!(*spec.key_valid)[g * G + j]) scores.col(j).setConstant(kMaskedScore);
        }
      }
      double* p = probs->data() + (g * H + h) * G * G;
      for (std::size_t i = 0; i < G; ++i) {
        const double m = scores.row(i).maxCoeff();
        double denom = 0.0;
        for (std::size_t j = 0; j < G; ++j) {
          const double e = std::exp(scores(i, j) - m);
          p[i * G + j] = e;
          denom += e;
        }
        for (std::size_t j = 0; j < G; ++j) p[i * G + j] /= denom;
      }
      view(*ctx, rows, d).block(g * G, h * dk, G, dk).noalias() =
          CMatMap(p, G, G) * V.block(g * G, h * dk, G, dk);
    }
  }

  Tensor y = Tensor::zeros({rows, d});
  view(y.data(), rows, d).noalias() = view(*ctx, rows, d) * view(w_o.data(), d, d);

  auto xh = x.handle();
  auto wqh = w_q.handle();
  auto wkh = w_k.handle();
  auto wvh = w_v.handle();
  auto woh = w_o.handle();
  auto yh = y.handle();
  std::vector<long> positions = use_rope ? *spec.positions : std::vector<long>{};
  std::vector<std::uint8_t> key_valid =
      spec.key_valid != nullptr ? *spec.key_valid : std::vector<std::uint8_t>{};
  const double rope_base = spec.rope_base;

  finish_op(
      {&x, &w_q, &w_k, &w_v, &w_o}, {&y},
      [xh, wqh, wkh, wvh, woh, yh, q, k, v, ctx, probs, positions, key_valid, rows, d, G, H, dk,
       S, inv_sqrt_dk, rope_base](GradMap& map) {
        const auto* dy = sweep_grad(map, yh.get());
        if (dy == nullptr) return;
        auto dY = view(*dy, rows, d);

        if (auto* dwo = accum_if_needed(map, woh.get())) {
          view(*dwo, d, d).noalias() += view(*ctx, rows, d).transpose() * dY;
        }
        std::vector<double> dctx(rows * d);
        view(dctx, rows, d).noalias() = dY * view(woh->data, d, d).transpose();

        std::vector<double> dq(rows * d, 0.0);
        std::vector<double> dk_buf(rows * d, 0.0);
        std::vector<double> dv(rows * d, 0.0);
        Mat dP(G, G);
        Mat dS(G, G);
        auto Q = view(*q, rows, d);
        auto K = view(*k, rows, d);
        auto V = view(*v, rows, d);
        for (std::size_t g = 0; g < S; ++g) {
          bool any_valid_key = key_valid.empty();
          for (std::size_t j = 0; !any_valid_key && j < G; ++j) {
            if (key_valid[g * G + j]) any_valid_key = true;
          }
          if (!any_valid_key) continue;
          for (std::size_t h = 0; h < H; ++h) {
            const double* p = probs->data() + (g * H + h) * G * G;
            CMatMap P(p, G, G);
            auto dCtx = view(dctx, rows, d).block(g * G, h * dk, G, dk);
            dP.noalias() = dCtx * V.block(g * G, h * dk, G, dk).transpose();
            view(dv, rows, d).block(g * G, h * dk, G, dk).noalias() += P.transpose() * dCtx;
            for (std::size_t i = 0; i < G; ++i) {
              double dot = 0.0;
              for (std::size_t j = 0; j < G; ++j) dot += dP(i, j) * P(i, j);
              for (std::size_t j = 0; j < G; ++j) {
                dS(i, j) = P(i, j) * (dP(i, j) - dot) * inv_sqrt_dk;
              }
            }
            view(dq, rows, d).block(g * G, h * dk, G, dk).noalias() +=
                dS * K.block(g * G, h * dk, G, dk);
            view(dk_buf, rows, d).block(g * G, h * dk, G, dk).noalias() +=
                dS.transpose() * Q.block(g * G, h * dk, G, dk);
          }
        }

        if (!positions.empty()) {
          const auto freqs = rope_freqs(dk, rope_base);
          for (std::size_t r = 0; r < rows; ++r) {
            const double pos = static_cast<double>(positions[r]);
            for (std::size_t h = 0; h < H; ++h) {
              rope_apply(dq.data() + r * d + h * dk, dk, pos, freqs, true);
              rope_apply(dk_buf.data() + r * d + h * dk, dk, pos, freqs, true);
            }
          }
        }

        auto X = view(xh->data, rows, d);
        if (auto* dx = accum_if_needed(map, xh.get())) {
          auto dX = view(*dx, rows, d);
          dX.noalias() += view(dq, rows, d) * view(wqh->data, d, d).transpose();
          dX.noalias() += view(dk_buf, rows, d) * view(wkh->data, d, d).transpose();
          dX.noalias() += view(dv, rows, d) * view(wvh->data, d, d).transpose();
        }
        if (auto* dwq = accum_if_needed(map, wqh.get())) {
          view(*dwq, d, d).noalias() += X.transpose() * view(dq, rows, d);
        }
        if (auto* dwk = accum_if_needed(map, wkh.get())) {
          view(*dwk, d, d).noalias() += X.transpose() * view(dk_buf, rows, d);
        }
        if (auto* dwv = accum_if_needed(map, wvh.get())) {
          view(*dwv, d, d).noalias() += X.transpose() * view(dv, rows, d);
        }
      });
  return y;
}

Tensor masked_cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& targets,
                            const std::vector<std::uint8_t>& supervise) {
  const std::size_t rows = logits.rows();
  const std::size_t vocab = logits.cols();
  if (targets.size() != rows || supervise.size() != rows) {
    throw DimensionError("masked_cross_entropy: targets/supervise must have one entry per row");
  }
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!supervise[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw InputError("masked_cross_entropy: target id outside vocabulary");
    }
    const double* row = logits.data().data() + r * vocab;
    total += row_logsumexp(row, vocab) - row[static_cast<std::size_t>(targets[r])];
    ++count;
  }
  if (count == 0) throw InputError("masked_cross_entropy: no supervised positions");
  Tensor loss = Tensor::scalar(total / static_cast<double>(count));

  auto lh = logits.handle();
  auto oh = loss.handle();
  finish_op({&logits}, {&loss}, [lh, oh, targets, supervise, rows, vocab, count](GradMap& map) {
    const auto* dl = sweep_grad(map, oh.get());
    if (dl == nullptr) return;
    if (auto* dx = accum_if_needed(map, lh.get())) {
      const double w = (*dl)[0] / static_cast<double>(count);
      for (std::size_t r = 0; r < rows; ++r) {
        if (!supervise[r]) continue;
        const double* row = lh->data.data() + r * vocab;
        const double lse = row_logsumexp(row, vocab);
        double* dst = dx->data() + r * vocab;
        for (std::size_t c = 0; c < vocab; ++c) {
          double pi = std::exp(row[c] - lse);
          if (c == static_cast<std::size_t>(targets[r])) pi -= 1.0;
          dst[c] += w * pi;
        }
      }
    }
  });
  return loss;
}

Tensor kl_simplex_loss(const Tensor& p, const Tensor& logits) {
  if (p.shape() != logits.shape()) throw DimensionError("kl_simplex_loss: shape mismatch");
  const std::size_t rows = p.rows();
  const std::size_t vocab = p.cols();
  if (rows == 0) throw InputError("kl_simplex_loss: empty input");

  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* pr = p.data().data() + r * vocab;
    double sum = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      if (pr[c] < -1e-12) throw InputError("kl_simplex_loss: negative probability");
      sum += pr[c];
    }
    if (std::abs(sum - 1.0) > 1e-6) throw InputError("kl_simplex_loss: p is not normalized");
    const double* lr = logits.data().data() + r * vocab;
    const double lse = row_logsumexp(lr, vocab);
    for (std::size_t c = 0; c < vocab; ++c) {
      if (pr[c] > 0.0) total += pr[c] * (std::log(pr[c]) - (lr[c] - lse));
    }
  }
  Tensor loss = Tensor::scalar(total / static_cast<double>(rows));

  auto ph = p.handle();
  auto lh = logits.handle();
  auto oh = loss.handle();
  finish_op({&p, &logits}, {&loss}, [ph, lh, oh, rows, vocab](GradMap& map) {
    const auto* dl = sweep_grad(map, oh.get());
    if (dl == nullptr) return;
    if (auto* dx = accum_if_needed(map, lh.get())) {
      const double w = (*dl)[0] / static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* lr = lh->data.data() + r * vocab;
        const double* pr = ph->data.data() + r * vocab;
        const double lse = row_logsumexp(lr, vocab);
        double* dst = dx->data() + r * vocab;
        for (std::size_t c = 0; c < vocab; ++c) {
          dst[c] += w * (std::exp(lr[c] - lse) - pr[c]);
        }
      }
    }
  });
  return loss;
}

}  // namespace nest
