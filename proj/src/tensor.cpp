#include "fw/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace fw {

namespace {

thread_local Graph* g_current_graph = nullptr;

void check(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

int shape_numel(const Shape& s) {
    int n = 1;
    for (int d : s) n *= d;
    return n;
}

bool tracking(const Tensor& a) { return a.requires_grad() && Graph::current(); }

// Decides whether this op joins the active graph. Must run before the
// backward closure is constructed so the closure captures `out` with its
// gradient buffer already in place.
bool track(Tensor& out, bool any_input_tracks) {
    if (!any_input_tracks || !Graph::current()) return false;
    out.set_requires_grad(true);
    return true;
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape) {
    Tensor t;
    t.shape_ = shape;
    t.data_ = std::make_shared<std::vector<float>>(shape_numel(shape), 0.0f);
    return t;
}

Tensor Tensor::full(const Shape& shape, float value) {
    Tensor t = zeros(shape);
    for (float& v : *t.data_) v = value;
    return t;
}

Tensor Tensor::from(const Shape& shape, std::vector<float> values) {
    check(int(values.size()) == shape_numel(shape),
          "Tensor::from: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    Tensor t;
    t.shape_ = shape;
    t.data_ = std::make_shared<std::vector<float>>(std::move(values));
    return t;
}

Tensor Tensor::param(const Shape& shape, std::vector<float> values) {
    Tensor t = from(shape, std::move(values));
    t.set_requires_grad(true);
    return t;
}

Tensor Tensor::xavier(int fan_in, int fan_out, Rng& rng) {
    check(fan_in > 0 && fan_out > 0, "Tensor::xavier: non-positive fan");
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    std::vector<float> v(std::size_t(fan_in) * fan_out);
    for (float& x : v) x = float(rng.uniform(-limit, limit));
    return param({fan_in, fan_out}, std::move(v));
}

int Tensor::numel() const { return data_ ? int(data_->size()) : 0; }

int Tensor::rows() const {
    check(shape_.size() == 2, "Tensor::rows: not 2-D, shape " + shape_str(shape_));
    return shape_[0];
}

int Tensor::cols() const {
    check(shape_.size() == 2, "Tensor::cols: not 2-D, shape " + shape_str(shape_));
    return shape_[1];
}

void Tensor::set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on && !grad_ && data_) grad_ = std::make_shared<std::vector<float>>(data_->size(), 0.0f);
    if (!on) grad_.reset();
}

void Tensor::zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0f);
}

Tensor Tensor::detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
}

float Tensor::item() const {
    check(numel() == 1, "Tensor::item: numel " + std::to_string(numel()) + " != 1");
    return (*data_)[0];
}

float Tensor::at(int i) const {
    check(data_ && i >= 0 && i < numel(), "Tensor::at: index " + std::to_string(i) + " out of range");
    return (*data_)[std::size_t(i)];
}

// ---- Graph ----------------------------------------------------------------

Graph::Graph() : prev_(g_current_graph) { g_current_graph = this; }

Graph::~Graph() { g_current_graph = prev_; }

Graph* Graph::current() { return g_current_graph; }

void Graph::backward(const Tensor& loss) {
    check(loss.numel() == 1, "Graph::backward: loss has numel " + std::to_string(loss.numel()) + ", expected scalar");
    check(loss.requires_grad(), "Graph::backward: loss does not track gradients");
    Tensor seed = loss;  // shares the grad buffer
    seed.grad()[0] += 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
}

// ---- op helpers -----------------------------------------------------------

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void axpy(float* dst, const float* src, double s, int n) {
    for (int i = 0; i < n; ++i) dst[i] += float(s * src[i]);
}

}  // namespace

// ---- arithmetic -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    const int n = a.numel();
    Tensor out = Tensor::zeros(a.shape());
    for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (track(out, a.requires_grad() || b.requires_grad()))
        Graph::current()->record([a = a, b = b, out = out, n]() mutable {
        if (a.requires_grad()) axpy(a.grad(), out.grad(), 1.0, n);
        if (b.requires_grad()) axpy(b.grad(), out.grad(), 1.0, n);
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    const int n = a.numel();
    Tensor out = Tensor::zeros(a.shape());
    for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (track(out, a.requires_grad() || b.requires_grad()))
        Graph::current()->record([a = a, b = b, out = out, n]() mutable {
        if (a.requires_grad()) axpy(a.grad(), out.grad(), 1.0, n);
        if (b.requires_grad()) axpy(b.grad(), out.grad(), -1.0, n);
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    const int n = a.numel();
    Tensor out = Tensor::zeros(a.shape());
    for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (track(out, a.requires_grad() || b.requires_grad()))
        Graph::current()->record([a = a, b = b, out = out, n]() mutable {
        if (a.requires_grad())
            for (int i = 0; i < n; ++i) a.grad()[i] += out.grad()[i] * b.data()[i];
        if (b.requires_grad())
            for (int i = 0; i < n; ++i) b.grad()[i] += out.grad()[i] * a.data()[i];
    });
    return out;
}

Tensor scale(const Tensor& a, double s) {
    const int n = a.numel();
    Tensor out = Tensor::zeros(a.shape());
    for (int i = 0; i < n; ++i) out.data()[i] = float(s * a.data()[i]);
    if (track(out, a.requires_grad()))
        Graph::current()->record([a = a, out = out, s, n]() mutable { axpy(a.grad(), out.grad(), s, n); });
    return out;
}

// ---- matrix ops -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.shape().size() == 2 && b.shape().size() == 2 && a.cols() == b.rows(),
          "matmul: incompatible shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    {
        std::vector<double> acc(static_cast<std::size_t>(n));
        const float* ap = a.data();
        const float* bp = b.data();
        float* op = out.data();
        for (int i = 0; i < m; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int kk = 0; kk < k; ++kk) {
                const double av = ap[std::size_t(i) * k + kk];
                const float* brow = bp + std::size_t(kk) * n;
                for (int j = 0; j < n; ++j) acc[j] += av * brow[j];
            }
            for (int j = 0; j < n; ++j) op[std::size_t(i) * n + j] = float(acc[j]);
        }
    }
    if (track(out, a.requires_grad() || b.requires_grad()))
        Graph::current()->record([a = a, b = b, out = out, m, k, n]() mutable {
        const float* g = out.grad();
        if (a.requires_grad()) {
            float* ga = a.grad();
            const float* bp = b.data();
            for (int i = 0; i < m; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    double acc = 0.0;
                    const float* grow = g + std::size_t(i) * n;
                    const float* brow = bp + std::size_t(kk) * n;
                    for (int j = 0; j < n; ++j) acc += double(grow[j]) * brow[j];
                    ga[std::size_t(i) * k + kk] += float(acc);
                }
        }
        if (b.requires_grad()) {
            float* gb = b.grad();
            const float* ap = a.data();
            std::vector<double> acc(static_cast<std::size_t>(n));
            for (int kk = 0; kk < k; ++kk) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (int i = 0; i < m; ++i) {
                    const double av = ap[std::size_t(i) * k + kk];
                    const float* grow = g + std::size_t(i) * n;
                    for (int j = 0; j < n; ++j) acc[j] += av * grow[j];
                }
                for (int j = 0; j < n; ++j) gb[std::size_t(kk) * n + j] += float(acc[j]);
            }
        }
    });
    return out;
}

Tensor transpose(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    Tensor out = Tensor::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data()[std::size_t(j) * m + i] = a.data()[std::size_t(i) * n + j];
    if (track(out, a.requires_grad()))
        Graph::current()->record([a = a, out = out, m, n]() mutable {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                a.grad()[std::size_t(i) * n + j] += out.grad()[std::size_t(j) * m + i];
    });
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    check(a.shape().size() == 2 && b.shape().size() == 2 && a.rows() == b.rows(),
          "concat_cols: incompatible shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int m = a.rows(), ka = a.cols(), kb = b.cols();
    Tensor out = Tensor::zeros({m, ka + kb});
    for (int i = 0; i < m; ++i) {
        std::memcpy(out.data() + std::size_t(i) * (ka + kb), a.data() + std::size_t(i) * ka, sizeof(float) * ka);
        std::memcpy(out.data() + std::size_t(i) * (ka + kb) + ka, b.data() + std::size_t(i) * kb, sizeof(float) * kb);
    }
    if (track(out, a.requires_grad() || b.requires_grad()))
        Graph::current()->record([a = a, b = b, out = out, m, ka, kb]() mutable {
        const float* g = out.grad();
        for (int i = 0; i < m; ++i) {
            if (a.requires_grad()) axpy(a.grad() + std::size_t(i) * ka, g + std::size_t(i) * (ka + kb), 1.0, ka);
            if (b.requires_grad()) axpy(b.grad() + std::size_t(i) * kb, g + std::size_t(i) * (ka + kb) + ka, 1.0, kb);
        }
    });
    return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& indices) {
    check(table.shape().size() == 2, "gather_rows: table not 2-D, shape " + shape_str(table.shape()));
    const int v = table.rows(), d = table.cols();
    for (int idx : indices)
        check(idx >= 0 && idx < v,
              "gather_rows: index " + std::to_string(idx) + " outside table rows " + std::to_string(v));
    const int k = int(indices.size());
    Tensor out = Tensor::zeros({k, d});
    for (int r = 0; r < k; ++r)
        std::memcpy(out.data() + std::size_t(r) * d, table.data() + std::size_t(indices[r]) * d, sizeof(float) * d);
    if (track(out, table.requires_grad()))
        Graph::current()->record([table = table, out = out, indices, d]() mutable {
        for (std::size_t r = 0; r < indices.size(); ++r)
            axpy(table.grad() + std::size_t(indices[r]) * d, out.grad() + r * d, 1.0, d);
    });
    return out;
}

Tensor pad_row(const Tensor& row, int n_rows, int row_index) {
    const int d = row.numel();
    check(row.shape().size() == 1 || (row.shape().size() == 2 && row.rows() == 1),
          "pad_row: expected a single row, shape " + shape_str(row.shape()));
    check(row_index >= 0 && row_index < n_rows,
          "pad_row: row " + std::to_string(row_index) + " outside " + std::to_string(n_rows));
    Tensor out = Tensor::zeros({n_rows, d});
    std::memcpy(out.data() + std::size_t(row_index) * d, row.data(), sizeof(float) * d);
    if (track(out, row.requires_grad()))
        Graph::current()->record([row = row, out = out, row_index, d]() mutable {
        axpy(row.grad(), out.grad() + std::size_t(row_index) * d, 1.0, d);
    });
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    check(x.shape().size() == 2 && w.shape().size() == 2 && x.cols() == w.rows(),
          "linear: incompatible shapes " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
    check(b.shape() == Shape{w.cols()},
          "linear: bias shape " + shape_str(b.shape()) + " vs weight " + shape_str(w.shape()));
    Tensor out = matmul(x, w);
    return add_rowvec(out, b);
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    check(x.shape().size() == 2, "add_rowvec: x not 2-D, shape " + shape_str(x.shape()));
    check(v.numel() == x.cols(),
          "add_rowvec: vector shape " + shape_str(v.shape()) + " vs matrix " + shape_str(x.shape()));
    const int m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.data()[std::size_t(i) * n + j] = x.data()[std::size_t(i) * n + j] + v.data()[j];
    if (track(out, x.requires_grad() || v.requires_grad()))
        Graph::current()->record([x = x, v = v, out = out, m, n]() mutable {
        const float* g = out.grad();
        if (x.requires_grad()) axpy(x.grad(), g, 1.0, m * n);
        if (v.requires_grad()) {
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int i = 0; i < m; ++i) acc += g[std::size_t(i) * n + j];
                v.grad()[j] += float(acc);
            }
        }
    });
    return out;
}

// ---- nonlinearities -------------------------------------------------------

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
    const int n = x.numel();
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < n; ++i) {
        const double v = x.data()[i];
        const double u = kGeluC * (v + kGeluA * v * v * v);
        out.data()[i] = float(0.5 * v * (1.0 + std::tanh(u)));
    }
    if (track(out, x.requires_grad()))
        Graph::current()->record([x = x, out = out, n]() mutable {
        for (int i = 0; i < n; ++i) {
            const double v = x.data()[i];
            const double u = kGeluC * (v + kGeluA * v * v * v);
            const double th = std::tanh(u);
            const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
            const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
            x.grad()[i] += float(d * out.grad()[i]);
        }
    });
    return out;
}

Tensor tanh_act(const Tensor& x) {
    const int n = x.numel();
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < n; ++i) out.data()[i] = float(std::tanh(double(x.data()[i])));
    if (track(out, x.requires_grad()))
        Graph::current()->record([x = x, out = out, n]() mutable {
        for (int i = 0; i < n; ++i) {
            const double y = out.data()[i];
            x.grad()[i] += float((1.0 - y * y) * out.grad()[i]);
        }
    });
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    check(x.shape().size() == 2, "softmax_rows: not 2-D, shape " + shape_str(x.shape()));
    const int m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        const float* xr = x.data() + std::size_t(i) * n;
        float* yr = out.data() + std::size_t(i) * n;
        double mx = xr[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, double(xr[j]));
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += std::exp(double(xr[j]) - mx);
        for (int j = 0; j < n; ++j) yr[j] = float(std::exp(double(xr[j]) - mx) / s);
    }
    if (track(out, x.requires_grad()))
        Graph::current()->record([x = x, out = out, m, n]() mutable {
        for (int i = 0; i < m; ++i) {
            const float* yr = out.data() + std::size_t(i) * n;
            const float* gr = out.grad() + std::size_t(i) * n;
            float* gx = x.grad() + std::size_t(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += double(yr[j]) * gr[j];
            for (int j = 0; j < n; ++j) gx[j] += float(double(yr[j]) * (double(gr[j]) - dot));
        }
    });
    return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    check(x.shape().size() == 2, "layer_norm_rows: not 2-D, shape " + shape_str(x.shape()));
    const int m = x.rows(), n = x.cols();
    check(gain.numel() == n && bias.numel() == n,
          "layer_norm_rows: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
              " vs row width " + std::to_string(n));
    constexpr double kEps = 1e-5;
    Tensor out = Tensor::zeros({m, n});
    // Cache inv-std and normalized values for backward.
    auto xhat = std::make_shared<std::vector<float>>(std::size_t(m) * n);
    auto istd = std::make_shared<std::vector<float>>(std::size_t(m));
    for (int i = 0; i < m; ++i) {
        const float* xr = x.data() + std::size_t(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += xr[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + kEps);
        (*istd)[std::size_t(i)] = float(inv);
        for (int j = 0; j < n; ++j) {
            const double xh = (xr[j] - mean) * inv;
            (*xhat)[std::size_t(i) * n + j] = float(xh);
            out.data()[std::size_t(i) * n + j] = float(xh * gain.data()[j] + bias.data()[j]);
        }
    }
    if (track(out, x.requires_grad() || gain.requires_grad() || bias.requires_grad()))
        Graph::current()->record([x = x, gain = gain, bias = bias, out = out, xhat, istd, m, n]() mutable {
               for (int i = 0; i < m; ++i) {
                   const float* gr = out.grad() + std::size_t(i) * n;
                   const float* xh = xhat->data() + std::size_t(i) * n;
                   if (gain.requires_grad())
                       for (int j = 0; j < n; ++j) gain.grad()[j] += gr[j] * xh[j];
                   if (bias.requires_grad())
                       for (int j = 0; j < n; ++j) bias.grad()[j] += gr[j];
                   if (x.requires_grad()) {
                       double a = 0.0, c = 0.0;
                       for (int j = 0; j < n; ++j) {
                           const double gy = double(gr[j]) * gain.data()[j];
                           a += gy;
                           c += gy * xh[j];
                       }
                       a /= n;
                       c /= n;
                       const double inv = (*istd)[std::size_t(i)];
                       float* gx = x.grad() + std::size_t(i) * n;
                       for (int j = 0; j < n; ++j) {
                           const double gy = double(gr[j]) * gain.data()[j];
                           gx[j] += float(inv * (gy - a - xh[j] * c));
                       }
                   }
               }
           });
    return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
    check_same_shape("mse", a, b);
    const int n = a.numel();
    check(n > 0, "mse: empty tensors");
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = double(a.data()[i]) - b.data()[i];
        acc += d * d;
    }
    Tensor out = Tensor::from({1}, {float(acc / n)});
    if (track(out, a.requires_grad() || b.requires_grad()))
        Graph::current()->record([a = a, b = b, out = out, n]() mutable {
        const double g = out.grad()[0] * 2.0 / n;
        if (a.requires_grad())
            for (int i = 0; i < n; ++i) a.grad()[i] += float(g * (double(a.data()[i]) - b.data()[i]));
        if (b.requires_grad())
            for (int i = 0; i < n; ++i) b.grad()[i] -= float(g * (double(a.data()[i]) - b.data()[i]));
    });
    return out;
}

Tensor reshape(const Tensor& a, const Shape& shape) {
    check(shape_numel(shape) == a.numel(),
          "reshape: numel mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor out = Tensor::from(shape, a.values());
    if (track(out, a.requires_grad()))
        Graph::current()->record([a = a, out = out]() mutable { axpy(a.grad(), out.grad(), 1.0, a.numel()); });
    return out;
}

// ---- helpers ---------------------------------------------------------------

Tensor sinusoidal_embedding(double t, int dim) {
    check(dim > 0 && dim % 2 == 0, "sinusoidal_embedding: dim " + std::to_string(dim) + " not even");
    const int half = dim / 2;
    std::vector<float> v(static_cast<std::size_t>(dim));
    constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
    constexpr double kFMin = 0.5, kFMax = 32.0;
    for (int k = 0; k < half; ++k) {
        const double frac = half > 1 ? double(k) / double(half - 1) : 0.0;
        const double f = kFMin * std::pow(kFMax / kFMin, frac);
        v[std::size_t(2 * k)] = float(std::sin(kTwoPi * f * t));
        v[std::size_t(2 * k + 1)] = float(std::cos(kTwoPi * f * t));
    }
    return Tensor::from({dim}, std::move(v));
}

Tensor randn(const Shape& shape, Rng& rng) {
    Tensor t = Tensor::zeros(shape);
    for (int i = 0; i < t.numel(); ++i) t.data()[i] = float(rng.normal());
    return t;
}

double l2_norm(const Tensor& a) {
    double acc = 0.0;
    for (int i = 0; i < a.numel(); ++i) acc += double(a.data()[i]) * a.data()[i];
    return std::sqrt(acc);
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (int i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.data()[i])));
    return m;
}

bool all_finite(const Tensor& a) {
    for (int i = 0; i < a.numel(); ++i)
        if (!std::isfinite(a.data()[i])) return false;
    return true;
}

bool same_values(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data(), b.data(), sizeof(float) * std::size_t(a.numel())) == 0;
}

double finite_difference_check(const std::function<double()>& eval_loss,
                               const std::function<void()>& compute_grads,
                               const std::vector<Tensor>& params,
                               double h, int probes_per_param, std::uint64_t seed) {
    compute_grads();
    Rng rng(seed);
    double worst = 0.0;
    for (const Tensor& p : params) {
        if (!p.requires_grad())
            throw std::invalid_argument("finite_difference_check: parameter does not track gradients");
        Tensor t = p;  // shares storage
        // Compare the probed analytic and numeric gradients as vectors: a
        // pointwise ratio is meaningless near a gradient's zero crossings,
        // where 32-bit forward rounding dominates any finite step.
        double dot_diff = 0.0, dot_a = 0.0, dot_n = 0.0;
        for (int probe = 0; probe < probes_per_param; ++probe) {
            const int i = rng.uniform_int(t.numel());
            const float saved = t.data()[i];
            // Snap the step to representable deltas to cancel rounding of x+-h.
            volatile float hi = saved + float(h);
            volatile float lo = saved - float(h);
            const double h_eff = (double(hi) - double(lo)) / 2.0;
            t.data()[i] = hi;
            const double f_plus = eval_loss();
            t.data()[i] = lo;
            const double f_minus = eval_loss();
            t.data()[i] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * h_eff);
            const double analytic = t.grad()[i];
            dot_diff += (analytic - numeric) * (analytic - numeric);
            dot_a += analytic * analytic;
            dot_n += numeric * numeric;
        }
        const double scale = std::max({std::sqrt(dot_a), std::sqrt(dot_n), 1e-8});
        worst = std::max(worst, std::sqrt(dot_diff) / scale);
    }
    return worst;
}

}  // namespace fw
