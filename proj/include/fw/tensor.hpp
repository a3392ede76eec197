#pragma once
// Dense float32 tensors with reverse-mode autodiff.
//
// Ops compute values immediately. When a Graph is active (RAII scope) and an
// input tracks gradients, the op also records a backward closure on the tape;
// Graph::backward replays the tape in reverse and accumulates into .grad
// buffers. One graph per training thread; tensor values are treated as
// immutable once created, so sharing across threads for read is safe.
// Reductions (dot products, row statistics, losses) accumulate in double and
// round once on store.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fw/rng.hpp"

namespace fw {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, float value);
    static Tensor from(const Shape& shape, std::vector<float> values);
    // Leaf with requires_grad = true.
    static Tensor param(const Shape& shape, std::vector<float> values);
    // Xavier-uniform leaf: U(+-sqrt(6/(fan_in+fan_out))), requires_grad = true.
    static Tensor xavier(int fan_in, int fan_out, Rng& rng);

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int numel() const;
    int rows() const;  // 2-D only
    int cols() const;  // 2-D only

    float* data() { return data_->data(); }
    const float* data() const { return data_->data(); }
    std::vector<float>& values() { return *data_; }
    const std::vector<float>& values() const { return *data_; }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on);
    float* grad() { return grad_ ? grad_->data() : nullptr; }
    const float* grad() const { return grad_ ? grad_->data() : nullptr; }
    void zero_grad();

    // Same storage, gradient tracking off. Used to freeze parameters.
    Tensor detached() const;

    float item() const;  // numel == 1 only

    // Scalar at flat index (bounds-checked).
    float at(int i) const;

private:
    Shape shape_;
    std::shared_ptr<std::vector<float>> data_;
    std::shared_ptr<std::vector<float>> grad_;
    bool requires_grad_ = false;
};

// Tape of backward closures. Constructing a Graph makes it the active tape
// for the current thread; destruction restores the previous one.
class Graph {
public:
    Graph();
    ~Graph();
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Seeds d(loss)/d(loss) = 1, replays the tape in reverse, then clears it.
    // Rejects non-scalar losses.
    void backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }
    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

    static Graph* current();

private:
    std::vector<std::function<void()>> nodes_;
    Graph* prev_ = nullptr;
};

// ---- operations ----------------------------------------------------------
// Elementwise ops require exactly matching shapes (no broadcasting); shape
// errors name both operands.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);       // elementwise
Tensor scale(const Tensor& a, double s);            // scalar multiply

Tensor matmul(const Tensor& a, const Tensor& b);    // (m,k)x(k,n)
Tensor transpose(const Tensor& a);                  // 2-D
Tensor concat_cols(const Tensor& a, const Tensor& b);

// Rows of a (V,d) table selected by index; backward scatter-adds.
Tensor gather_rows(const Tensor& table, const std::vector<int>& indices);
// (1,d) or (d) row placed at row `row` of a zero (n_rows,d) matrix.
Tensor pad_row(const Tensor& row, int n_rows, int row_index);

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x*w + b
Tensor add_rowvec(const Tensor& x, const Tensor& v);               // v added to each row

Tensor gelu(const Tensor& x);      // tanh approximation
Tensor tanh_act(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias);

Tensor mse(const Tensor& a, const Tensor& b);       // mean squared error, scalar
Tensor reshape(const Tensor& a, const Shape& shape);

// ---- non-differentiable helpers ------------------------------------------

// Sinusoidal embedding of a scalar: interleaved sin/cos over geometrically
// spaced frequencies (0.5 .. 32 cycles over [0,1]). dim must be even.
Tensor sinusoidal_embedding(double t, int dim);

Tensor randn(const Shape& shape, Rng& rng);

double l2_norm(const Tensor& a);
double max_abs(const Tensor& a);
bool all_finite(const Tensor& a);
bool same_values(const Tensor& a, const Tensor& b);  // bitwise-equal payloads

// ---- gradient verification ------------------------------------------------
// Central differences against analytic gradients.
//   eval_loss:     pure forward pass, returns the scalar loss
//   compute_grads: zeroes grads, rebuilds the graph, runs backward
// Probes `probes_per_param` random coordinates of each listed parameter and
// returns, maximized over parameters, the relative disagreement of the probed
// gradient vectors: ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2).
double finite_difference_check(const std::function<double()>& eval_loss,
                               const std::function<void()>& compute_grads,
                               const std::vector<Tensor>& params,
                               double h = 1e-3,
                               int probes_per_param = 20,
                               std::uint64_t seed = 0);

}  // namespace fw
