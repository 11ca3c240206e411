// Reverse-mode automatic differentiation over dense row-major f64 arrays.
//
// A Tensor is a shared handle to (shape, value, grad, requires_grad). Ops are
// free functions; while a Tape is alive on the current thread, any op whose
// inputs require grad records a backward closure on it. Tape::backward runs
// the closures in reverse, accumulating dLoss/dLeaf into every requires_grad
// leaf. One tape is single-threaded; independent tapes may live on
// independent threads (the active-tape pointer is thread_local).
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace eia::num {

struct ShapeMismatch : std::runtime_error {
    explicit ShapeMismatch(const std::string& what) : std::runtime_error("shape mismatch: " + what) {}
};
struct NotScalar : std::runtime_error {
    explicit NotScalar(const std::string& what) : std::runtime_error("not a scalar: " + what) {}
};
struct TargetOutOfVocab : std::runtime_error {
    explicit TargetOutOfVocab(const std::string& what) : std::runtime_error("target out of vocab: " + what) {}
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until first accumulation
    bool requires_grad = false;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> value, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t size() const { return d_->value.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::vector<double>& value() { return d_->value; }
    const std::vector<double>& value() const { return d_->value; }
    // Allocates a zero buffer on first touch.
    std::vector<double>& grad();
    bool has_grad() const { return !d_->grad.empty(); }
    void zero_grad();

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }

    double item() const;

    TensorData* data_ptr() const { return d_.get(); }
    std::shared_ptr<TensorData> handle() const { return d_; }

private:
    std::shared_ptr<TensorData> d_;
};

class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_step);
    // loss must be a scalar recorded on this tape; seeds d(loss)/d(loss)=1 and
    // runs nodes newest-first.
    void backward(const Tensor& loss);
    void clear();
    std::size_t node_count() const { return nodes_.size(); }

    static Tape* active();

private:
    std::vector<std::function<void()>> nodes_;
    Tape* prev_ = nullptr;
};

// ---- ops ----
Tensor matmul(const Tensor& a, const Tensor& b);           // {M,K}x{K,N} -> {M,N}
Tensor transpose(const Tensor& a);                         // {M,N} -> {N,M}
Tensor add(const Tensor& a, const Tensor& b);              // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);              // Hadamard
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_bias(const Tensor& m, const Tensor& bias);      // {M,N} + {N} per row
Tensor relu(const Tensor& a);
Tensor concat_rows(const std::vector<Tensor>& parts);      // rank-2, axis 0
Tensor concat_cols(const std::vector<Tensor>& parts);      // rank-2, axis 1
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);
Tensor reshape(const Tensor& a, Shape shape);
// out[i] = a.flat[idx[i]]; backward scatters with += (duplicates sum)
Tensor gather(const Tensor& a, std::vector<std::size_t> idx);
// copy of base with out.flat[dst] = patch.flat[src] for each (dst,src);
// gradient flows to patch only (base is treated as constant data)
Tensor overlay(const Tensor& base, const Tensor& patch,
               const std::vector<std::pair<std::size_t, std::size_t>>& dst_src);
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids); // {V,D},{L} -> {L,D}
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor softmax(const Tensor& x, int axis = -1);            // max-subtracted
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets); // mean NLL
Tensor sum_all(const Tensor& a);                           // -> {1}
Tensor clamp_min(const Tensor& a, double floor);

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h. Pure forward
// evaluations of f; does not touch any tape.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);
std::vector<double> finite_diff_at(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                   std::span<const std::size_t> coords, double h);

// ---- checkpoint format ----
// little-endian binary: magic "TFRG", u32 version, u32 tensor count, then per
// tensor: u32 name length, name bytes, u32 rank, u64 dims[], f64 payload.
void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

} // namespace eia::num
