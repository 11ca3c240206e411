#include "eia/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#if defined(EIA_HAVE_EIGEN)
#include <Eigen/Dense>
#endif

namespace eia::num {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream ss;
    ss << "{";
    for (std::size_t i = 0; i < s.size(); ++i) ss << (i ? "," : "") << s[i];
    ss << "}";
    return ss.str();
}

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    Tensor t;
    t.d_ = std::make_shared<TensorData>();
    t.d_->shape = std::move(shape);
    for (auto d : t.d_->shape)
        if (d == 0) throw ShapeMismatch("zero dimension in " + shape_str(t.d_->shape));
    t.d_->value.assign(shape_numel(t.d_->shape), v);
    t.d_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> value, bool requires_grad) {
    if (shape_numel(shape) != value.size())
        throw ShapeMismatch("from(): " + shape_str(shape) + " vs " + std::to_string(value.size()) + " values");
    Tensor t;
    t.d_ = std::make_shared<TensorData>();
    t.d_->shape = std::move(shape);
    t.d_->value = std::move(value);
    t.d_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from({1}, {v}, requires_grad);
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeMismatch("rows() on rank-" + std::to_string(rank()));
    return d_->shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeMismatch("cols() on rank-" + std::to_string(rank()));
    return d_->shape[1];
}

std::vector<double>& Tensor::grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->value.size(), 0.0);
    return d_->grad;
}

void Tensor::zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (size() != 1) throw NotScalar("item() on " + shape_str(shape()));
    return d_->value[0];
}

// ---- Tape ----

namespace {
thread_local Tape* g_active_tape = nullptr;

std::vector<double>& ensure_grad(const std::shared_ptr<TensorData>& d) {
    if (d->grad.empty()) d->grad.assign(d->value.size(), 0.0);
    return d->grad;
}

bool recording(std::initializer_list<const Tensor*> ins) {
    if (g_active_tape == nullptr) return false;
    for (const Tensor* t : ins)
        if (t->requires_grad()) return true;
    return false;
}
} // namespace

Tape::Tape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() {
    g_active_tape = prev_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_step) {
    nodes_.push_back(std::move(backward_step));
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) throw NotScalar("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    ensure_grad(loss.handle())[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void Tape::clear() { nodes_.clear(); }

// ---- op helpers ----

namespace {

using Pd = std::shared_ptr<TensorData>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor make_out(Shape shape, bool rg) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.set_requires_grad(rg);
    return t;
}

#if defined(EIA_HAVE_EIGEN)
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const EMat>;
using Map = Eigen::Map<EMat>;
#endif

// C += A(MxK) * B(KxN), optional transposes on A/B
void gemm_acc(const double* a, const double* b, double* c,
              std::size_t m, std::size_t k, std::size_t n, bool ta, bool tb) {
#if defined(EIA_HAVE_EIGEN)
    Map C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    if (!ta && !tb) {
        MapC A(a, m, k), B(b, k, n);
        C.noalias() += A * B;
    } else if (ta && !tb) {
        MapC A(a, k, m), B(b, k, n);
        C.noalias() += A.transpose() * B;
    } else if (!ta && tb) {
        MapC A(a, m, k), B(b, n, k);
        C.noalias() += A * B.transpose();
    } else {
        MapC A(a, k, m), B(b, n, k);
        C.noalias() += A.transpose() * B.transpose();
    }
#else
    auto ia = [&](std::size_t i, std::size_t p) { return ta ? p * m + i : i * k + p; };
    auto ib = [&](std::size_t p, std::size_t j) { return tb ? j * k + p : p * n + j; };
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[ia(i, p)];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[ib(p, j)];
        }
#endif
}

} // namespace

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw ShapeMismatch("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = make_out({m, n}, a.requires_grad() || b.requires_grad());
    gemm_acc(a.value().data(), b.value().data(), out.value().data(), m, k, n, false, false);
    if (recording({&a, &b})) {
        Pd pa = a.handle(), pb = b.handle(), po = out.handle();
        bool rga = a.requires_grad(), rgb = b.requires_grad();
        Tape::active()->record([pa, pb, po, m, k, n, rga, rgb] {
            const double* go = ensure_grad(po).data();
            if (rga) gemm_acc(go, pb->value.data(), ensure_grad(pa).data(), m, n, k, false, true);
            if (rgb) gemm_acc(pa->value.data(), go, ensure_grad(pb).data(), k, m, n, true, false);
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = make_out({n, m}, a.requires_grad());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out.value()[j * m + i] = a.value()[i * n + j];
    if (recording({&a})) {
        Pd pa = a.handle(), po = out.handle();
        Tape::active()->record([pa, po, m, n] {
            auto& ga = ensure_grad(pa);
            const auto& go = ensure_grad(po);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    ga[i * n + j] += go[j * m + i];
        });
    }
    return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    require_same_shape(a, b, name);
    Tensor out = make_out(a.shape(), a.requires_grad() || b.requires_grad());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.value()[i] = fwd(a.value()[i], b.value()[i]);
    if (recording({&a, &b})) {
        Pd pa = a.handle(), pb = b.handle(), po = out.handle();
        bool rga = a.requires_grad(), rgb = b.requires_grad();
        Tape::active()->record([pa, pb, po, n, rga, rgb, bwd] {
            const auto& go = ensure_grad(po);
            for (std::size_t i = 0; i < n; ++i) {
                auto [da, db] = bwd(pa->value[i], pb->value[i], po->value[i]);
                if (rga) ensure_grad(pa)[i] += go[i] * da;
                if (rgb) ensure_grad(pb)[i] += go[i] * db;
            }
        });
    }
    return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(a, b, "add",
        [](double x, double y) { return x + y; },
        [](double, double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(a, b, "sub",
        [](double x, double y) { return x - y; },
        [](double, double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(a, b, "mul",
        [](double x, double y) { return x * y; },
        [](double x, double y, double) { return std::pair<double, double>{y, x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_elementwise(a, b, "div",
        [](double x, double y) { return x / y; },
        [](double x, double y, double) {
            return std::pair<double, double>{1.0 / y, -x / (y * y)};
        });
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = make_out(a.shape(), a.requires_grad());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * s;
    if (recording({&a})) {
        Pd pa = a.handle(), po = out.handle();
        Tape::active()->record([pa, po, n, s] {
            auto& ga = ensure_grad(pa);
            const auto& go = ensure_grad(po);
            for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * s;
        });
    }
    return out;
}

Tensor add_bias(const Tensor& m, const Tensor& bias) {
    if (m.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != m.cols())
        throw ShapeMismatch("add_bias: " + shape_str(m.shape()) + " + " + shape_str(bias.shape()));
    const std::size_t r = m.rows(), c = m.cols();
    Tensor out = make_out({r, c}, m.requires_grad() || bias.requires_grad());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out.value()[i * c + j] = m.value()[i * c + j] + bias.value()[j];
    if (recording({&m, &bias})) {
        Pd pm = m.handle(), pb = bias.handle(), po = out.handle();
        bool rgm = m.requires_grad(), rgb = bias.requires_grad();
        Tape::active()->record([pm, pb, po, r, c, rgm, rgb] {
            const auto& go = ensure_grad(po);
            if (rgm) {
                auto& gm = ensure_grad(pm);
                for (std::size_t i = 0; i < r * c; ++i) gm[i] += go[i];
            }
            if (rgb) {
                auto& gb = ensure_grad(pb);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) gb[j] += go[i * c + j];
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = make_out(a.shape(), a.requires_grad());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
    if (recording({&a})) {
        Pd pa = a.handle(), po = out.handle();
        Tape::active()->record([pa, po, n] {
            auto& ga = ensure_grad(pa);
            const auto& go = ensure_grad(po);
            for (std::size_t i = 0; i < n; ++i)
                if (pa->value[i] > 0.0) ga[i] += go[i];
        });
    }
    return out;
}

namespace {

Tensor concat_axis(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeMismatch("concat: empty part list");
    const std::size_t other = axis == 0 ? parts[0].cols() : parts[0].rows();
    std::size_t total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.rank() != 2) throw ShapeMismatch("concat: rank-2 only");
        const std::size_t po = axis == 0 ? p.cols() : p.rows();
        if (po != other) throw ShapeMismatch("concat: mismatched off-axis dim");
        total += axis == 0 ? p.rows() : p.cols();
        rg = rg || p.requires_grad();
    }
    const std::size_t r = axis == 0 ? total : other;
    const std::size_t c = axis == 0 ? other : total;
    Tensor out = make_out({r, c}, rg);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t pr = p.rows(), pc = p.cols();
        if (axis == 0) {
            std::copy(p.value().begin(), p.value().end(), out.value().begin() + off * c);
            off += pr;
        } else {
            for (std::size_t i = 0; i < pr; ++i)
                std::copy(p.value().begin() + i * pc, p.value().begin() + (i + 1) * pc,
                          out.value().begin() + i * c + off);
            off += pc;
        }
    }
    bool rec = false;
    for (const auto& p : parts)
        if (Tape::active() && p.requires_grad()) rec = true;
    if (rec) {
        std::vector<Pd> ph;
        std::vector<bool> prg;
        std::vector<std::size_t> pr, pc;
        for (const auto& p : parts) {
            ph.push_back(p.handle());
            prg.push_back(p.requires_grad());
            pr.push_back(p.rows());
            pc.push_back(p.cols());
        }
        Pd po = out.handle();
        Tape::active()->record([ph, prg, pr, pc, po, c, axis] {
            const auto& go = ensure_grad(po);
            std::size_t off = 0;
            for (std::size_t k = 0; k < ph.size(); ++k) {
                if (axis == 0) {
                    if (prg[k]) {
                        auto& g = ensure_grad(ph[k]);
                        for (std::size_t i = 0; i < pr[k] * pc[k]; ++i) g[i] += go[off * c + i];
                    }
                    off += pr[k];
                } else {
                    if (prg[k]) {
                        auto& g = ensure_grad(ph[k]);
                        for (std::size_t i = 0; i < pr[k]; ++i)
                            for (std::size_t j = 0; j < pc[k]; ++j)
                                g[i * pc[k] + j] += go[i * c + off + j];
                    }
                    off += pc[k];
                }
            }
        });
    }
    return out;
}

} // namespace

Tensor concat_rows(const std::vector<Tensor>& parts) { return concat_axis(parts, 0); }
Tensor concat_cols(const std::vector<Tensor>& parts) { return concat_axis(parts, 1); }

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    if (a.rank() != 2 || r0 >= r1 || r1 > a.rows())
        throw ShapeMismatch("slice_rows [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " +
                            shape_str(a.shape()));
    const std::size_t c = a.cols(), m = r1 - r0;
    Tensor out = make_out({m, c}, a.requires_grad());
    std::copy(a.value().begin() + r0 * c, a.value().begin() + r1 * c, out.value().begin());
    if (recording({&a})) {
        Pd pa = a.handle(), po = out.handle();
        Tape::active()->record([pa, po, r0, m, c] {
            auto& ga = ensure_grad(pa);
            const auto& go = ensure_grad(po);
            for (std::size_t i = 0; i < m * c; ++i) ga[r0 * c + i] += go[i];
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    if (a.rank() != 2 || c0 >= c1 || c1 > a.cols())
        throw ShapeMismatch("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " +
                            shape_str(a.shape()));
    const std::size_t r = a.rows(), c = a.cols(), n = c1 - c0;
    Tensor out = make_out({r, n}, a.requires_grad());
    for (std::size_t i = 0; i < r; ++i)
        std::copy(a.value().begin() + i * c + c0, a.value().begin() + i * c + c1,
                  out.value().begin() + i * n);
    if (recording({&a})) {
        Pd pa = a.handle(), po = out.handle();
        Tape::active()->record([pa, po, r, c, c0, n] {
            auto& ga = ensure_grad(pa);
            const auto& go = ensure_grad(po);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * c + c0 + j] += go[i * n + j];
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.size())
        throw ShapeMismatch("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor out = make_out(std::move(shape), a.requires_grad());
    out.value() = a.value();
    if (recording({&a})) {
        Pd pa = a.handle(), po = out.handle();
        const std::size_t n = a.size();
        Tape::active()->record([pa, po, n] {
            auto& ga = ensure_grad(pa);
            const auto& go = ensure_grad(po);
            for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
        });
    }
    return out;
}

Tensor gather(const Tensor& a, std::vector<std::size_t> idx) {
    for (auto i : idx)
        if (i >= a.size()) throw ShapeMismatch("gather index " + std::to_string(i) + " out of range");
    Tensor out = make_out({idx.size()}, a.requires_grad());
    for (std::size_t i = 0; i < idx.size(); ++i) out.value()[i] = a.value()[idx[i]];
    if (recording({&a})) {
        Pd pa = a.handle(), po = out.handle();
        Tape::active()->record([pa, po, idx = std::move(idx)] {
            auto& ga = ensure_grad(pa);
            const auto& go = ensure_grad(po);
            for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += go[i];
        });
    }
    return out;
}

Tensor overlay(const Tensor& base, const Tensor& patch,
               const std::vector<std::pair<std::size_t, std::size_t>>& dst_src) {
    for (const auto& [d, s] : dst_src)
        if (d >= base.size() || s >= patch.size())
            throw ShapeMismatch("overlay map out of range");
    Tensor out = make_out(base.shape(), patch.requires_grad());
    out.value() = base.value();
    for (const auto& [d, s] : dst_src) out.value()[d] = patch.value()[s];
    if (recording({&patch})) {
        Pd pp = patch.handle(), po = out.handle();
        Tape::active()->record([pp, po, dst_src] {
            auto& gp = ensure_grad(pp);
            const auto& go = ensure_grad(po);
            for (const auto& [d, s] : dst_src) gp[s] += go[d];
        });
    }
    return out;
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
    if (table.rank() != 2) throw ShapeMismatch("embedding_lookup: table must be rank-2");
    const std::size_t v = table.rows(), d = table.cols();
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw ShapeMismatch("embedding_lookup: id " + std::to_string(id) + " out of " + std::to_string(v));
    Tensor out = make_out({ids.size(), d}, table.requires_grad());
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy(table.value().begin() + static_cast<std::size_t>(ids[i]) * d,
                  table.value().begin() + (static_cast<std::size_t>(ids[i]) + 1) * d,
                  out.value().begin() + i * d);
    if (recording({&table})) {
        Pd pt = table.handle(), po = out.handle();
        std::vector<int> ids_copy(ids.begin(), ids.end());
        Tape::active()->record([pt, po, ids_copy, d] {
            auto& gt = ensure_grad(pt);
            const auto& go = ensure_grad(po);
            for (std::size_t i = 0; i < ids_copy.size(); ++i)
                for (std::size_t j = 0; j < d; ++j)
                    gt[static_cast<std::size_t>(ids_copy[i]) * d + j] += go[i * d + j];
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1 ||
        gamma.shape()[0] != x.cols() || beta.shape()[0] != x.cols())
        throw ShapeMismatch("layer_norm: " + shape_str(x.shape()));
    const std::size_t r = x.rows(), c = x.cols();
    Tensor out = make_out({r, c}, x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    std::vector<double> xhat(r * c), inv_sd(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = x.value().data() + i * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(c);
        const double isd = 1.0 / std::sqrt(var + eps);
        inv_sd[i] = isd;
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (row[j] - mean) * isd;
            out.value()[i * c + j] = xhat[i * c + j] * gamma.value()[j] + beta.value()[j];
        }
    }
    if (recording({&x, &gamma, &beta})) {
        Pd px = x.handle(), pg = gamma.handle(), pb = beta.handle(), po = out.handle();
        bool rgx = x.requires_grad(), rgg = gamma.requires_grad(), rgb = beta.requires_grad();
        Tape::active()->record([px, pg, pb, po, r, c, rgx, rgg, rgb,
                                xhat = std::move(xhat), inv_sd = std::move(inv_sd)] {
            const auto& go = ensure_grad(po);
            for (std::size_t i = 0; i < r; ++i) {
                const double* gout = go.data() + i * c;
                const double* xh = xhat.data() + i * c;
                if (rgg || rgb) {
                    for (std::size_t j = 0; j < c; ++j) {
                        if (rgg) ensure_grad(pg)[j] += gout[j] * xh[j];
                        if (rgb) ensure_grad(pb)[j] += gout[j];
                    }
                }
                if (rgx) {
                    // dxhat = gout * gamma; dx = isd*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = gout[j] * pg->value[j];
                        m1 += dxh;
                        m2 += dxh * xh[j];
                    }
                    m1 /= static_cast<double>(c);
                    m2 /= static_cast<double>(c);
                    auto& gx = ensure_grad(px);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = gout[j] * pg->value[j];
                        gx[i * c + j] += inv_sd[i] * (dxh - m1 - xh[j] * m2);
                    }
                }
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    const int rk = static_cast<int>(x.rank());
    if (axis < 0) axis += rk;
    if (axis < 0 || axis >= rk) throw ShapeMismatch("softmax: bad axis");
    const std::size_t n_axis = x.shape()[static_cast<std::size_t>(axis)];
    std::size_t inner = 1, outer = 1;
    for (int i = 0; i < rk; ++i) {
        if (i < axis) outer *= x.shape()[static_cast<std::size_t>(i)];
        if (i > axis) inner *= x.shape()[static_cast<std::size_t>(i)];
    }
    Tensor out = make_out(x.shape(), x.requires_grad());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n_axis * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < n_axis; ++a) mx = std::max(mx, x.value()[base + a * inner]);
            double z = 0.0;
            for (std::size_t a = 0; a < n_axis; ++a) {
                const double e = std::exp(x.value()[base + a * inner] - mx);
                out.value()[base + a * inner] = e;
                z += e;
            }
            for (std::size_t a = 0; a < n_axis; ++a) out.value()[base + a * inner] /= z;
        }
    if (recording({&x})) {
        Pd px = x.handle(), po = out.handle();
        Tape::active()->record([px, po, outer, inner, n_axis] {
            auto& gx = ensure_grad(px);
            const auto& go = ensure_grad(po);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * n_axis * inner + in;
                    double dot = 0.0;
                    for (std::size_t a = 0; a < n_axis; ++a)
                        dot += go[base + a * inner] * po->value[base + a * inner];
                    for (std::size_t a = 0; a < n_axis; ++a) {
                        const std::size_t k = base + a * inner;
                        gx[k] += po->value[k] * (go[k] - dot);
                    }
                }
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
    if (logits.rank() != 2 || logits.rows() != targets.size())
        throw ShapeMismatch("cross_entropy: " + shape_str(logits.shape()) + " vs " +
                            std::to_string(targets.size()) + " targets");
    const std::size_t r = logits.rows(), v = logits.cols();
    for (int t : targets)
        if (t < 0 || static_cast<std::size_t>(t) >= v)
            throw TargetOutOfVocab(std::to_string(t) + " with vocab " + std::to_string(v));
    std::vector<double> probs(r * v);
    double nll = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = logits.value().data() + i * v;
        double mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            probs[i * v + j] = std::exp(row[j] - mx);
            z += probs[i * v + j];
        }
        for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
        nll += std::log(z) + mx - row[static_cast<std::size_t>(targets[i])];
    }
    Tensor out = Tensor::scalar(nll / static_cast<double>(r));
    out.set_requires_grad(logits.requires_grad());
    if (recording({&logits})) {
        Pd pl = logits.handle(), po = out.handle();
        std::vector<int> tg(targets.begin(), targets.end());
        Tape::active()->record([pl, po, r, v, tg, probs = std::move(probs)] {
            const double g = ensure_grad(po)[0] / static_cast<double>(r);
            auto& gl = ensure_grad(pl);
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < v; ++j) gl[i * v + j] += g * probs[i * v + j];
                gl[i * v + static_cast<std::size_t>(tg[i])] -= g;
            }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double x : a.value()) s += x;
    Tensor out = Tensor::scalar(s);
    out.set_requires_grad(a.requires_grad());
    if (recording({&a})) {
        Pd pa = a.handle(), po = out.handle();
        Tape::active()->record([pa, po] {
            const double g = ensure_grad(po)[0];
            auto& ga = ensure_grad(pa);
            for (auto& x : ga) x += g;
        });
    }
    return out;
}

Tensor clamp_min(const Tensor& a, double floor) {
    Tensor out = make_out(a.shape(), a.requires_grad());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.value()[i] = std::max(a.value()[i], floor);
    if (recording({&a})) {
        Pd pa = a.handle(), po = out.handle();
        Tape::active()->record([pa, po, n, floor] {
            auto& ga = ensure_grad(pa);
            const auto& go = ensure_grad(po);
            for (std::size_t i = 0; i < n; ++i)
                if (pa->value[i] > floor) ga[i] += go[i];
        });
    }
    return out;
}

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (h <= 0.0) throw ShapeMismatch("finite_diff_gradient: h must be > 0");
    Tensor g = Tensor::zeros(x.shape());
    Tensor probe = Tensor::from(x.shape(), x.value());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe.value()[i];
        probe.value()[i] = orig + h;
        const double fp = f(probe);
        probe.value()[i] = orig - h;
        const double fm = f(probe);
        probe.value()[i] = orig;
        g.value()[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

std::vector<double> finite_diff_at(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                   std::span<const std::size_t> coords, double h) {
    if (h <= 0.0) throw ShapeMismatch("finite_diff_at: h must be > 0");
    std::vector<double> g;
    g.reserve(coords.size());
    Tensor probe = Tensor::from(x.shape(), x.value());
    for (std::size_t i : coords) {
        const double orig = probe.value()[i];
        probe.value()[i] = orig + h;
        const double fp = f(probe);
        probe.value()[i] = orig - h;
        const double fm = f(probe);
        probe.value()[i] = orig;
        g.push_back((fp - fm) / (2.0 * h));
    }
    return g;
}

// ---- checkpoints ----

namespace {
static_assert(sizeof(double) == 8);

template <typename T>
void put(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}
} // namespace

void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& tensors) {
    static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian host");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.write("TFRG", 4);
    put<std::uint32_t>(f, 1);
    put<std::uint32_t>(f, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put<std::uint32_t>(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(f, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put<std::uint64_t>(f, static_cast<std::uint64_t>(d));
        f.write(reinterpret_cast<const char*>(t.value().data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "TFRG", 4) != 0) throw std::runtime_error(path + ": bad checkpoint magic");
    const auto version = get<std::uint32_t>(f);
    if (version != 1) throw std::runtime_error(path + ": unsupported checkpoint version");
    const auto count = get<std::uint32_t>(f);
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = get<std::uint32_t>(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        const auto rank = get<std::uint32_t>(f);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(f));
        std::vector<double> value(shape_numel(shape));
        f.read(reinterpret_cast<char*>(value.data()),
               static_cast<std::streamsize>(value.size() * sizeof(double)));
        if (!f) throw std::runtime_error(path + ": truncated checkpoint");
        out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(value)));
    }
    return out;
}

} // namespace eia::num
