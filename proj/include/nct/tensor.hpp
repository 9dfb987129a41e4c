#pragma once

// Minimal reverse-mode autodiff over dense double tensors (rank 0..2 is all
// the model needs). Ops record their backward closures on an explicit Tape;
// Tape::backward replays them in reverse execution order, which is a valid
// reverse-topological order, accumulating gradients additively at fan-out.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nct {

using Shape = std::vector<std::size_t>;

// Probabilities are clamped to this floor before any log.
inline constexpr double kProbFloor = 1e-12;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same layout as data
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->data.assign(shape_numel(n->shape), 0.0);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<double> values,
                       bool requires_grad = false) {
        if (shape_numel(shape) != values.size())
            throw std::invalid_argument("Tensor::from: " + shape_str(shape) +
                                        " does not hold " +
                                        std::to_string(values.size()) + " values");
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->data = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from({}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return check()->shape; }
    std::size_t rank() const { return check()->shape.size(); }
    std::size_t numel() const { return check()->data.size(); }
    std::size_t rows() const { return rank() == 2 ? shape()[0] : 1; }
    std::size_t cols() const { return shape().empty() ? 1 : shape().back(); }

    bool requires_grad() const { return check()->requires_grad; }
    void set_requires_grad(bool b) { check()->requires_grad = b; }

    double* data() { return check()->data.data(); }
    const double* data() const { return check()->data.data(); }
    std::vector<double>& vec() { return check()->data; }
    const std::vector<double>& vec() const { return check()->data; }

    double* grad() {
        check()->ensure_grad();
        return node_->grad.data();
    }
    const std::vector<double>& grad_vec() {
        check()->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        check();
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    double item() const {
        if (numel() != 1)
            throw std::invalid_argument("Tensor::item: tensor " +
                                        shape_str(shape()) + " is not a scalar");
        return node_->data[0];
    }

    double at(std::size_t r, std::size_t c) const {
        if (rank() != 2 || r >= shape()[0] || c >= shape()[1])
            throw std::out_of_range("Tensor::at(" + std::to_string(r) + "," +
                                    std::to_string(c) + ") on " + shape_str(shape()));
        return node_->data[r * shape()[1] + c];
    }

    const std::shared_ptr<TensorNode>& node() const { return check(), node_; }

  private:
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
    const std::shared_ptr<TensorNode>& check() const {
        if (!node_) throw std::invalid_argument("use of undefined Tensor");
        return node_;
    }
    std::shared_ptr<TensorNode> node_;
};

inline Tensor randn(Shape shape, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v));
}

// Boolean keep-mask, not differentiable. Either the exact shape of the tensor
// it masks or rank-1 broadcast over rows.
struct BoolMask {
    Shape shape;
    std::vector<std::uint8_t> keep;

    static BoolMask ones(Shape s) {
        BoolMask m;
        m.keep.assign(shape_numel(s), 1);
        m.shape = std::move(s);
        return m;
    }
};

class Tape {
  public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    void set_recording(bool b) { recording_ = b; }
    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    void record(const std::shared_ptr<TensorNode>& out,
                std::function<void()> backward_fn) {
        entries_.push_back({out, std::move(backward_fn)});
    }

    // Seeds d(root)/d(root) = 1 and replays recorded ops newest-first, a
    // valid reverse-topological order. Grad buffers of op outputs are
    // scratch: they are zeroed before each replay, so repeated backward
    // calls accumulate additively into leaf (input/parameter) gradients
    // only. Entries off root's ancestry contribute zero because their
    // output grads stay zero and every rule is linear in the output grad.
    void backward(const Tensor& root) {
        if (root.numel() != 1)
            throw std::invalid_argument("Tape::backward: root must be scalar, got " +
                                        shape_str(root.shape()));
        if (!root.requires_grad())
            throw std::invalid_argument("Tape::backward: root does not require grad");
        for (Entry& e : entries_) {
            e.out->ensure_grad();
            std::fill(e.out->grad.begin(), e.out->grad.end(), 0.0);
        }
        root.node()->ensure_grad();
        root.node()->grad[0] += 1.0;
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->fn();
    }

  private:
    struct Entry {
        std::shared_ptr<TensorNode> out;
        std::function<void()> fn;
    };
    bool recording_;
    std::vector<Entry> entries_;
};

namespace detail {

inline Tensor make_out(Shape shape, bool requires_grad, Tape& tape) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    if (requires_grad && tape.recording()) t.node()->ensure_grad();
    return t;
}

inline void want(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

// ---- elementwise and broadcast arithmetic ----------------------------------

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::want(a.shape() == b.shape(), "add: shape mismatch " +
                 shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = detail::make_out(a.shape(), rg, tape);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
    if (rg && tape.recording()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape.record(on, [an, bn, on] {
            const std::size_t n = on->data.size();
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

// matrix (R x C) plus row vector (C), broadcast over rows
inline Tensor add_rowwise(Tape& tape, const Tensor& m, const Tensor& v) {
    detail::want(m.rank() == 2 && v.rank() == 1 && m.shape()[1] == v.shape()[0],
                 "add_rowwise: want (R,C)+(C), got " + shape_str(m.shape()) +
                 " + " + shape_str(v.shape()));
    bool rg = m.requires_grad() || v.requires_grad();
    Tensor out = detail::make_out(m.shape(), rg, tape);
    const std::size_t R = m.shape()[0], C = m.shape()[1];
    const double* pm = m.data();
    const double* pv = v.data();
    double* po = out.data();
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) po[i * C + j] = pm[i * C + j] + pv[j];
    if (rg && tape.recording()) {
        auto mn = m.node(), vn = v.node(), on = out.node();
        tape.record(on, [mn, vn, on, R, C] {
            if (mn->requires_grad) {
                mn->ensure_grad();
                for (std::size_t i = 0; i < R * C; ++i) mn->grad[i] += on->grad[i];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (std::size_t i = 0; i < R; ++i)
                    for (std::size_t j = 0; j < C; ++j)
                        vn->grad[j] += on->grad[i * C + j];
            }
        });
    }
    return out;
}

// out = scale * x + shift, with compile-time-constant scalars
inline Tensor affine(Tape& tape, const Tensor& x, double scale, double shift) {
    bool rg = x.requires_grad();
    Tensor out = detail::make_out(x.shape(), rg, tape);
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = scale * px[i] + shift;
    if (rg && tape.recording()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on, scale] {
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->data.size(); ++i)
                xn->grad[i] += scale * on->grad[i];
        });
    }
    return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::want(a.shape() == b.shape(), "mul: shape mismatch " +
                 shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = detail::make_out(a.shape(), rg, tape);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
    if (rg && tape.recording()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape.record(on, [an, bn, on] {
            const std::size_t n = on->data.size();
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    an->grad[i] += bn->data[i] * on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    bn->grad[i] += an->data[i] * on->grad[i];
            }
        });
    }
    return out;
}

// ---- matrix products --------------------------------------------------------

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::want(a.rank() == 2 && b.rank() == 2 && a.shape()[1] == b.shape()[0],
                 "matmul: incompatible " + shape_str(a.shape()) + " x " +
                 shape_str(b.shape()));
    const std::size_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = detail::make_out({M, N}, rg, tape);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t l = 0; l < K; ++l) {
            const double ail = pa[i * K + l];
            if (ail == 0.0) continue;
            const double* brow = pb + l * N;
            double* orow = po + i * N;
            for (std::size_t j = 0; j < N; ++j) orow[j] += ail * brow[j];
        }
    if (rg && tape.recording()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape.record(on, [an, bn, on, M, K, N] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t j = 0; j < N; ++j) {
                        const double g = on->grad[i * N + j];
                        if (g == 0.0) continue;
                        for (std::size_t l = 0; l < K; ++l)
                            an->grad[i * K + l] += g * bn->data[l * N + j];
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t l = 0; l < K; ++l) {
                        const double av = an->data[i * K + l];
                        if (av == 0.0) continue;
                        for (std::size_t j = 0; j < N; ++j)
                            bn->grad[l * N + j] += av * on->grad[i * N + j];
                    }
            }
        });
    }
    return out;
}

// out = a * b^T; a is (M,K), b is (N,K). Attention scores want this layout.
inline Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::want(a.rank() == 2 && b.rank() == 2 && a.shape()[1] == b.shape()[1],
                 "matmul_nt: incompatible " + shape_str(a.shape()) + " x " +
                 shape_str(b.shape()) + "^T");
    const std::size_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[0];
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = detail::make_out({M, N}, rg, tape);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            double acc = 0.0;
            const double* arow = pa + i * K;
            const double* brow = pb + j * K;
            for (std::size_t l = 0; l < K; ++l) acc += arow[l] * brow[l];
            po[i * N + j] = acc;
        }
    if (rg && tape.recording()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape.record(on, [an, bn, on, M, K, N] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t j = 0; j < N; ++j) {
                        const double g = on->grad[i * N + j];
                        if (g == 0.0) continue;
                        for (std::size_t l = 0; l < K; ++l)
                            an->grad[i * K + l] += g * bn->data[j * K + l];
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t j = 0; j < N; ++j) {
                        const double g = on->grad[i * N + j];
                        if (g == 0.0) continue;
                        for (std::size_t l = 0; l < K; ++l)
                            bn->grad[j * K + l] += g * an->data[i * K + l];
                    }
            }
        });
    }
    return out;
}

// ---- structural ops ---------------------------------------------------------

inline Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t r0,
                         std::size_t nrows) {
    detail::want(x.rank() == 2, "slice_rows: want rank 2, got " +
                 shape_str(x.shape()));
    const std::size_t R = x.shape()[0], C = x.shape()[1];
    detail::want(r0 + nrows <= R, "slice_rows: [" + std::to_string(r0) + "," +
                 std::to_string(r0 + nrows) + ") out of " + std::to_string(R) +
                 " rows");
    bool rg = x.requires_grad();
    Tensor out = detail::make_out({nrows, C}, rg, tape);
    std::copy(x.data() + r0 * C, x.data() + (r0 + nrows) * C, out.data());
    if (rg && tape.recording()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on, r0, nrows, C] {
            xn->ensure_grad();
            for (std::size_t i = 0; i < nrows * C; ++i)
                xn->grad[r0 * C + i] += on->grad[i];
        });
    }
    return out;
}

inline Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t c0,
                         std::size_t ncols) {
    detail::want(x.rank() == 2, "slice_cols: want rank 2, got " +
                 shape_str(x.shape()));
    const std::size_t R = x.shape()[0], C = x.shape()[1];
    detail::want(c0 + ncols <= C, "slice_cols: [" + std::to_string(c0) + "," +
                 std::to_string(c0 + ncols) + ") out of " + std::to_string(C) +
                 " cols");
    bool rg = x.requires_grad();
    Tensor out = detail::make_out({R, ncols}, rg, tape);
    for (std::size_t i = 0; i < R; ++i)
        std::copy(x.data() + i * C + c0, x.data() + i * C + c0 + ncols,
                  out.data() + i * ncols);
    if (rg && tape.recording()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on, c0, ncols, R, C] {
            xn->ensure_grad();
            for (std::size_t i = 0; i < R; ++i)
                for (std::size_t j = 0; j < ncols; ++j)
                    xn->grad[i * C + c0 + j] += on->grad[i * ncols + j];
        });
    }
    return out;
}

// Concatenate rank-1 tensors end to end, or rank-2 tensors along axis 0/1.
inline Tensor concat(Tape& tape, const std::vector<Tensor>& parts,
                     std::size_t axis) {
    detail::want(!parts.empty(), "concat: no parts");
    const std::size_t rank = parts[0].rank();
    detail::want(rank == 1 || rank == 2, "concat: want rank 1 or 2");
    detail::want(axis < rank, "concat: axis " + std::to_string(axis) +
                 " out of rank " + std::to_string(rank));
    bool rg = false;
    for (const Tensor& p : parts) {
        detail::want(p.rank() == rank, "concat: mixed ranks");
        rg = rg || p.requires_grad();
    }
    Shape oshape;
    if (rank == 1) {
        std::size_t total = 0;
        for (const Tensor& p : parts) total += p.shape()[0];
        oshape = {total};
    } else {
        std::size_t other = parts[0].shape()[1 - axis];
        std::size_t total = 0;
        for (const Tensor& p : parts) {
            detail::want(p.shape()[1 - axis] == other,
                         "concat: off-axis size mismatch");
            total += p.shape()[axis];
        }
        oshape = axis == 0 ? Shape{total, other} : Shape{other, total};
    }
    Tensor out = detail::make_out(oshape, rg, tape);
    if (rank == 1 || axis == 0) {
        std::size_t off = 0;
        for (const Tensor& p : parts) {
            std::copy(p.data(), p.data() + p.numel(), out.data() + off);
            off += p.numel();
        }
    } else {
        const std::size_t R = oshape[0], OC = oshape[1];
        std::size_t coff = 0;
        for (const Tensor& p : parts) {
            const std::size_t pc = p.shape()[1];
            for (std::size_t i = 0; i < R; ++i)
                std::copy(p.data() + i * pc, p.data() + (i + 1) * pc,
                          out.data() + i * OC + coff);
            coff += pc;
        }
    }
    if (rg && tape.recording()) {
        std::vector<detail::NodePtr> pn;
        pn.reserve(parts.size());
        for (const Tensor& p : parts) pn.push_back(p.node());
        auto on = out.node();
        if (rank == 1 || axis == 0) {
            tape.record(on, [pn, on] {
                std::size_t off = 0;
                for (auto& n : pn) {
                    if (n->requires_grad) {
                        n->ensure_grad();
                        for (std::size_t i = 0; i < n->data.size(); ++i)
                            n->grad[i] += on->grad[off + i];
                    }
                    off += n->data.size();
                }
            });
        } else {
            const std::size_t R = oshape[0], OC = oshape[1];
            tape.record(on, [pn, on, R, OC] {
                std::size_t coff = 0;
                for (auto& n : pn) {
                    const std::size_t pc = n->shape[1];
                    if (n->requires_grad) {
                        n->ensure_grad();
                        for (std::size_t i = 0; i < R; ++i)
                            for (std::size_t j = 0; j < pc; ++j)
                                n->grad[i * pc + j] += on->grad[i * OC + coff + j];
                    }
                    coff += pc;
                }
            });
        }
    }
    return out;
}

// Gather rows of an embedding table; backward scatter-adds into the table.
inline Tensor embedding_lookup(Tape& tape, const Tensor& table,
                               const std::vector<int>& ids,
                               const std::string& table_name) {
    detail::want(table.rank() == 2, "embedding_lookup: table " + table_name +
                 " must be rank 2");
    const std::size_t V = table.shape()[0], D = table.shape()[1];
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V)
            throw std::out_of_range("embedding_lookup: id " +
                                    std::to_string(ids[i]) + " at position " +
                                    std::to_string(i) + " outside table " +
                                    table_name + " of size " + std::to_string(V));
    bool rg = table.requires_grad();
    Tensor out = detail::make_out({ids.size(), D}, rg, tape);
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy(table.data() + static_cast<std::size_t>(ids[i]) * D,
                  table.data() + (static_cast<std::size_t>(ids[i]) + 1) * D,
                  out.data() + i * D);
    if (rg && tape.recording()) {
        auto tn = table.node(), on = out.node();
        tape.record(on, [tn, on, ids, D] {
            tn->ensure_grad();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const std::size_t r = static_cast<std::size_t>(ids[i]);
                for (std::size_t j = 0; j < D; ++j)
                    tn->grad[r * D + j] += on->grad[i * D + j];
            }
        });
    }
    return out;
}

// ---- nonlinearities ----------------------------------------------------------

inline Tensor relu(Tape& tape, const Tensor& x) {
    bool rg = x.requires_grad();
    Tensor out = detail::make_out(x.shape(), rg, tape);
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
    if (rg && tape.recording()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on] {
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->data.size(); ++i)
                if (xn->data[i] > 0.0) xn->grad[i] += on->grad[i];
        });
    }
    return out;
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) {
    bool rg = x.requires_grad();
    Tensor out = detail::make_out(x.shape(), rg, tape);
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i)
        po[i] = 1.0 / (1.0 + std::exp(-px[i]));
    if (rg && tape.recording()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on] {
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->data.size(); ++i) {
                const double s = on->data[i];
                xn->grad[i] += s * (1.0 - s) * on->grad[i];
            }
        });
    }
    return out;
}

// ln(max(x, kProbFloor)); gradient is zero where the clamp is active
inline Tensor log_floor(Tape& tape, const Tensor& x) {
    bool rg = x.requires_grad();
    Tensor out = detail::make_out(x.shape(), rg, tape);
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i)
        po[i] = std::log(px[i] > kProbFloor ? px[i] : kProbFloor);
    if (rg && tape.recording()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on] {
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->data.size(); ++i)
                if (xn->data[i] > kProbFloor)
                    xn->grad[i] += on->grad[i] / xn->data[i];
        });
    }
    return out;
}

// ---- softmax / normalization ---------------------------------------------------

// Row-wise softmax over the last axis with an optional keep-mask. Masked
// positions get exactly zero probability. The mask may match the tensor's
// shape or be rank-1 over columns (broadcast to every row). With a vacuous
// mask (or nullptr) the arithmetic is bit-identical to unmasked softmax.
inline Tensor masked_softmax(Tape& tape, const Tensor& x, const BoolMask* mask) {
    detail::want(x.rank() == 1 || x.rank() == 2,
                 "masked_softmax: want rank 1 or 2, got " + shape_str(x.shape()));
    const std::size_t R = x.rank() == 2 ? x.shape()[0] : 1;
    const std::size_t C = x.shape().back();
    const std::uint8_t* mrow = nullptr;
    bool broadcast = false;
    if (mask) {
        if (mask->shape == x.shape()) {
            broadcast = false;
        } else if (mask->shape.size() == 1 && mask->shape[0] == C) {
            broadcast = true;
        } else {
            throw std::invalid_argument("masked_softmax: mask " +
                                        shape_str(mask->shape) +
                                        " does not fit logits " +
                                        shape_str(x.shape()));
        }
        mrow = mask->keep.data();
    }
    bool rg = x.requires_grad();
    Tensor out = detail::make_out(x.shape(), rg, tape);
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < R; ++i) {
        const std::uint8_t* km = mrow ? (broadcast ? mrow : mrow + i * C) : nullptr;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < C; ++j)
            if ((!km || km[j]) && px[i * C + j] > mx) mx = px[i * C + j];
        if (mx == -std::numeric_limits<double>::infinity())
            throw std::invalid_argument("masked_softmax: row " + std::to_string(i) +
                                        " is fully masked");
        double sum = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            const double e = (!km || km[j]) ? std::exp(px[i * C + j] - mx) : 0.0;
            po[i * C + j] = e;
            sum += e;
        }
        for (std::size_t j = 0; j < C; ++j) po[i * C + j] /= sum;
    }
    if (rg && tape.recording()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on, R, C] {
            xn->ensure_grad();
            for (std::size_t i = 0; i < R; ++i) {
                double dotv = 0.0;
                for (std::size_t j = 0; j < C; ++j)
                    dotv += on->grad[i * C + j] * on->data[i * C + j];
                for (std::size_t j = 0; j < C; ++j) {
                    const double p = on->data[i * C + j];
                    if (p != 0.0)
                        xn->grad[i * C + j] += p * (on->grad[i * C + j] - dotv);
                }
            }
        });
    }
    return out;
}

inline Tensor softmax(Tape& tape, const Tensor& x) {
    return masked_softmax(tape, x, nullptr);
}

// Layer normalization over the last axis with learnable gain/bias.
inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps = 1e-6) {
    detail::want(x.rank() == 1 || x.rank() == 2, "layer_norm: want rank 1 or 2");
    const std::size_t R = x.rank() == 2 ? x.shape()[0] : 1;
    const std::size_t C = x.shape().back();
    detail::want(gain.rank() == 1 && gain.shape()[0] == C &&
                 bias.rank() == 1 && bias.shape()[0] == C,
                 "layer_norm: gain/bias must be rank 1 of size " +
                 std::to_string(C));
    bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    Tensor out = detail::make_out(x.shape(), rg, tape);
    std::vector<double> xhat(R * C);
    std::vector<double> inv_sigma(R);
    const double* px = x.data();
    const double* pg = gain.data();
    const double* pb = bias.data();
    double* po = out.data();
    for (std::size_t i = 0; i < R; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < C; ++j) mu += px[i * C + j];
        mu /= static_cast<double>(C);
        double var = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            const double d = px[i * C + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(C);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[i] = is;
        for (std::size_t j = 0; j < C; ++j) {
            const double xh = (px[i * C + j] - mu) * is;
            xhat[i * C + j] = xh;
            po[i * C + j] = pg[j] * xh + pb[j];
        }
    }
    if (rg && tape.recording()) {
        auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
        tape.record(on, [xn, gn, bn, on, R, C, xhat = std::move(xhat),
                     inv_sigma = std::move(inv_sigma)] {
            for (std::size_t i = 0; i < R; ++i) {
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (std::size_t j = 0; j < C; ++j)
                        gn->grad[j] += on->grad[i * C + j] * xhat[i * C + j];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (std::size_t j = 0; j < C; ++j)
                        bn->grad[j] += on->grad[i * C + j];
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    double m1 = 0.0, m2 = 0.0;  // mean(dxh), mean(dxh * xh)
                    for (std::size_t j = 0; j < C; ++j) {
                        const double dxh = on->grad[i * C + j] * gn->data[j];
                        m1 += dxh;
                        m2 += dxh * xhat[i * C + j];
                    }
                    m1 /= static_cast<double>(C);
                    m2 /= static_cast<double>(C);
                    for (std::size_t j = 0; j < C; ++j) {
                        const double dxh = on->grad[i * C + j] * gn->data[j];
                        xn->grad[i * C + j] +=
                            inv_sigma[i] * (dxh - m1 - xhat[i * C + j] * m2);
                    }
                }
            }
        });
    }
    return out;
}

// ---- reductions --------------------------------------------------------------

inline Tensor sum(Tape& tape, const Tensor& x) {
    bool rg = x.requires_grad();
    Tensor out = detail::make_out({}, rg, tape);
    double acc = 0.0;
    const double* px = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i) acc += px[i];
    out.data()[0] = acc;
    if (rg && tape.recording()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on] {
            xn->ensure_grad();
            for (std::size_t i = 0; i < xn->data.size(); ++i)
                xn->grad[i] += on->grad[0];
        });
    }
    return out;
}

// Mean of a rank-2 tensor along the given axis (0: over rows, 1: over cols).
inline Tensor mean_axis(Tape& tape, const Tensor& x, std::size_t axis) {
    detail::want(x.rank() == 2, "mean_axis: want rank 2, got " +
                 shape_str(x.shape()));
    detail::want(axis < 2, "mean_axis: axis out of range");
    const std::size_t R = x.shape()[0], C = x.shape()[1];
    bool rg = x.requires_grad();
    Tensor out = detail::make_out({axis == 0 ? C : R}, rg, tape);
    const double* px = x.data();
    double* po = out.data();
    if (axis == 0) {
        for (std::size_t j = 0; j < C; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < R; ++i) acc += px[i * C + j];
            po[j] = acc / static_cast<double>(R);
        }
    } else {
        for (std::size_t i = 0; i < R; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < C; ++j) acc += px[i * C + j];
            po[i] = acc / static_cast<double>(C);
        }
    }
    if (rg && tape.recording()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on, R, C, axis] {
            xn->ensure_grad();
            if (axis == 0) {
                const double inv = 1.0 / static_cast<double>(R);
                for (std::size_t i = 0; i < R; ++i)
                    for (std::size_t j = 0; j < C; ++j)
                        xn->grad[i * C + j] += on->grad[j] * inv;
            } else {
                const double inv = 1.0 / static_cast<double>(C);
                for (std::size_t i = 0; i < R; ++i)
                    for (std::size_t j = 0; j < C; ++j)
                        xn->grad[i * C + j] += on->grad[i] * inv;
            }
        });
    }
    return out;
}

inline Tensor dot(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::want(a.rank() == 1 && b.rank() == 1 && a.shape() == b.shape(),
                 "dot: want equal rank-1 shapes, got " + shape_str(a.shape()) +
                 " . " + shape_str(b.shape()));
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = detail::make_out({}, rg, tape);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.data()[i] * b.data()[i];
    out.data()[0] = acc;
    if (rg && tape.recording()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape.record(on, [an, bn, on] {
            const double g = on->grad[0];
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < an->data.size(); ++i)
                    an->grad[i] += g * bn->data[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < bn->data.size(); ++i)
                    bn->grad[i] += g * an->data[i];
            }
        });
    }
    return out;
}

// ---- regularization ------------------------------------------------------------

// Inverted dropout: keeps each element with probability 1-rate and scales by
// 1/(1-rate). Identity (same tensor handle, no tape entry) when not training.
inline Tensor dropout(Tape& tape, const Tensor& x, double rate,
                      std::mt19937_64& rng, bool training) {
    detail::want(rate >= 0.0 && rate < 1.0,
                 "dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    bool rg = x.requires_grad();
    Tensor out = detail::make_out(x.shape(), rg, tape);
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<std::uint8_t> keep(x.numel());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < x.numel(); ++i) keep[i] = u(rng) >= rate ? 1 : 0;
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < x.numel(); ++i)
        po[i] = keep[i] ? px[i] * keep_scale : 0.0;
    if (rg && tape.recording()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on, keep = std::move(keep), keep_scale] {
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->data.size(); ++i)
                if (keep[i]) xn->grad[i] += on->grad[i] * keep_scale;
        });
    }
    return out;
}

// ---- losses ---------------------------------------------------------------------

// Label-smoothed cross entropy of one probability row against a gold index:
//   q_k = eps/V + (1-eps) * [k == gold],  loss = -sum_k q_k ln(max(p_k, floor))
inline Tensor cross_entropy_smoothed(Tape& tape, const Tensor& probs,
                                     std::size_t gold, double eps) {
    detail::want(probs.rank() == 1, "cross_entropy_smoothed: want rank 1 probs");
    const std::size_t V = probs.shape()[0];
    detail::want(gold < V, "cross_entropy_smoothed: gold index " +
                 std::to_string(gold) + " outside vocab " + std::to_string(V));
    detail::want(eps >= 0.0 && eps < 1.0, "cross_entropy_smoothed: bad eps");
    bool rg = probs.requires_grad();
    Tensor out = detail::make_out({}, rg, tape);
    const double uni = eps / static_cast<double>(V);
    const double* pp = probs.data();
    double loss = 0.0;
    for (std::size_t k = 0; k < V; ++k) {
        const double q = uni + (k == gold ? 1.0 - eps : 0.0);
        loss -= q * std::log(pp[k] > kProbFloor ? pp[k] : kProbFloor);
    }
    out.data()[0] = loss;
    if (rg && tape.recording()) {
        auto pn = probs.node(), on = out.node();
        tape.record(on, [pn, on, gold, uni, eps, V] {
            pn->ensure_grad();
            const double g = on->grad[0];
            for (std::size_t k = 0; k < V; ++k) {
                const double q = uni + (k == gold ? 1.0 - eps : 0.0);
                if (pn->data[k] > kProbFloor)
                    pn->grad[k] -= g * q / pn->data[k];
            }
        });
    }
    return out;
}

// Sum of per-row smoothed cross entropies for a (T,V) probability matrix.
// Same formula as cross_entropy_smoothed, batched into one tape entry.
inline Tensor sequence_cross_entropy_sum(Tape& tape, const Tensor& probs,
                                         const std::vector<int>& gold,
                                         double eps) {
    detail::want(probs.rank() == 2, "sequence_cross_entropy_sum: want rank 2");
    const std::size_t T = probs.shape()[0], V = probs.shape()[1];
    detail::want(gold.size() == T, "sequence_cross_entropy_sum: " +
                 std::to_string(gold.size()) + " gold ids for " +
                 std::to_string(T) + " rows");
    for (std::size_t t = 0; t < T; ++t)
        detail::want(gold[t] >= 0 && static_cast<std::size_t>(gold[t]) < V,
                     "sequence_cross_entropy_sum: gold id out of vocab at row " +
                     std::to_string(t));
    bool rg = probs.requires_grad();
    Tensor out = detail::make_out({}, rg, tape);
    const double uni = eps / static_cast<double>(V);
    const double* pp = probs.data();
    double loss = 0.0;
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < V; ++k) {
            const double q =
                uni + (k == static_cast<std::size_t>(gold[t]) ? 1.0 - eps : 0.0);
            const double p = pp[t * V + k];
            loss -= q * std::log(p > kProbFloor ? p : kProbFloor);
        }
    out.data()[0] = loss;
    if (rg && tape.recording()) {
        auto pn = probs.node(), on = out.node();
        tape.record(on, [pn, on, gold, uni, eps, T, V] {
            pn->ensure_grad();
            const double g = on->grad[0];
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t k = 0; k < V; ++k) {
                    const double q =
                        uni +
                        (k == static_cast<std::size_t>(gold[t]) ? 1.0 - eps : 0.0);
                    const double p = pn->data[t * V + k];
                    if (p > kProbFloor) pn->grad[t * V + k] -= g * q / p;
                }
        });
    }
    return out;
}

}  // namespace nct
