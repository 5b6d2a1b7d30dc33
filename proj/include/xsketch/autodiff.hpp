#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "xsketch/common.hpp"

// Reverse-mode autodiff over dynamically sized Eigen matrices.
//
// A Tape owns a flat list of nodes created in evaluation order; backward()
// walks them in reverse, so no explicit topological sort is needed. Model
// parameters live outside the tape (Param); leaf() binds them for one pass
// and harvest() accumulates node grads back into Param::grad, optionally
// filtered by parameter group (used by the factorization loss, which updates
// generator parameters only).
namespace xsketch::ad {

struct Param {
    std::string name;
    Mat value;
    Mat grad;
    Mat m, v;  // Adam state

    Param() = default;
    Param(std::string n, Mat val)
        : name(std::move(n)),
          value(std::move(val)),
          grad(Mat::Zero(value.rows(), value.cols())),
          m(Mat::Zero(value.rows(), value.cols())),
          v(Mat::Zero(value.rows(), value.cols())) {}

    // group = name up to the first '.', e.g. "dec_chd.gru.Wr" -> "dec_chd"
    std::string group() const {
        auto pos = name.find('.');
        return pos == std::string::npos ? name : name.substr(0, pos);
    }
    size_t count() const { return static_cast<size_t>(value.size()); }
    void zero_grad() { grad.setZero(); }
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    int idx = -1;
};

class Tape {
public:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void(Tape&)> back;
        bool needs_grad = false;
    };

    int next_index() const { return static_cast<int>(nodes_.size()); }

    Var push(Mat value, bool needs_grad, std::function<void(Tape&)> back = nullptr) {
        Node n;
        n.grad = Mat::Zero(value.rows(), value.cols());
        n.value = std::move(value);
        n.back = std::move(back);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    Var constant(Mat value) { return push(std::move(value), false); }

    Var leaf(Param& p) {
        Var v = push(p.value, true);
        bindings_.emplace_back(v.idx, &p);
        return v;
    }

    const Mat& val(int i) const { return nodes_[i].value; }
    const Mat& val(Var v) const { return nodes_[v.idx].value; }
    Mat& grad(int i) { return nodes_[i].grad; }
    Mat& grad(Var v) { return nodes_[v.idx].grad; }
    bool needs_grad(Var v) const { return nodes_[v.idx].needs_grad; }
    bool needs_grad(int i) const { return nodes_[i].needs_grad; }

    // Reverse sweep from a 1x1 loss node. Node grads accumulate; call
    // zero_grads() before a second backward pass on the same tape.
    void backward(Var loss) {
        if (val(loss).rows() != 1 || val(loss).cols() != 1)
            throw std::invalid_argument("backward: loss must be 1x1");
        nodes_[loss.idx].grad(0, 0) += 1.0;
        for (int i = loss.idx; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.needs_grad && n.back) n.back(*this);
        }
    }

    // param.grad += scale * node.grad for every bound leaf accepted by filter
    void harvest(double scale = 1.0,
                 const std::function<bool(const Param&)>& filter = nullptr) {
        for (auto& [idx, p] : bindings_) {
            if (filter && !filter(*p)) continue;
            p->grad += scale * nodes_[idx].grad;
        }
    }

    void zero_grads() {
        for (auto& n : nodes_) n.grad.setZero();
    }

    void reset() {
        nodes_.clear();
        bindings_.clear();
    }

    size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
    std::vector<std::pair<int, Param*>> bindings_;
};

namespace detail {
inline Tape& tape_of(Var a) { return *a.tape; }
inline void check_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}
}  // namespace detail

// ---- arithmetic ------------------------------------------------------------

inline Var add(Var a, Var b) {
    Tape& t = detail::tape_of(a);
    detail::check_shape(t.val(a), t.val(b), "add");
    const int oi = t.next_index();
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return t.push(t.val(a) + t.val(b), ng, [ai = a.idx, bi = b.idx, oi](Tape& tp) {
        if (tp.needs_grad(ai)) tp.grad(ai) += tp.grad(oi);
        if (tp.needs_grad(bi)) tp.grad(bi) += tp.grad(oi);
    });
}

inline Var sub(Var a, Var b) {
    Tape& t = detail::tape_of(a);
    detail::check_shape(t.val(a), t.val(b), "sub");
    const int oi = t.next_index();
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return t.push(t.val(a) - t.val(b), ng, [ai = a.idx, bi = b.idx, oi](Tape& tp) {
        if (tp.needs_grad(ai)) tp.grad(ai) += tp.grad(oi);
        if (tp.needs_grad(bi)) tp.grad(bi) -= tp.grad(oi);
    });
}

// broadcast a 1xD row (bias) over all rows of a
inline Var add_rowvec(Var a, Var b) {
    Tape& t = detail::tape_of(a);
    if (t.val(b).rows() != 1 || t.val(b).cols() != t.val(a).cols())
        throw std::invalid_argument("add_rowvec: bias must be 1 x cols(a)");
    const int oi = t.next_index();
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    Mat out = t.val(a);
    out.rowwise() += t.val(b).row(0);
    return t.push(std::move(out), ng, [ai = a.idx, bi = b.idx, oi](Tape& tp) {
        if (tp.needs_grad(ai)) tp.grad(ai) += tp.grad(oi);
        if (tp.needs_grad(bi)) tp.grad(bi) += tp.grad(oi).colwise().sum();
    });
}

inline Var mul(Var a, Var b) {  // elementwise
    Tape& t = detail::tape_of(a);
    detail::check_shape(t.val(a), t.val(b), "mul");
    const int oi = t.next_index();
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return t.push(t.val(a).cwiseProduct(t.val(b)), ng, [ai = a.idx, bi = b.idx, oi](Tape& tp) {
        if (tp.needs_grad(ai)) tp.grad(ai) += tp.grad(oi).cwiseProduct(tp.val(bi));
        if (tp.needs_grad(bi)) tp.grad(bi) += tp.grad(oi).cwiseProduct(tp.val(ai));
    });
}

inline Var div(Var a, Var b) {  // elementwise
    Tape& t = detail::tape_of(a);
    detail::check_shape(t.val(a), t.val(b), "div");
    const int oi = t.next_index();
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return t.push(t.val(a).cwiseQuotient(t.val(b)), ng, [ai = a.idx, bi = b.idx, oi](Tape& tp) {
        if (tp.needs_grad(ai)) tp.grad(ai) += tp.grad(oi).cwiseQuotient(tp.val(bi));
        if (tp.needs_grad(bi))
            tp.grad(bi) -= tp.grad(oi).cwiseProduct(tp.val(oi)).cwiseQuotient(tp.val(bi));
    });
}

inline Var matmul(Var a, Var b) {
    Tape& t = detail::tape_of(a);
    if (t.val(a).cols() != t.val(b).rows()) throw std::invalid_argument("matmul: inner dims");
    const int oi = t.next_index();
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return t.push(t.val(a) * t.val(b), ng, [ai = a.idx, bi = b.idx, oi](Tape& tp) {
        if (tp.needs_grad(ai)) tp.grad(ai) += tp.grad(oi) * tp.val(bi).transpose();
        if (tp.needs_grad(bi)) tp.grad(bi) += tp.val(ai).transpose() * tp.grad(oi);
    });
}

inline Var scale(Var a, double s) {
    Tape& t = detail::tape_of(a);
    const int oi = t.next_index();
    return t.push(t.val(a) * s, t.needs_grad(a), [ai = a.idx, oi, s](Tape& tp) {
        if (tp.needs_grad(ai)) tp.grad(ai) += s * tp.grad(oi);
    });
}

inline Var add_scalar(Var a, double s) {
    Tape& t = detail::tape_of(a);
    const int oi = t.next_index();
    return t.push(t.val(a).array() + s, t.needs_grad(a), [ai = a.idx, oi](Tape& tp) {
        if (tp.needs_grad(ai)) tp.grad(ai) += tp.grad(oi);
    });
}

// ---- nonlinearities --------------------------------------------------------

inline Var tanh_(Var a) {
    Tape& t = detail::tape_of(a);
    const int oi = t.next_index();
    return t.push(t.val(a).array().tanh(), t.needs_grad(a), [ai = a.idx, oi](Tape& tp) {
        if (!tp.needs_grad(ai)) return;
        tp.grad(ai).array() += tp.grad(oi).array() * (1.0 - tp.val(oi).array().square());
    });
}

inline double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
    Tape& t = detail::tape_of(a);
    const int oi = t.next_index();
    return t.push(t.val(a).unaryExpr([](double x) { return sigmoid_scalar(x); }),
                  t.needs_grad(a), [ai = a.idx, oi](Tape& tp) {
                      if (!tp.needs_grad(ai)) return;
                      tp.grad(ai).array() +=
                          tp.grad(oi).array() * tp.val(oi).array() * (1.0 - tp.val(oi).array());
                  });
}

inline double softplus_scalar(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline Var softplus(Var a) {
    Tape& t = detail::tape_of(a);
    const int oi = t.next_index();
    return t.push(t.val(a).unaryExpr([](double x) { return softplus_scalar(x); }),
                  t.needs_grad(a), [ai = a.idx, oi](Tape& tp) {
                      if (!tp.needs_grad(ai)) return;
                      tp.grad(ai) += tp.grad(oi).cwiseProduct(
                          tp.val(ai).unaryExpr([](double x) { return sigmoid_scalar(x); }));
                  });
}

inline Var log_(Var a) {  // entries must be > 0
    Tape& t = detail::tape_of(a);
    const int oi = t.next_index();
    return t.push(t.val(a).array().log(), t.needs_grad(a), [ai = a.idx, oi](Tape& tp) {
        if (tp.needs_grad(ai)) tp.grad(ai) += tp.grad(oi).cwiseQuotient(tp.val(ai));
    });
}

inline Var square(Var a) {
    Tape& t = detail::tape_of(a);
    const int oi = t.next_index();
    return t.push(t.val(a).array().square(), t.needs_grad(a), [ai = a.idx, oi](Tape& tp) {
        if (tp.needs_grad(ai)) tp.grad(ai) += 2.0 * tp.grad(oi).cwiseProduct(tp.val(ai));
    });
}

// ---- reductions ------------------------------------------------------------

inline Var sum(Var a) {
    Tape& t = detail::tape_of(a);
    const int oi = t.next_index();
    Mat out(1, 1);
    out(0, 0) = t.val(a).sum();
    return t.push(std::move(out), t.needs_grad(a), [ai = a.idx, oi](Tape& tp) {
        if (tp.needs_grad(ai)) tp.grad(ai).array() += tp.grad(oi)(0, 0);
    });
}

inline Var mean(Var a) {
    Tape& t = detail::tape_of(a);
    const double n = static_cast<double>(t.val(a).size());
    const int oi = t.next_index();
    Mat out(1, 1);
    out(0, 0) = t.val(a).mean();
    return t.push(std::move(out), t.needs_grad(a), [ai = a.idx, oi, n](Tape& tp) {
        if (tp.needs_grad(ai)) tp.grad(ai).array() += tp.grad(oi)(0, 0) / n;
    });
}

// mean((a-b)^2) over all entries, fused
inline Var mse(Var a, Var b) {
    Tape& t = detail::tape_of(a);
    detail::check_shape(t.val(a), t.val(b), "mse");
    const double n = static_cast<double>(t.val(a).size());
    const int oi = t.next_index();
    Mat out(1, 1);
    out(0, 0) = (t.val(a) - t.val(b)).squaredNorm() / n;
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return t.push(std::move(out), ng, [ai = a.idx, bi = b.idx, oi, n](Tape& tp) {
        const Mat d = (2.0 * tp.grad(oi)(0, 0) / n) * (tp.val(ai) - tp.val(bi));
        if (tp.needs_grad(ai)) tp.grad(ai) += d;
        if (tp.needs_grad(bi)) tp.grad(bi) -= d;
    });
}

// ---- slicing / assembly ----------------------------------------------------

inline Var rows(Var a, int r0, int n) {
    Tape& t = detail::tape_of(a);
    const int oi = t.next_index();
    return t.push(t.val(a).middleRows(r0, n), t.needs_grad(a), [ai = a.idx, oi, r0, n](Tape& tp) {
        if (tp.needs_grad(ai)) tp.grad(ai).middleRows(r0, n) += tp.grad(oi);
    });
}

inline Var row(Var a, int r) { return rows(a, r, 1); }

inline Var cols(Var a, int c0, int n) {
    Tape& t = detail::tape_of(a);
    const int oi = t.next_index();
    return t.push(t.val(a).middleCols(c0, n), t.needs_grad(a), [ai = a.idx, oi, c0, n](Tape& tp) {
        if (tp.needs_grad(ai)) tp.grad(ai).middleCols(c0, n) += tp.grad(oi);
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    Tape& t = detail::tape_of(parts.front());
    Eigen::Index rows_n = t.val(parts[0]).rows(), cols_n = 0;
    bool ng = false;
    for (Var p : parts) {
        cols_n += t.val(p).cols();
        ng = ng || t.needs_grad(p);
    }
    Mat out(rows_n, cols_n);
    Eigen::Index c = 0;
    std::vector<std::pair<int, int>> spans;  // (idx, col offset)
    for (Var p : parts) {
        out.middleCols(c, t.val(p).cols()) = t.val(p);
        spans.emplace_back(p.idx, static_cast<int>(c));
        c += t.val(p).cols();
    }
    const int oi = t.next_index();
    return t.push(std::move(out), ng, [spans, oi](Tape& tp) {
        for (auto [pi, off] : spans) {
            if (!tp.needs_grad(pi)) continue;
            tp.grad(pi) += tp.grad(oi).middleCols(off, tp.val(pi).cols());
        }
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    Tape& t = detail::tape_of(parts.front());
    Eigen::Index cols_n = t.val(parts[0]).cols(), rows_n = 0;
    bool ng = false;
    for (Var p : parts) {
        rows_n += t.val(p).rows();
        ng = ng || t.needs_grad(p);
    }
    Mat out(rows_n, cols_n);
    Eigen::Index r = 0;
    std::vector<std::pair<int, int>> spans;
    for (Var p : parts) {
        out.middleRows(r, t.val(p).rows()) = t.val(p);
        spans.emplace_back(p.idx, static_cast<int>(r));
        r += t.val(p).rows();
    }
    const int oi = t.next_index();
    return t.push(std::move(out), ng, [spans, oi](Tape& tp) {
        for (auto [pi, off] : spans) {
            if (!tp.needs_grad(pi)) continue;
            tp.grad(pi) += tp.grad(oi).middleRows(off, tp.val(pi).rows());
        }
    });
}

// out.row(k) = a.row(indices[k]); used for embedding lookups and subsampling
inline Var gather_rows(Var a, std::vector<int> indices) {
    Tape& t = detail::tape_of(a);
    Mat out(static_cast<Eigen::Index>(indices.size()), t.val(a).cols());
    for (size_t k = 0; k < indices.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = t.val(a).row(indices[k]);
    const int oi = t.next_index();
    return t.push(std::move(out), t.needs_grad(a),
                  [ai = a.idx, oi, idx = std::move(indices)](Tape& tp) {
                      if (!tp.needs_grad(ai)) return;
                      for (size_t k = 0; k < idx.size(); ++k)
                          tp.grad(ai).row(idx[k]) += tp.grad(oi).row(static_cast<Eigen::Index>(k));
                  });
}

// stops gradient flow: value copied, no backward edge
inline Var detach(Var a) {
    Tape& t = detail::tape_of(a);
    return t.constant(t.val(a));
}

// ---- hierarchy ops (Eq-1 style segment kernels) ----------------------------

inline Var segment_mean(Var a, std::vector<int> sizes) {
    Tape& t = detail::tape_of(a);
    Eigen::Index total = 0;
    for (int s : sizes) total += s;
    if (total != t.val(a).rows()) throw std::invalid_argument("segment_mean: partition mismatch");
    Mat out(static_cast<Eigen::Index>(sizes.size()), t.val(a).cols());
    Eigen::Index r = 0;
    for (size_t c = 0; c < sizes.size(); ++c) {
        out.row(static_cast<Eigen::Index>(c)) = t.val(a).middleRows(r, sizes[c]).colwise().mean();
        r += sizes[c];
    }
    const int oi = t.next_index();
    return t.push(std::move(out), t.needs_grad(a),
                  [ai = a.idx, oi, sz = std::move(sizes)](Tape& tp) {
                      if (!tp.needs_grad(ai)) return;
                      Eigen::Index r = 0;
                      for (size_t c = 0; c < sz.size(); ++c) {
                          tp.grad(ai).middleRows(r, sz[c]).rowwise() +=
                              tp.grad(oi).row(static_cast<Eigen::Index>(c)) / sz[c];
                          r += sz[c];
                      }
                  });
}

inline Var segment_broadcast(Var a, std::vector<int> sizes) {
    Tape& t = detail::tape_of(a);
    if (static_cast<size_t>(t.val(a).rows()) != sizes.size())
        throw std::invalid_argument("segment_broadcast: partition mismatch");
    Eigen::Index total = 0;
    for (int s : sizes) total += s;
    Mat out(total, t.val(a).cols());
    Eigen::Index r = 0;
    for (size_t c = 0; c < sizes.size(); ++c) {
        out.middleRows(r, sizes[c]).rowwise() = t.val(a).row(static_cast<Eigen::Index>(c));
        r += sizes[c];
    }
    const int oi = t.next_index();
    return t.push(std::move(out), t.needs_grad(a),
                  [ai = a.idx, oi, sz = std::move(sizes)](Tape& tp) {
                      if (!tp.needs_grad(ai)) return;
                      Eigen::Index r = 0;
                      for (size_t c = 0; c < sz.size(); ++c) {
                          tp.grad(ai).row(static_cast<Eigen::Index>(c)) +=
                              tp.grad(oi).middleRows(r, sz[c]).colwise().sum();
                          r += sz[c];
                      }
                  });
}

// a is S x 1; output D with D(i,j) = a_i - a_j
inline Var pairwise_diff(Var a) {
    Tape& t = detail::tape_of(a);
    if (t.val(a).cols() != 1) throw std::invalid_argument("pairwise_diff: expects column vector");
    const Eigen::Index s = t.val(a).rows();
    Mat out = t.val(a).replicate(1, s) - t.val(a).transpose().replicate(s, 1);
    const int oi = t.next_index();
    return t.push(std::move(out), t.needs_grad(a), [ai = a.idx, oi](Tape& tp) {
        if (!tp.needs_grad(ai)) return;
        tp.grad(ai) += tp.grad(oi).rowwise().sum() - tp.grad(oi).colwise().sum().transpose();
    });
}

// ---- gaussian KL building blocks -------------------------------------------

// sum over entries of KL(N(mu, sigma^2) || N(0, 1)); sigma entrywise > 0
inline Var kl_standard(Var mu, Var sigma) {
    Var s2 = square(sigma);
    Var m2 = square(mu);
    Var inner = add_scalar(add(s2, m2), -1.0);       // sigma^2 + mu^2 - 1
    Var half = scale(sum(inner), 0.5);
    return sub(half, sum(log_(sigma)));              // - sum log sigma
}

// sum over entries of KL(N(mu1, s1^2) || N(mu2, s2^2)), diagonal Gaussians
inline Var kl_diag(Var mu1, Var s1, Var mu2, Var s2) {
    Var log_ratio = sub(sum(log_(s2)), sum(log_(s1)));
    Var num = add(square(s1), square(sub(mu1, mu2)));       // s1^2 + (mu1-mu2)^2
    Var quad = scale(sum(div(num, square(s2))), 0.5);
    const double half_n = 0.5 * static_cast<double>(mu1.tape->val(mu1).size());
    return add_scalar(add(log_ratio, quad), -half_n);
}

}  // namespace xsketch::ad
