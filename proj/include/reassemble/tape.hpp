#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "reassemble/common.hpp"

namespace reassemble::nn {

using Mat = Eigen::MatrixXd;

/// Live activation bytes across all tapes, for the memory instrumentation.
struct MemoryStats {
    static inline size_t current = 0;
    static inline size_t peak = 0;

    static void add(size_t bytes) {
        current += bytes;
        peak = std::max(peak, current);
    }
    static void sub(size_t bytes) { current -= std::min(bytes, current); }
    static void reset_peak() { peak = current; }
};

struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

/// Reverse-mode autodiff over dense matrices. Nodes are created in forward
/// order; backward() walks them in reverse. With gradients disabled the tape
/// still records values so intermediate results can be explicitly released.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    ~Tape() {
        for (const Node& n : nodes_) MemoryStats::sub(bytes_of(n.value) + bytes_of(n.grad));
    }

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Var push(Mat value, std::function<void(Tape&)> backward = nullptr) {
        MemoryStats::add(bytes_of(value));
        Node n;
        n.value = std::move(value);
        if (grad_enabled_) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{int(nodes_.size()) - 1};
    }

    Var constant(Mat value) { return push(std::move(value), nullptr); }

    const Mat& val(Var v) const { return nodes_[size_t(v.idx)].value; }
    Mat& val_mut(Var v) { return nodes_[size_t(v.idx)].value; }

    const Mat& grad(Var v) const { return nodes_[size_t(v.idx)].grad; }
    bool has_grad(Var v) const { return nodes_[size_t(v.idx)].grad.size() > 0; }

    void accumulate(Var v, const Mat& g) {
        Node& n = nodes_[size_t(v.idx)];
        if (n.grad.size() == 0) {
            MemoryStats::add(bytes_of(g));
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    void backward(Var loss) {
        if (!grad_enabled_) throw Error("backward() on a no-grad tape");
        const Mat& lv = val(loss);
        if (lv.rows() != 1 || lv.cols() != 1) throw Error("backward() expects a scalar loss");
        accumulate(loss, Mat::Ones(1, 1));
        for (int i = loss.idx; i >= 0; --i) {
            Node& n = nodes_[size_t(i)];
            if (n.backward && n.grad.size() > 0) n.backward(*this);
        }
    }

    /// Frees a node's value storage. Only valid on no-grad tapes where the
    /// caller knows the value is no longer needed.
    void release(Var v) {
        if (grad_enabled_) return;
        Node& n = nodes_[size_t(v.idx)];
        MemoryStats::sub(bytes_of(n.value));
        n.value = Mat();
    }

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void(Tape&)> backward;
    };

    static size_t bytes_of(const Mat& m) { return size_t(m.size()) * sizeof(double); }

    std::deque<Node> nodes_;
    bool grad_enabled_;
};

// ---------------------------------------------------------------------------
// Elementwise and arithmetic ops
// ---------------------------------------------------------------------------

inline Var add(Tape& t, Var a, Var b) {
    Mat v = t.val(a) + t.val(b);
    return t.push(std::move(v), [a, b, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& g = tp.grad(out);
        tp.accumulate(a, g);
        tp.accumulate(b, g);
    });
}

inline Var sub(Tape& t, Var a, Var b) {
    Mat v = t.val(a) - t.val(b);
    return t.push(std::move(v), [a, b, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& g = tp.grad(out);
        tp.accumulate(a, g);
        tp.accumulate(b, -g);
    });
}

/// a [m x n] + row vector b [1 x n], broadcast over rows.
inline Var add_rowvec(Tape& t, Var a, Var b) {
    Mat v = t.val(a).rowwise() + t.val(b).row(0);
    return t.push(std::move(v), [a, b, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& g = tp.grad(out);
        tp.accumulate(a, g);
        tp.accumulate(b, g.colwise().sum());
    });
}

inline Var scale(Tape& t, Var a, double s) {
    Mat v = t.val(a) * s;
    return t.push(std::move(v), [a, s, out = Var{int(t.node_count())}](Tape& tp) {
        tp.accumulate(a, tp.grad(out) * s);
    });
}

inline Var mul(Tape& t, Var a, Var b) {
    Mat v = t.val(a).cwiseProduct(t.val(b));
    return t.push(std::move(v), [a, b, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& g = tp.grad(out);
        tp.accumulate(a, g.cwiseProduct(tp.val(b)));
        tp.accumulate(b, g.cwiseProduct(tp.val(a)));
    });
}

/// Row-scaling: a [m x n] with per-row factors g [m x 1].
inline Var mul_colvec(Tape& t, Var a, Var g) {
    Mat v = t.val(a).array().colwise() * t.val(g).col(0).array();
    return t.push(std::move(v), [a, g, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& up = tp.grad(out);
        Mat da = up.array().colwise() * tp.val(g).col(0).array();
        tp.accumulate(a, da);
        Mat dg = up.cwiseProduct(tp.val(a)).rowwise().sum();
        tp.accumulate(g, dg);
    });
}

inline Var matmul(Tape& t, Var a, Var b) {
    Mat v = t.val(a) * t.val(b);
    return t.push(std::move(v), [a, b, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& g = tp.grad(out);
        tp.accumulate(a, g * tp.val(b).transpose());
        tp.accumulate(b, tp.val(a).transpose() * g);
    });
}

/// a * b^T
inline Var matmul_nt(Tape& t, Var a, Var b) {
    Mat v = t.val(a) * t.val(b).transpose();
    return t.push(std::move(v), [a, b, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& g = tp.grad(out);
        tp.accumulate(a, g * tp.val(b));
        tp.accumulate(b, g.transpose() * tp.val(a));
    });
}

inline Var tanh_op(Tape& t, Var a) {
    Mat v = t.val(a).array().tanh();
    return t.push(std::move(v), [a, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& y = tp.val(out);
        Mat da = tp.grad(out).cwiseProduct((1.0 - y.array().square()).matrix());
        tp.accumulate(a, da);
    });
}

inline Var sigmoid_op(Tape& t, Var a) {
    Mat v = (1.0 / (1.0 + (-t.val(a)).array().exp())).matrix();
    return t.push(std::move(v), [a, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& y = tp.val(out);
        Mat da = tp.grad(out).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
        tp.accumulate(a, da);
    });
}

inline Var gelu(Tape& t, Var a) {
    const double c = std::sqrt(2.0 / kPi);
    const Mat& x = t.val(a);
    Mat u = (c * (x.array() + 0.044715 * x.array().cube())).matrix();
    Mat v = (0.5 * x.array() * (1.0 + u.array().tanh())).matrix();
    return t.push(std::move(v), [a, c, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& x = tp.val(a);
        Eigen::ArrayXXd u = c * (x.array() + 0.044715 * x.array().cube());
        Eigen::ArrayXXd th = u.tanh();
        Eigen::ArrayXXd du = c * (1.0 + 3.0 * 0.044715 * x.array().square());
        Eigen::ArrayXXd d = 0.5 * (1.0 + th) + 0.5 * x.array() * (1.0 - th.square()) * du;
        tp.accumulate(a, (tp.grad(out).array() * d).matrix());
    });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Var slice_cols(Tape& t, Var a, int start, int n) {
    Mat v = t.val(a).middleCols(start, n);
    return t.push(std::move(v), [a, start, n, out = Var{int(t.node_count())}](Tape& tp) {
        Mat da = Mat::Zero(tp.val(a).rows(), tp.val(a).cols());
        da.middleCols(start, n) = tp.grad(out);
        tp.accumulate(a, da);
    });
}

inline Var gather_rows(Tape& t, Var a, std::vector<int> indices) {
    const Mat& src = t.val(a);
    Mat v(indices.size(), src.cols());
    for (size_t i = 0; i < indices.size(); ++i) v.row(i) = src.row(indices[i]);
    return t.push(std::move(v), [a, idx = std::move(indices), out = Var{int(t.node_count())}](Tape& tp) {
        Mat da = Mat::Zero(tp.val(a).rows(), tp.val(a).cols());
        const Mat& g = tp.grad(out);
        for (size_t i = 0; i < idx.size(); ++i) da.row(idx[i]) += g.row(i);
        tp.accumulate(a, da);
    });
}

inline Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    int rows = int(t.val(parts.front()).rows());
    int cols = 0;
    for (Var p : parts) cols += int(t.val(p).cols());
    Mat v(rows, cols);
    int at = 0;
    for (Var p : parts) {
        int w = int(t.val(p).cols());
        v.middleCols(at, w) = t.val(p);
        at += w;
    }
    return t.push(std::move(v), [parts, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& g = tp.grad(out);
        int at = 0;
        for (Var p : parts) {
            int w = int(tp.val(p).cols());
            tp.accumulate(p, g.middleCols(at, w));
            at += w;
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions and scalar ops
// ---------------------------------------------------------------------------

inline Var sum_all(Tape& t, Var a) {
    Mat v(1, 1);
    v(0, 0) = t.val(a).sum();
    return t.push(std::move(v), [a, out = Var{int(t.node_count())}](Tape& tp) {
        double g = tp.grad(out)(0, 0);
        tp.accumulate(a, Mat::Constant(tp.val(a).rows(), tp.val(a).cols(), g));
    });
}

inline Var mean_all(Tape& t, Var a) { return scale(t, sum_all(t, a), 1.0 / double(t.val(a).size())); }

inline Var sum_squares(Tape& t, Var a) {
    Mat v(1, 1);
    v(0, 0) = t.val(a).squaredNorm();
    return t.push(std::move(v), [a, out = Var{int(t.node_count())}](Tape& tp) {
        tp.accumulate(a, 2.0 * tp.grad(out)(0, 0) * tp.val(a));
    });
}

inline Var sqrt_scalar(Tape& t, Var a) {
    Mat v(1, 1);
    v(0, 0) = std::sqrt(t.val(a)(0, 0));
    return t.push(std::move(v), [a, out = Var{int(t.node_count())}](Tape& tp) {
        double y = tp.val(out)(0, 0);
        Mat da(1, 1);
        da(0, 0) = y > 0 ? tp.grad(out)(0, 0) * 0.5 / y : 0.0;
        tp.accumulate(a, da);
    });
}

/// a * s with s a tape scalar (1 x 1).
inline Var mul_scalar_var(Tape& t, Var a, Var s) {
    Mat v = t.val(a) * t.val(s)(0, 0);
    return t.push(std::move(v), [a, s, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& g = tp.grad(out);
        tp.accumulate(a, g * tp.val(s)(0, 0));
        Mat ds(1, 1);
        ds(0, 0) = g.cwiseProduct(tp.val(a)).sum();
        tp.accumulate(s, ds);
    });
}

/// a / s with s a tape scalar (1 x 1).
inline Var div_scalar_var(Tape& t, Var a, Var s) {
    double sv = t.val(s)(0, 0);
    Mat v = t.val(a) / sv;
    return t.push(std::move(v), [a, s, out = Var{int(t.node_count())}](Tape& tp) {
        double sv = tp.val(s)(0, 0);
        const Mat& g = tp.grad(out);
        tp.accumulate(a, g / sv);
        Mat ds(1, 1);
        ds(0, 0) = -g.cwiseProduct(tp.val(a)).sum() / (sv * sv);
        tp.accumulate(s, ds);
    });
}

// ---------------------------------------------------------------------------
// Softmax, layer norm
// ---------------------------------------------------------------------------

/// Row-wise softmax restricted to entries where allowed != 0. Disallowed
/// entries are exactly zero in the output; rows with no allowed entries stay
/// all-zero.
inline Var softmax_rows_masked(Tape& t, Var a, const Mat& allowed) {
    const Mat& x = t.val(a);
    Mat y = Mat::Zero(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
        double mx = std::numeric_limits<double>::lowest();
        for (int c = 0; c < x.cols(); ++c)
            if (allowed(r, c) != 0) mx = std::max(mx, x(r, c));
        if (mx == std::numeric_limits<double>::lowest()) continue;
        double denom = 0.0;
        for (int c = 0; c < x.cols(); ++c)
            if (allowed(r, c) != 0) denom += std::exp(x(r, c) - mx);
        for (int c = 0; c < x.cols(); ++c)
            if (allowed(r, c) != 0) y(r, c) = std::exp(x(r, c) - mx) / denom;
    }
    return t.push(std::move(y), [a, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& y = tp.val(out);
        const Mat& g = tp.grad(out);
        // dx = y .* (g - rowsum(g .* y)); masked entries have y == 0.
        Mat gy = g.cwiseProduct(y);
        Eigen::VectorXd rowsum = gy.rowwise().sum();
        Mat dx = y.cwiseProduct(g - rowsum.replicate(1, y.cols()));
        tp.accumulate(a, dx);
    });
}

inline Var layernorm_rows(Tape& t, Var a, Var gamma, Var beta, double eps = 1e-5) {
    const Mat& x = t.val(a);
    const int n = int(x.cols());
    Eigen::VectorXd mean = x.rowwise().mean();
    Mat centered = x - mean.replicate(1, n);
    Eigen::VectorXd var = centered.array().square().rowwise().mean();
    Eigen::VectorXd inv_std = (var.array() + eps).rsqrt();
    Mat norm = centered.array().colwise() * inv_std.array();
    Mat v = (norm.array().rowwise() * t.val(gamma).row(0).array()).rowwise() +
            t.val(beta).row(0).array();
    return t.push(std::move(v), [a, gamma, beta, eps, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& x = tp.val(a);
        const int n = int(x.cols());
        Eigen::VectorXd mean = x.rowwise().mean();
        Mat centered = x - mean.replicate(1, n);
        Eigen::VectorXd var = centered.array().square().rowwise().mean();
        Eigen::VectorXd inv_std = (var.array() + eps).rsqrt();
        Mat norm = centered.array().colwise() * inv_std.array();

        const Mat& g = tp.grad(out);
        tp.accumulate(gamma, g.cwiseProduct(norm).colwise().sum());
        tp.accumulate(beta, g.colwise().sum());

        Mat gg = g.array().rowwise() * tp.val(gamma).row(0).array();  // dL/dnorm
        Eigen::VectorXd m1 = gg.rowwise().mean();
        Eigen::VectorXd m2 = gg.cwiseProduct(norm).rowwise().mean();
        Mat dx = (gg - m1.replicate(1, n) - norm.cwiseProduct(m2.replicate(1, n)))
                     .array()
                     .colwise() *
                 inv_std.array();
        tp.accumulate(a, dx);
    });
}

// ---------------------------------------------------------------------------
// Polygon measures as tape ops (for selection pretraining)
// ---------------------------------------------------------------------------

/// Signed shoelace area of the closed polygon whose vertices are the rows of
/// P [k x 2].
inline Var signed_area_op(Tape& t, Var p) {
    const Mat& pts = t.val(p);
    const int k = int(pts.rows());
    double area = 0.0;
    for (int i = 0; i < k; ++i) {
        int j = (i + 1) % k;
        area += pts(i, 0) * pts(j, 1) - pts(j, 0) * pts(i, 1);
    }
    Mat v(1, 1);
    v(0, 0) = 0.5 * area;
    return t.push(std::move(v), [p, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& pts = tp.val(p);
        const int k = int(pts.rows());
        double g = tp.grad(out)(0, 0);
        Mat dp = Mat::Zero(k, 2);
        for (int i = 0; i < k; ++i) {
            int prev = (i + k - 1) % k, next = (i + 1) % k;
            dp(i, 0) = 0.5 * (pts(next, 1) - pts(prev, 1)) * g;
            dp(i, 1) = 0.5 * (pts(prev, 0) - pts(next, 0)) * g;
        }
        tp.accumulate(p, dp);
    });
}

/// Perimeter of the closed polygon P [k x 2].
inline Var perimeter_op(Tape& t, Var p) {
    const Mat& pts = t.val(p);
    const int k = int(pts.rows());
    double per = 0.0;
    for (int i = 0; i < k; ++i) {
        int j = (i + 1) % k;
        per += std::hypot(pts(j, 0) - pts(i, 0), pts(j, 1) - pts(i, 1));
    }
    Mat v(1, 1);
    v(0, 0) = per;
    return t.push(std::move(v), [p, out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& pts = tp.val(p);
        const int k = int(pts.rows());
        double g = tp.grad(out)(0, 0);
        Mat dp = Mat::Zero(k, 2);
        for (int i = 0; i < k; ++i) {
            int j = (i + 1) % k;
            double ex = pts(j, 0) - pts(i, 0);
            double ey = pts(j, 1) - pts(i, 1);
            double len = std::hypot(ex, ey);
            if (len < 1e-12) continue;
            dp(j, 0) += g * ex / len;
            dp(j, 1) += g * ey / len;
            dp(i, 0) -= g * ex / len;
            dp(i, 1) -= g * ey / len;
        }
        tp.accumulate(p, dp);
    });
}

}  // namespace reassemble::nn
